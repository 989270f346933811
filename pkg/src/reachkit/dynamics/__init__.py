"""Differentiable discrete-time models and rollout machinery."""
from reachkit.dynamics.base import (DynamicsModel, ParamTuple, PropagationError, Trajectory,
                                    rollout, rollout_gradient)
from reachkit.dynamics.linear import AdditiveLinear, DoubleIntegrator
from reachkit.dynamics.mlp import MlpResidual, MlpWeights
from reachkit.dynamics.spacecraft import PlanarSpacecraft, Spacecraft13D

MODELS = {
    "additive_linear": AdditiveLinear,
    "double_integrator": DoubleIntegrator,
    "mlp_residual": MlpResidual,
    "spacecraft13": Spacecraft13D,
    "planar_spacecraft": PlanarSpacecraft,
}

__all__ = ["DynamicsModel", "ParamTuple", "PropagationError", "Trajectory", "rollout",
           "rollout_gradient", "AdditiveLinear", "DoubleIntegrator", "MlpResidual",
           "MlpWeights", "PlanarSpacecraft", "Spacecraft13D", "MODELS"]
