"""robUP!: adversarial refinement of randUP particles by projected gradient ascent."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from reachkit.dynamics.base import DynamicsModel, ParamTuple, Trajectory, rollout, rollout_gradient
from reachkit.geometry import Ellipsoid, project_box, project_ellipsoid
from reachkit.randup import ReachEstimate, SamplerConfig, UncertaintySpec, propagate, sample_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdversarialConfig:
    """Ascent step size, number of sweeps and covariance regulariser."""

    step_size: float = 1.0
    n_adv: int = 1
    regularizer: float = 1e-8

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if int(self.n_adv) < 1:
            raise ValueError("n_adv must be >= 1")
        if self.regularizer < 0:
            raise ValueError("regularizer must be >= 0")


@dataclass(frozen=True)
class SpreadMetricState:
    """Per-timestep particle means ``(N, n)`` and inverse covariances ``(N, n, n)``."""

    centers: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_states(cls, states: np.ndarray, regularizer: float = 1e-8) -> "SpreadMetricState":
        """Build from particle states ``(M, N + 1, n)``; timesteps ``1..N`` are used."""
        states = np.asarray(states, dtype=float)
        if states.shape[0] < 2:
            raise ValueError("spread metric needs at least 2 particles")
        xs = states[:, 1:, :]
        centers = xs.mean(axis=0)
        dev = xs - centers
        cov = np.einsum("mki,mkj->kij", dev, dev) / (xs.shape[0] - 1)
        n = cov.shape[-1]
        scale = np.trace(cov, axis1=1, axis2=2) / n + 1e-30
        cov = cov + regularizer * scale[:, None, None] * np.eye(n)
        weights = np.linalg.inv(cov)
        return cls(centers, 0.5 * (weights + np.swapaxes(weights, 1, 2)))

    @property
    def horizon(self) -> int:
        return self.centers.shape[0]


def _states(traj) -> np.ndarray:
    return traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)


def spread_metric(state: SpreadMetricState, traj) -> np.ndarray:
    """Mean squared Mahalanobis distance of ``x_1..x_N`` to the particle centres."""
    xs = _states(traj)
    if xs.shape[-2:] != (state.horizon + 1, state.centers.shape[1]):
        raise ValueError(f"trajectory shape {xs.shape[-2:]} does not match metric state")
    dev = xs[..., 1:, :] - state.centers
    return np.einsum("...ki,kij,...kj->...", dev, state.weights, dev) / state.horizon


def spread_metric_gradient(model: DynamicsModel, state: SpreadMetricState, z: ParamTuple,
                           trajectory: Optional[Trajectory] = None) -> ParamTuple:
    """Gradient of :func:`spread_metric` with respect to every block of ``z``."""
    traj = rollout(model, z, state.horizon) if trajectory is None else trajectory
    dev = traj.states[..., 1:, :] - state.centers
    seeds = (2.0 / state.horizon) * np.einsum("kij,...kj->...ki", state.weights, dev)
    return rollout_gradient(model, z, seeds, state.horizon, trajectory=traj)


def project_params(z: ParamTuple, spec: UncertaintySpec) -> ParamTuple:
    """Euclidean projection onto ``Z``; it factorises over the product blocks."""
    if isinstance(spec.x0_set, Ellipsoid):
        x0 = project_ellipsoid(z.x0, spec.x0_set)
    else:
        x0 = project_box(z.x0, spec.x0_set)
    lo = np.stack([s.lower for s in spec.control_sets])
    hi = np.stack([s.upper for s in spec.control_sets])
    controls = np.clip(z.controls, lo, hi)
    theta = project_box(z.theta, spec.theta_set) if spec.theta_set.dim else z.theta.copy()
    w = project_box(z.disturbances, spec.disturbance_set) if spec.disturbance_set.dim \
        else z.disturbances.copy()
    return ParamTuple(x0, controls, theta, w)


def _clamped_fraction(stepped: ParamTuple, projected: ParamTuple) -> float:
    a, b = stepped.flatten(), projected.flatten()
    if a.size == 0:
        return 0.0
    return float(np.mean(np.abs(a - b) > 1e-12))


def rob_up(model: DynamicsModel, spec: UncertaintySpec, cfg: SamplerConfig,
           adv: AdversarialConfig = AdversarialConfig(),
           hull_dims: Optional[Sequence[int]] = None,
           initial: Optional[ParamTuple] = None) -> ReachEstimate:
    """randUP followed by ``n_adv`` projected-gradient-ascent sweeps.

    Each sweep recomputes centres and inverse covariances from every
    particle accumulated so far, moves the ``M`` live tuples one step along
    the metric gradient, projects them back onto ``Z``, re-propagates and
    appends the new states. The returned estimate holds ``M * (n_adv + 1)``
    particles; ``estimate.diagnostics`` records one dict per sweep.
    """
    spec.check_model(model)
    if cfg.n_particles < 2:
        raise ValueError("robUP! needs at least 2 particles")
    z = sample_params(spec, cfg) if initial is None else initial
    traj = propagate(model, z, spec.horizon)
    all_states = [traj.states]
    all_params = [z]
    diagnostics = []
    for sweep in range(int(adv.n_adv)):
        state = SpreadMetricState.from_states(np.concatenate(all_states, axis=0), adv.regularizer)
        grad = spread_metric_gradient(model, state, z, trajectory=traj)
        stepped = z.map(lambda a, g: a + adv.step_size * g, grad)
        z_new = project_params(stepped, spec)
        new_traj = rollout(model, z_new, spec.horizon, on_nonfinite="keep")
        failed = ~np.all(np.isfinite(new_traj.states), axis=(1, 2))
        if failed.any():
            logger.warning("robUP! sweep %d: %d particles failed to propagate; reverting",
                           sweep, int(failed.sum()))
            z_new = z_new.map(lambda new, old: np.where(
                failed.reshape((-1,) + (1,) * (new.ndim - 1)), old, new), z)
            states = np.where(failed[:, None, None], traj.states, new_traj.states)
            new_traj = Trajectory(states)
        diagnostics.append({
            "sweep": sweep + 1,
            "mean_metric": float(np.mean(spread_metric(state, new_traj))),
            "mean_metric_before": float(np.mean(spread_metric(state, traj))),
            "clamped_fraction": _clamped_fraction(stepped, z_new),
            "failed": int(failed.sum()),
        })
        z, traj = z_new, new_traj
        all_states.append(traj.states)
        all_params.append(z)
    est = ReachEstimate(np.concatenate(all_states, axis=0), ParamTuple.concatenate(all_params),
                        hull_dims=hull_dims, method="robup")
    est.diagnostics = diagnostics
    return est
