"""Estimator-style wrappers (``fit`` / ``predict`` / ``score``) around the reach methods.

``fit`` takes an :class:`~reachkit.randup.UncertaintySpec` rather than a
data matrix; ``predict`` answers membership queries for states at a
timestep and ``score`` returns the coverage ratio against a reference set.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from reachkit.geometry import Ellipsoid, box_to_ellipsoid
from reachkit.lipschitz import LipschitzModelInfo, lipschitz_propagate
from reachkit.randup import Beta, SamplerConfig, UncertaintySpec, coverage, rand_up
from reachkit.robup import AdversarialConfig, rob_up
from reachkit.utils.validation import check_points


class RandUP(BaseEstimator):
    """Sampling-based reachable-set estimator.

    Args:
        model: dynamics model.
        n_particles: number of i.i.d. parameter samples.
        seed: sampling seed.
        distribution: ``"uniform"`` or ``(alpha, beta)`` for a Beta law.
        hull_dims: state coordinates used for the hulls.
    """

    def __init__(self, model=None, n_particles: int = 1000, seed: int = 0,
                 distribution="uniform", hull_dims: Optional[Sequence[int]] = None):
        self.model = model
        self.n_particles = n_particles
        self.seed = seed
        self.distribution = distribution
        self.hull_dims = hull_dims

    def _sampler(self) -> SamplerConfig:
        dist = self.distribution
        if isinstance(dist, (tuple, list)):
            dist = Beta(*dist)
        return SamplerConfig(self.n_particles, self.seed, dist)

    def _run(self, spec):
        return rand_up(self.model, spec, self._sampler(), hull_dims=self.hull_dims)

    def fit(self, spec: UncertaintySpec, y=None):
        """Propagate particles for ``spec``.

        Args:
            spec: parameter set, with controls pinned or boxed.
            y: ignored.

        Returns:
            self
        """
        if self.model is None:
            raise ValueError("model must be set before fit")
        if not isinstance(spec, UncertaintySpec):
            raise TypeError("fit expects an UncertaintySpec")
        self.estimate_ = self._run(spec)
        self.horizon_ = spec.horizon
        self.n_features_in_ = self.model.n
        return self

    def _k(self, k):
        return self.horizon_ if k is None else int(k)

    def predict(self, X, k: Optional[int] = None) -> np.ndarray:
        """Membership of the rows of ``X`` in the hull at timestep ``k`` (default ``N``)."""
        check_is_fitted(self, "estimate_")
        dims = self.estimate_._dims(None)
        X = check_points(X, len(dims), name="X")
        return np.asarray(self.estimate_.contains(X, self._k(k)))

    def score(self, true_set, k: Optional[int] = None) -> float:
        """Coverage ``vol(hull_k) / vol(true_set)``."""
        check_is_fitted(self, "estimate_")
        return coverage(self.estimate_.hull(self._k(k)), true_set)


class RobUP(RandUP):
    """randUP followed by adversarial spread-maximising sweeps.

    Args:
        step_size: ascent step.
        n_adv: number of sweeps.
        regularizer: relative covariance regulariser.
    """

    def __init__(self, model=None, n_particles: int = 1000, seed: int = 0, distribution="uniform",
                 hull_dims: Optional[Sequence[int]] = None, step_size: float = 1.0, n_adv: int = 1,
                 regularizer: float = 1e-8):
        super().__init__(model, n_particles, seed, distribution, hull_dims)
        self.step_size = step_size
        self.n_adv = n_adv
        self.regularizer = regularizer

    def _run(self, spec):
        adv = AdversarialConfig(self.step_size, self.n_adv, self.regularizer)
        return rob_up(self.model, spec, self._sampler(), adv, hull_dims=self.hull_dims)


class LipschitzTube(BaseEstimator):
    """Guaranteed ellipsoidal tube for ``x' = x + g(x, u)`` with fixed controls.

    Args:
        model: model exposing ``residual(x, u)``.
        lipschitz_constants: per-output Lipschitz constants of ``g``.
        paper_literal: use ``lambda_max`` instead of its square root as radius.
    """

    def __init__(self, model=None, lipschitz_constants=None, paper_literal: bool = False):
        self.model = model
        self.lipschitz_constants = lipschitz_constants
        self.paper_literal = paper_literal

    def fit(self, spec: UncertaintySpec, y=None):
        if self.model is None or self.lipschitz_constants is None:
            raise ValueError("model and lipschitz_constants must be set before fit")
        widths = np.stack([s.upper - s.lower for s in spec.control_sets])
        if np.any(widths > 0):
            raise ValueError("LipschitzTube needs pinned (zero-width) controls")
        controls = np.stack([s.center for s in spec.control_sets])
        info = LipschitzModelInfo.from_residual_model(self.model, controls, self.lipschitz_constants)
        e0 = spec.x0_set if isinstance(spec.x0_set, Ellipsoid) else box_to_ellipsoid(spec.x0_set, spec.x0_set.dim)
        self.tube_ = lipschitz_propagate(info, e0, spec.horizon, paper_literal=self.paper_literal)
        self.horizon_ = spec.horizon
        self.n_features_in_ = self.model.n
        return self

    def predict(self, X, k: Optional[int] = None) -> np.ndarray:
        check_is_fitted(self, "tube_")
        X = check_points(X, self.n_features_in_, name="X")
        return np.asarray(self.tube_[self.horizon_ if k is None else int(k)].contains(X))

    def score(self, true_set, k: Optional[int] = None) -> float:
        check_is_fitted(self, "tube_")
        return coverage(self.tube_[self.horizon_ if k is None else int(k)], true_set)
