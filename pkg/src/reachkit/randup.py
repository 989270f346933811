"""randUP: i.i.d. parameter sampling, propagation and per-timestep convex hulls."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri
from scipy.stats import beta as _beta_dist

from reachkit.dynamics.base import DynamicsModel, ParamTuple, PropagationError, Trajectory, rollout
from reachkit.geometry import (AxisAlignedBox, ConvexHullSet, Ellipsoid, GeometryError,
                               box_to_ellipsoid, convex_hull, ellipsoid_volume, hull_volume,
                               outer_box)

BLOCKS = ("x0", "controls", "theta", "disturbances")
_BLOCK_TAGS = {name: i for i, name in enumerate(BLOCKS)}

SetLike = Union[AxisAlignedBox, Ellipsoid]


@dataclass(frozen=True)
class UncertaintySpec:
    """Compact parameter set ``Z = X0 x U^N x Theta x W^N``.

    ``control_sets`` holds one box per timestep; a zero-width box pins the
    control (open-loop verification). ``disturbance_set`` is shared by all
    timesteps.
    """

    x0_set: SetLike
    control_sets: Sequence[AxisAlignedBox]
    theta_set: AxisAlignedBox
    disturbance_set: AxisAlignedBox
    horizon: int

    def __post_init__(self):
        sets = tuple(self.control_sets)
        if isinstance(self.control_sets, AxisAlignedBox):
            sets = (self.control_sets,) * int(self.horizon)
        if len(sets) != self.horizon:
            raise ValueError(f"need {self.horizon} control sets, got {len(sets)}")
        if len({s.dim for s in sets}) > 1:
            raise ValueError("control sets have mixed dimensions")
        object.__setattr__(self, "control_sets", sets)
        object.__setattr__(self, "horizon", int(self.horizon))

    @classmethod
    def build(cls, x0_set: SetLike, controls: Union[AxisAlignedBox, np.ndarray, Sequence],
              horizon: int, theta_set: Optional[AxisAlignedBox] = None,
              disturbance_set: Optional[AxisAlignedBox] = None) -> "UncertaintySpec":
        """Convenience constructor.

        ``controls`` may be a single box (reused every step), a list of
        boxes, or an ``(N, m)`` array of fixed open-loop controls.
        """
        if isinstance(controls, AxisAlignedBox):
            control_sets = [controls] * horizon
        elif len(controls) and isinstance(controls[0], AxisAlignedBox):
            control_sets = list(controls)
        else:
            arr = np.asarray(controls, dtype=float).reshape(horizon, -1)
            control_sets = [AxisAlignedBox.point(u) for u in arr]
        empty = AxisAlignedBox(np.zeros(0), np.zeros(0))
        return cls(x0_set, control_sets, theta_set or empty, disturbance_set or empty, horizon)

    @property
    def dims(self):
        return (self.x0_set.dim, self.control_sets[0].dim, self.theta_set.dim,
                self.disturbance_set.dim)

    def check_model(self, model: DynamicsModel) -> None:
        if self.dims != (model.n, model.m, model.p, model.q):
            raise ValueError(f"uncertainty dims {self.dims} do not match model "
                             f"{(model.n, model.m, model.p, model.q)}")

    def nominal(self) -> ParamTuple:
        """Centre of every block."""
        return ParamTuple(self.x0_set.center.copy(),
                          np.stack([s.center for s in self.control_sets]),
                          self.theta_set.center.copy(),
                          np.tile(self.disturbance_set.center, (self.horizon, 1)))

    def with_controls(self, controls) -> "UncertaintySpec":
        """Same uncertainty with the controls pinned to ``controls``."""
        arr = np.asarray(controls, dtype=float).reshape(self.horizon, -1)
        return UncertaintySpec(self.x0_set, [AxisAlignedBox.point(u) for u in arr],
                               self.theta_set, self.disturbance_set, self.horizon)

    def contains(self, z: ParamTuple, tol: float = 1e-10) -> np.ndarray:
        """Block-wise membership of (a batch of) parameter tuples."""
        ok = np.asarray(self.x0_set.contains(z.x0, tol))
        lo = np.stack([s.lower for s in self.control_sets])
        hi = np.stack([s.upper for s in self.control_sets])
        ok = ok & np.all((z.controls >= lo - tol) & (z.controls <= hi + tol), axis=(-1, -2))
        ok = ok & self.theta_set.contains(z.theta, tol)
        ok = ok & np.all(self.disturbance_set.contains(z.disturbances, tol), axis=-1)
        return ok


@dataclass(frozen=True)
class Beta:
    """Beta(alpha, beta) law rescaled onto each box block."""

    alpha: float = 0.1
    beta: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("beta shape parameters must be positive")


Distribution = Union[str, Beta]


@dataclass(frozen=True)
class SamplerConfig:
    """Particle count, seed and per-block sampling law.

    ``distribution`` is ``"uniform"``, a :class:`Beta`, or a mapping from
    block name (``x0``, ``controls``, ``theta``, ``disturbances``) to either.
    """

    n_particles: int
    seed: int = 0
    distribution: Union[Distribution, Mapping[str, Distribution]] = "uniform"

    def __post_init__(self):
        if int(self.n_particles) < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def law(self, block: str) -> Distribution:
        d = self.distribution
        if isinstance(d, Mapping):
            d = d.get(block, "uniform")
        if not (d == "uniform" or isinstance(d, Beta)):
            raise ValueError(f"unknown distribution {d!r}")
        return d


def _block_uniforms(seed: int, block: str, start: int, count: int, width: int) -> np.ndarray:
    """Uniforms for particles ``start..start+count`` of one block.

    Particle ``j`` owns positions ``[j*width, (j+1)*width)`` of a Philox
    stream keyed on ``(seed, block)``, so particle ``j`` sees the same
    numbers whatever the total particle count.
    """
    if width == 0 or count == 0:
        return np.zeros((count, width))
    key = np.random.SeedSequence(int(seed), spawn_key=(_BLOCK_TAGS[block],)).generate_state(2, np.uint64)
    bitgen = np.random.Philox(key=key)
    # Philox emits 4 uint64 per counter increment; one double per uint64.
    offset = start * width
    bitgen.advance(offset // 4)
    skip = offset % 4
    raw = np.random.Generator(bitgen).random(skip + count * width)[skip:]
    return raw.reshape(count, width)


def _box_from_uniform(u: np.ndarray, box: AxisAlignedBox, law: Distribution) -> np.ndarray:
    if isinstance(law, Beta):
        u = _beta_dist.ppf(u, law.alpha, law.beta)
    return box.lower + (box.upper - box.lower) * u


def _ellipsoid_from_uniform(u: np.ndarray, e: Ellipsoid) -> np.ndarray:
    """Uniform law on an ellipsoid from ``n + 1`` uniforms per particle."""
    n = e.dim
    g = ndtri(np.clip(u[:, :n], 1e-300, 1 - 1e-16))
    direction = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    radius = u[:, n:n + 1] ** (1.0 / n)
    lam, vecs = np.linalg.eigh(e.shape)
    root = vecs * np.sqrt(np.maximum(lam, 0.0))
    return e.center + (radius * direction) @ root.T


def sample_params(spec: UncertaintySpec, cfg: SamplerConfig, start: int = 0,
                  count: Optional[int] = None) -> ParamTuple:
    """Draw particles ``start .. start + count`` (default: all ``cfg.n_particles``)."""
    M = cfg.n_particles - start if count is None else int(count)
    N = spec.horizon
    n, m, p, q = spec.dims

    if isinstance(spec.x0_set, Ellipsoid):
        if cfg.law("x0") != "uniform":
            raise ValueError("ellipsoidal initial sets support uniform sampling only")
        x0 = _ellipsoid_from_uniform(_block_uniforms(cfg.seed, "x0", start, M, n + 1), spec.x0_set)
    else:
        x0 = _box_from_uniform(_block_uniforms(cfg.seed, "x0", start, M, n), spec.x0_set, cfg.law("x0"))

    u_raw = _block_uniforms(cfg.seed, "controls", start, M, N * m).reshape(M, N, m)
    lo = np.stack([s.lower for s in spec.control_sets])
    hi = np.stack([s.upper for s in spec.control_sets])
    law = cfg.law("controls")
    if isinstance(law, Beta):
        u_raw = _beta_dist.ppf(u_raw, law.alpha, law.beta)
    controls = lo + (hi - lo) * u_raw

    theta = _box_from_uniform(_block_uniforms(cfg.seed, "theta", start, M, p), spec.theta_set,
                              cfg.law("theta"))
    w_raw = _block_uniforms(cfg.seed, "disturbances", start, M, N * q).reshape(M, N, q)
    w = _box_from_uniform(w_raw, spec.disturbance_set, cfg.law("disturbances"))
    return ParamTuple(x0, controls, theta, w)


class ReachEstimate:
    """Particle approximation of the reachable sets ``X_1..X_N`` (and ``X_0``).

    Hulls are built lazily per timestep and cached. ``hull_dims`` restricts
    them (and the JSON export) to a subset of state coordinates, which keeps
    high-dimensional models tractable.
    """

    def __init__(self, states: np.ndarray, params: Optional[ParamTuple] = None,
                 hull_dims: Optional[Sequence[int]] = None, method: str = "randup"):
        self.states = np.asarray(states, dtype=float)
        self.params = params
        self.method = method
        self.hull_dims = None if hull_dims is None else list(hull_dims)
        self._hulls: Dict[tuple, ConvexHullSet] = {}

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def particles(self, k: int) -> np.ndarray:
        return self.states[:, k, :]

    def center(self, k: int) -> np.ndarray:
        """Arithmetic mean of the particles at timestep ``k``."""
        return self.states[:, k, :].mean(axis=0)

    def _dims(self, dims):
        if dims is None:
            dims = self.hull_dims
        return tuple(range(self.dim)) if dims is None else tuple(int(d) for d in dims)

    def hull(self, k: int, dims: Optional[Sequence[int]] = None) -> ConvexHullSet:
        dims = self._dims(dims)
        key = (k, dims)
        if key not in self._hulls:
            self._hulls[key] = convex_hull(self.states[:, k, list(dims)])
        return self._hulls[key]

    def outer_box(self, k: int, center=None) -> AxisAlignedBox:
        return outer_box(self.states[:, k, :], self.center(k) if center is None else center)

    def outer_ellipsoid(self, k: int, dims=None, center=None) -> Ellipsoid:
        return box_to_ellipsoid(self.outer_box(k, center), dims if dims is not None else self.dim)

    def contains(self, x, k: int, dims=None, tol: float = 1e-9):
        return self.hull(k, dims).contains(x, tol)

    def to_dict(self, include_particles: bool = False) -> dict:
        """JSON-ready summary: per-timestep hull, outer box and centre."""
        steps = []
        for k in range(self.horizon + 1):
            h = self.hull(k)
            box = self.outer_box(k)
            steps.append({
                "k": k,
                "center": self.center(k).tolist(),
                "outer_box": {"lower": box.lower.tolist(), "upper": box.upper.tolist()},
                "hull": {"dims": list(self._dims(None)), "rank": h.degenerate_rank,
                         "vertices": h.vertices.tolist(),
                         "facets": [{"normal": a.tolist(), "offset": float(b)}
                                    for a, b in zip(h.normals, h.offsets)]},
            })
            if include_particles:
                steps[-1]["particles"] = self.states[:, k, :].tolist()
        return {"method": self.method, "n_particles": self.n_particles,
                "horizon": self.horizon, "steps": steps}


def propagate(model: DynamicsModel, z: ParamTuple, horizon: int) -> Trajectory:
    """Batch rollout whose failures name the offending particle index."""
    try:
        return rollout(model, z, horizon)
    except PropagationError as err:
        raise PropagationError(err.step, err.indices) from None


def rand_up(model: DynamicsModel, spec: UncertaintySpec, cfg: SamplerConfig,
            hull_dims: Optional[Sequence[int]] = None) -> ReachEstimate:
    """Sample ``M`` i.i.d. parameter tuples, propagate them, and wrap the clouds."""
    spec.check_model(model)
    z = sample_params(spec, cfg)
    traj = propagate(model, z, spec.horizon)
    return ReachEstimate(traj.states, z, hull_dims=hull_dims, method="randup")


def volume_of(region) -> float:
    """Volume of a box, ellipsoid or full-dimensional hull (0 for degenerate hulls)."""
    if isinstance(region, (int, float, np.floating)):
        return float(region)
    if isinstance(region, AxisAlignedBox):
        return region.volume
    if isinstance(region, Ellipsoid):
        return ellipsoid_volume(region)
    if isinstance(region, ConvexHullSet):
        if region.is_degenerate:
            return 0.0
        return hull_volume(region)
    raise TypeError(f"cannot take the volume of {type(region).__name__}")


def coverage(estimate, true_set) -> float:
    """Volume ratio ``vol(estimate) / vol(true_set)``.

    ``estimate`` is a hull, ellipsoid or box; ``true_set`` a region or a
    known volume. Outer approximations (ellipsoids) may exceed 1.
    """
    true_vol = volume_of(true_set)
    if true_vol <= 0.0:
        raise GeometryError("zero true volume")
    return volume_of(estimate) / true_vol
