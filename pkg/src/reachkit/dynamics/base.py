"""Dynamics interface, parameter tuples, rollouts and reverse-mode sensitivities."""
from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


class PropagationError(FloatingPointError):
    """A rollout produced a non-finite state.

    Attributes:
        step: transition index ``k`` whose output ``x_{k+1}`` is non-finite.
        indices: flat batch indices of the offending particles.
    """

    def __init__(self, step: int, indices=()):
        self.step = int(step)
        self.indices = np.atleast_1d(np.asarray(indices, dtype=int))
        where = f" (particles {self.indices[:10].tolist()})" if self.indices.size else ""
        super().__init__(f"non-finite state at timestep {self.step + 1}{where}")


@dataclass(frozen=True)
class ParamTuple:
    """One sampled uncertainty realisation ``z = (x0, u_{0:N-1}, theta, w_{0:N-1})``.

    Every field may carry leading batch axes: ``x0`` is ``(..., n)``,
    ``controls`` is ``(..., N, m)``, ``theta`` is ``(..., p)`` and
    ``disturbances`` is ``(..., N, q)``. ``theta`` is shared by all
    timesteps of a trajectory.
    """

    x0: np.ndarray
    controls: np.ndarray
    theta: np.ndarray
    disturbances: np.ndarray

    @property
    def horizon(self) -> int:
        return self.controls.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return self.x0.shape[:-1]

    def __len__(self) -> int:
        return self.batch_shape[0] if self.batch_shape else 1

    def __getitem__(self, idx) -> "ParamTuple":
        return ParamTuple(self.x0[idx], self.controls[idx], self.theta[idx],
                          self.disturbances[idx])

    def blocks(self):
        return {"x0": self.x0, "controls": self.controls, "theta": self.theta,
                "disturbances": self.disturbances}

    def map(self, fn, *others) -> "ParamTuple":
        return ParamTuple(*(fn(getattr(self, f), *(getattr(o, f) for o in others))
                            for f in ("x0", "controls", "theta", "disturbances")))

    def flatten(self) -> np.ndarray:
        """Concatenate all blocks along the last axis: ``(..., size)``."""
        b = self.batch_shape
        return np.concatenate([
            self.x0, self.controls.reshape(b + (-1,)), self.theta,
            self.disturbances.reshape(b + (-1,))], axis=-1)

    def unflatten(self, flat) -> "ParamTuple":
        """Inverse of :meth:`flatten`, using this tuple's block shapes."""
        flat = np.asarray(flat, dtype=float)
        b = flat.shape[:-1]
        n, (N, m), p, q = (self.x0.shape[-1], self.controls.shape[-2:],
                           self.theta.shape[-1], self.disturbances.shape[-1])
        cuts = np.cumsum([n, N * m, p, N * q])
        x0, u, th, w, _ = np.split(flat, cuts, axis=-1)
        return ParamTuple(x0, u.reshape(b + (N, m)), th, w.reshape(b + (N, q)))

    @staticmethod
    def concatenate(items) -> "ParamTuple":
        items = list(items)
        return ParamTuple(*(np.concatenate([getattr(z, f) for z in items], axis=0)
                            for f in ("x0", "controls", "theta", "disturbances")))


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_N`` with shape ``(..., N + 1, n)``."""

    states: np.ndarray

    @property
    def horizon(self) -> int:
        return self.states.shape[-2] - 1

    def __getitem__(self, k):
        return self.states[..., k, :]


class DynamicsModel(abc.ABC):
    """Discrete-time model ``x_{k+1} = f(x_k, u_k, theta, w_k)``.

    Subclasses implement :meth:`_step` and :meth:`_jacobians` on batched
    arrays (arbitrary leading axes). Models are immutable after
    construction.
    """

    #: state, control, parameter and disturbance dimensions
    n: int
    m: int
    p: int
    q: int
    name: str = "model"

    def step(self, x, u, theta=None, w=None) -> np.ndarray:
        x, u, theta, w = self._coerce(x, u, theta, w)
        return self._step(x, u, theta, w)

    def jacobians(self, x, u, theta=None, w=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Partial derivatives ``(df/dx, df/du, df/dtheta, df/dw)``."""
        x, u, theta, w = self._coerce(x, u, theta, w)
        return self._jacobians(x, u, theta, w)

    @abc.abstractmethod
    def _step(self, x, u, theta, w) -> np.ndarray:
        ...

    @abc.abstractmethod
    def _jacobians(self, x, u, theta, w):
        ...

    def _coerce(self, x, u, theta, w):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = x.shape[:-1]
        theta = np.zeros(batch + (self.p,)) if theta is None else np.asarray(theta, dtype=float)
        w = np.zeros(batch + (self.q,)) if w is None else np.asarray(w, dtype=float)
        for arr, dim, label in ((x, self.n, "x"), (u, self.m, "u"),
                                (theta, self.p, "theta"), (w, self.q, "w")):
            if arr.shape[-1:] != (dim,):
                raise ValueError(f"{label} has trailing dimension {arr.shape[-1:]}, expected {dim}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{label} contains non-finite values")
        return x, u, theta, w

    def zero_params(self, horizon: int, x0=None, batch=()) -> ParamTuple:
        """Parameter tuple with zero controls, parameters and disturbances."""
        batch = tuple(batch)
        x0 = np.zeros(batch + (self.n,)) if x0 is None else np.broadcast_to(
            np.asarray(x0, dtype=float), batch + (self.n,)).copy()
        return ParamTuple(x0, np.zeros(batch + (horizon, self.m)),
                          np.zeros(batch + (self.p,)), np.zeros(batch + (horizon, self.q)))

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, m={self.m}, p={self.p}, q={self.q})"


def _check_params(model: DynamicsModel, z: ParamTuple, horizon: Optional[int]) -> int:
    N = z.horizon if horizon is None else int(horizon)
    if z.controls.shape[-2] < N or z.disturbances.shape[-2] < N:
        raise ValueError(f"parameter tuple covers fewer than N={N} steps")
    for arr, dim, label in ((z.x0, model.n, "x0"), (z.controls, model.m, "controls"),
                            (z.theta, model.p, "theta"), (z.disturbances, model.q, "disturbances")):
        if arr.shape[-1] != dim:
            raise ValueError(f"{label} has trailing dimension {arr.shape[-1]}, expected {dim}")
    return N


def rollout(model: DynamicsModel, z: ParamTuple, horizon: Optional[int] = None,
            on_nonfinite: str = "raise") -> Trajectory:
    """Propagate ``z`` through the dynamics for ``horizon`` steps.

    With ``on_nonfinite="raise"`` a :class:`PropagationError` names the first
    failing timestep; with ``"keep"`` non-finite states are left in place
    for the caller to mask.
    """
    N = _check_params(model, z, horizon)
    batch = z.batch_shape
    states = np.empty(batch + (N + 1, model.n))
    x = np.asarray(z.x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 contains non-finite values")
    states[..., 0, :] = x
    bad = np.zeros(batch, dtype=bool)
    for k in range(N):
        u, w = z.controls[..., k, :], z.disturbances[..., k, :]
        # overflow is detected below and reported per step
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if on_nonfinite == "keep" and bad.any():
                x = np.where(bad[..., None], 0.0, x)
                x = model._step(x, u, z.theta, w)
            else:
                x = model.step(x, u, z.theta, w)
            finite = np.all(np.isfinite(x), axis=-1)
        if not np.all(finite):
            if on_nonfinite == "raise":
                raise PropagationError(k, np.flatnonzero(~finite))
            bad |= ~finite
        states[..., k + 1, :] = x
    if bad.any():
        states[bad] = np.nan
    return Trajectory(states)


def rollout_gradient(model: DynamicsModel, z: ParamTuple, seeds, horizon: Optional[int] = None,
                     trajectory: Optional[Trajectory] = None) -> ParamTuple:
    """Gradient of ``sum_k seeds[k] . x_k(z)`` with respect to every block of ``z``.

    ``seeds`` has shape ``(..., N, n)``; row ``k - 1`` is the cotangent of
    ``x_k`` for ``k = 1..N``. The adjoint runs backwards through the
    per-step Jacobians and the ``theta`` gradient accumulates over all steps.
    """
    N = _check_params(model, z, horizon)
    seeds = np.asarray(seeds, dtype=float)
    if seeds.shape[-2:] != (N, model.n):
        raise ValueError(f"seeds must have trailing shape {(N, model.n)}, got {seeds.shape[-2:]}")
    traj = rollout(model, z, N) if trajectory is None else trajectory
    batch = z.batch_shape
    g_u = np.zeros(batch + (z.controls.shape[-2], model.m))
    g_w = np.zeros(batch + (z.disturbances.shape[-2], model.q))
    g_theta = np.zeros(batch + (model.p,))
    adj = np.broadcast_to(seeds[..., N - 1, :], batch + (model.n,)).copy()
    for k in range(N - 1, -1, -1):
        A, B, C, D = model.jacobians(traj.states[..., k, :], z.controls[..., k, :],
                                     z.theta, z.disturbances[..., k, :])
        g_u[..., k, :] = np.einsum("...ij,...i->...j", B, adj)
        g_w[..., k, :] = np.einsum("...ij,...i->...j", D, adj)
        g_theta += np.einsum("...ij,...i->...j", C, adj)
        adj = np.einsum("...ij,...i->...j", A, adj)
        if k > 0:
            adj = adj + seeds[..., k - 1, :]
    return ParamTuple(adj, g_u, g_theta, g_w)
