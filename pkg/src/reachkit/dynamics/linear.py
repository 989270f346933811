"""Linear benchmark systems."""
from __future__ import annotations

import numpy as np

from reachkit.dynamics.base import DynamicsModel


def _eye(batch, n):
    return np.broadcast_to(np.eye(n), batch + (n, n)).copy()


class AdditiveLinear(DynamicsModel):
    """One-step additive system ``x_1 = x_0 + u_0`` with ``u_0 in [-ubar, ubar]^n``.

    ``ubar`` is not used by the map itself; it is carried so experiment code
    can build the matching uncertainty set.
    """

    name = "additive_linear"

    def __init__(self, n: int = 1, ubar: float = 0.5):
        self.n = self.m = int(n)
        self.p = self.q = 0
        self.ubar = float(ubar)

    def _step(self, x, u, theta, w):
        return x + u

    def _jacobians(self, x, u, theta, w):
        batch = x.shape[:-1]
        return (_eye(batch, self.n), _eye(batch, self.n),
                np.zeros(batch + (self.n, 0)), np.zeros(batch + (self.n, 0)))


class DoubleIntegrator(DynamicsModel):
    """Planar double integrator ``p' = p + v``, ``v' = v + u`` (unit timestep).

    With ``additive_disturbance=True`` a 4-vector ``w`` is added to the next
    state.
    """

    name = "double_integrator"

    def __init__(self, additive_disturbance: bool = False):
        self.n, self.m, self.p = 4, 2, 0
        self.q = 4 if additive_disturbance else 0
        self.A = np.block([[np.eye(2), np.eye(2)], [np.zeros((2, 2)), np.eye(2)]])
        self.B = np.vstack([np.zeros((2, 2)), np.eye(2)])

    def _step(self, x, u, theta, w):
        out = x @ self.A.T + u @ self.B.T
        if self.q:
            out = out + w
        return out

    def _jacobians(self, x, u, theta, w):
        batch = x.shape[:-1]
        A = np.broadcast_to(self.A, batch + (4, 4)).copy()
        B = np.broadcast_to(self.B, batch + (4, 2)).copy()
        D = _eye(batch, 4) if self.q else np.zeros(batch + (4, 0))
        return A, B, np.zeros(batch + (4, 0)), D
