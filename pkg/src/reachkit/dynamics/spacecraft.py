"""Rigid-body spacecraft models with forward-Euler discretization.

Quaternions are scalar-last, ``q = (qx, qy, qz, qw)``, with kinematics
``q_dot = 0.5 * Omega(omega) q`` and

    Omega(w) = [[  0,  w3, -w2, w1],
                [-w3,   0,  w1, w2],
                [ w2, -w1,   0, w3],
                [-w1, -w2, -w3,  0]]

The quaternion is deliberately not renormalised after a step.
"""
from __future__ import annotations

import numpy as np

from reachkit.dynamics.base import DynamicsModel


def skew(v):
    """Cross-product matrix ``S(v)`` with ``S(v) @ x = v x x``; batched."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def omega_matrix(w):
    w = np.asarray(w, dtype=float)
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    z = np.zeros_like(w1)
    rows = [[z, w3, -w2, w1], [-w3, z, w1, w2], [w2, -w1, z, w3], [-w1, -w2, -w3, z]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _xi_matrix(q):
    """``Xi(q)`` with ``Omega(w) q = Xi(q) w``."""
    q1, q2, q3, q4 = (q[..., i] for i in range(4))
    rows = [[q4, -q3, q2], [q3, q4, -q1], [-q2, q1, q4], [-q1, -q2, -q3]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


class Spacecraft13D(DynamicsModel):
    """13-state free-flyer: ``x = [r, v, q, omega]``, ``u = [F, M]``.

    ``theta = (m, Jx, Jy, Jz)`` and an additive 13-vector disturbance:
    ``x_{k+1} = x_k + dt * f_c(x_k, u_k, theta) + w_k``.
    """

    name = "spacecraft13"
    POS, VEL, QUAT, OMEGA = slice(0, 3), slice(3, 6), slice(6, 10), slice(10, 13)

    def __init__(self, dt: float = 5.0):
        self.dt = float(dt)
        self.n, self.m, self.p, self.q = 13, 6, 4, 13

    def _step(self, x, u, theta, w):
        dt = self.dt
        r, v, quat, om = x[..., 0:3], x[..., 3:6], x[..., 6:10], x[..., 10:13]
        F, M = u[..., 0:3], u[..., 3:6]
        mass, J = theta[..., 0:1], theta[..., 1:4]
        qdot = 0.5 * np.einsum("...ij,...j->...i", omega_matrix(om), quat)
        omdot = (M - np.cross(om, J * om)) / J
        out = np.concatenate([r + dt * v, v + dt * F / mass, quat + dt * qdot, om + dt * omdot], axis=-1)
        return out + w

    def _jacobians(self, x, u, theta, w):
        dt = self.dt
        batch = x.shape[:-1]
        quat, om = x[..., 6:10], x[..., 10:13]
        F, M = u[..., 0:3], u[..., 3:6]
        mass, J = theta[..., 0], theta[..., 1:4]
        eye3 = np.eye(3)

        A = np.broadcast_to(np.eye(13), batch + (13, 13)).copy()
        A[..., 0:3, 3:6] = dt * eye3
        A[..., 6:10, 6:10] += 0.5 * dt * omega_matrix(om)
        A[..., 6:10, 10:13] = 0.5 * dt * _xi_matrix(quat)
        Jmat = J[..., :, None] * eye3
        # d(om x J om)/d om = S(om) J - S(J om)
        dgyro = skew(om) @ Jmat - skew(J * om)
        A[..., 10:13, 10:13] -= dt * dgyro / J[..., :, None]

        B = np.zeros(batch + (13, 6))
        B[..., 3:6, 0:3] = dt * eye3 / mass[..., None, None]
        B[..., 10:13, 3:6] = dt * eye3 / J[..., :, None]

        C = np.zeros(batch + (13, 4))
        C[..., 3:6, 0] = -dt * F / mass[..., None] ** 2
        tau = M - np.cross(om, J * om)
        for j in range(3):
            ej = np.zeros(3)
            ej[j] = 1.0
            # d tau / d J_j = -om_j * (om x e_j)
            dtau = -om[..., j:j + 1] * np.cross(om, ej)
            col = dt * dtau / J
            col[..., j] -= dt * tau[..., j] / J[..., j] ** 2
            C[..., 10:13, 1 + j] = col

        D = np.broadcast_to(np.eye(13), batch + (13, 13)).copy()
        return A, B, C, D


class PlanarSpacecraft(DynamicsModel):
    """Planar reduction: ``x = [px, py, vx, vy, psi, omega]``, ``u = [Fx, Fy, M]``.

    ``theta = (m, J)``; additive 6-vector disturbance. Thrust is expressed
    in the body frame, so the translational dynamics depend on the heading.
    """

    name = "planar_spacecraft"

    def __init__(self, dt: float = 5.0):
        self.dt = float(dt)
        self.n, self.m, self.p, self.q = 6, 3, 2, 6

    def _step(self, x, u, theta, w):
        dt = self.dt
        psi, om = x[..., 4], x[..., 5]
        c, s = np.cos(psi), np.sin(psi)
        fx, fy, torque = u[..., 0], u[..., 1], u[..., 2]
        mass, J = theta[..., 0], theta[..., 1]
        ax = (c * fx - s * fy) / mass
        ay = (s * fx + c * fy) / mass
        out = np.stack([x[..., 0] + dt * x[..., 2], x[..., 1] + dt * x[..., 3],
                        x[..., 2] + dt * ax, x[..., 3] + dt * ay,
                        psi + dt * om, om + dt * torque / J], axis=-1)
        return out + w

    def _jacobians(self, x, u, theta, w):
        dt = self.dt
        batch = x.shape[:-1]
        psi = x[..., 4]
        c, s = np.cos(psi), np.sin(psi)
        fx, fy, torque = u[..., 0], u[..., 1], u[..., 2]
        mass, J = theta[..., 0], theta[..., 1]
        A = np.broadcast_to(np.eye(6), batch + (6, 6)).copy()
        A[..., 0, 2] = A[..., 1, 3] = A[..., 4, 5] = dt
        A[..., 2, 4] = dt * (-s * fx - c * fy) / mass
        A[..., 3, 4] = dt * (c * fx - s * fy) / mass
        B = np.zeros(batch + (6, 3))
        B[..., 2, 0], B[..., 2, 1] = dt * c / mass, -dt * s / mass
        B[..., 3, 0], B[..., 3, 1] = dt * s / mass, dt * c / mass
        B[..., 5, 2] = dt / J
        C = np.zeros(batch + (6, 2))
        C[..., 2, 0] = -dt * (c * fx - s * fy) / mass ** 2
        C[..., 3, 0] = -dt * (s * fx + c * fy) / mass ** 2
        C[..., 5, 1] = -dt * torque / J ** 2
        D = np.broadcast_to(np.eye(6), batch + (6, 6)).copy()
        return A, B, C, D
