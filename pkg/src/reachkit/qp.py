"""Operator-splitting (ADMM) solver for convex quadratic programs.

Solves ``min 0.5 x'Px + q'x  s.t.  Gx <= h,  Ax = b`` by rewriting the
constraints as ``l <= Cx <= u`` and running the OSQP-style iteration with
Ruiz equilibration, residual-balancing penalty updates, infeasibility
certificates and a final active-set polish.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve
from scipy.sparse.linalg import splu

logger = logging.getLogger(__name__)

SOLVED = "solved"
MAX_ITER = "max_iter"
PRIMAL_INFEASIBLE = "primal_infeasible"

_INF = 1e20


@dataclass
class QpProblem:
    """Quadratic cost ``(P, q)``, inequalities ``G x <= h`` and equalities ``A x = b``."""

    P: np.ndarray
    q: np.ndarray
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {(n, n)}, got {self.P.shape}")
        self.G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.zeros(0) if self.h is None else np.atleast_1d(np.asarray(self.h, dtype=float))
        self.A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.zeros(0) if self.b is None else np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.G.shape != (self.h.size, n) or self.A.shape != (self.b.size, n):
            raise ValueError("constraint matrices do not match their right-hand sides")

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpResult:
    x: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    y: Optional[np.ndarray] = None
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def _ruiz(P, C, q, iters=15):
    n, m = P.shape[0], C.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, Cs, qs = P.copy(), C.copy(), q.copy()
    for _ in range(iters):
        col = np.max(np.abs(np.vstack([Ps, Cs])), axis=0) if m else np.max(np.abs(Ps), axis=0)
        d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        e = 1.0 / np.sqrt(np.clip(np.max(np.abs(Cs), axis=1), 1e-4, 1e4)) if m else np.ones(0)
        Ps = d[:, None] * Ps * d[None, :]
        Cs = e[:, None] * Cs * d[None, :]
        qs = d * qs
        D *= d
        E *= e
    # single cost scaling: repeating it per pass compounds when P has many zero columns
    mean_col = np.mean(np.max(np.abs(Ps), axis=0)) if n else 0.0
    c = 1.0 / np.clip(max(mean_col, np.max(np.abs(qs), initial=0.0)), 1e-4, 1e4)
    Ps *= c
    qs *= c
    return Ps, Cs, qs, D, E, c


class _Kkt:
    def __init__(self, P, C, sigma, rho):
        self.P, self.C, self.sigma = P, C, sigma
        self.update(rho)

    def update(self, rho):
        self.rho = rho
        n = self.P.shape[0]
        if sparse.issparse(self.C):
            M = sparse.csc_matrix(self.P + self.sigma * sparse.identity(n)
                                  + self.C.T @ sparse.diags(rho) @ self.C)
            self._fac = ("splu", splu(M))
            return
        M = self.P + self.sigma * np.eye(n) + (self.C.T * rho) @ self.C
        try:
            self._fac = ("chol", cho_factor(M))
        except np.linalg.LinAlgError:
            self._fac = ("lu", lu_factor(M))

    def solve(self, rhs):
        kind, fac = self._fac
        if kind == "splu":
            return fac.solve(rhs)
        return cho_solve(fac, rhs) if kind == "chol" else lu_solve(fac, rhs)


def _maybe_sparse(M, density: float = 0.05, min_size: int = 20_000):
    if M.size >= min_size and np.count_nonzero(M) <= density * M.size:
        return sparse.csr_matrix(M)
    return M


def solve_qp(qp: QpProblem, tol: float = 1e-6, max_iter: int = 20_000, rho: float = 0.1,
             sigma: float = 1e-6, alpha: float = 1.6, polish: bool = True,
             check_interval: int = 10, x0=None) -> QpResult:
    """Solve a convex QP; returns a :class:`QpResult` with a status string."""
    P = 0.5 * (qp.P + qp.P.T)
    scale = max(1.0, float(np.max(np.abs(P), initial=0.0)))
    if qp.n and np.linalg.eigvalsh(P)[0] < -1e-9 * scale:
        raise ValueError("P is not positive semidefinite")

    C = np.vstack([qp.G, qp.A])
    lo = np.concatenate([np.full(qp.h.size, -_INF), qp.b])
    hi = np.concatenate([qp.h, qp.b])
    m = C.shape[0]
    n = qp.n
    is_eq = np.concatenate([np.zeros(qp.h.size, bool), np.ones(qp.b.size, bool)])

    Ps, Cs, qs, D, E, c = _ruiz(P, C, qp.q)
    Cs = _maybe_sparse(Cs)
    C_op = _maybe_sparse(C)
    if sparse.issparse(Cs):
        Ps = sparse.csr_matrix(Ps)
    ls = np.where(lo <= -_INF, -_INF, E * lo)
    us = np.where(hi >= _INF, _INF, E * hi)

    def rho_vec(r):
        return np.where(is_eq, 1e3 * r, r)

    kkt = _Kkt(Ps, Cs, sigma, rho_vec(rho))
    x = np.zeros(n) if x0 is None else np.asarray(x0, float) / D
    z = np.clip(Cs @ x, ls, us)
    y = np.zeros(m)
    status = MAX_ITER
    it = 0
    r_prim = r_dual = np.inf

    def residuals(x, z, y):
        Cx = C_op @ (D * x) if m else np.zeros(0)
        z_un = z / E if m else z
        y_un = E * y / c if m else y
        Px = P @ (D * x)
        ATy = C_op.T @ y_un if m else np.zeros(n)
        rp = float(np.max(np.abs(Cx - z_un), initial=0.0))
        rd = float(np.max(np.abs(Px + qp.q + ATy), initial=0.0))
        ep = tol + tol * max(np.max(np.abs(Cx), initial=0.0), np.max(np.abs(z_un), initial=0.0))
        ed = tol + tol * max(np.max(np.abs(Px), initial=0.0), np.max(np.abs(ATy), initial=0.0),
                             np.max(np.abs(qp.q), initial=0.0))
        return rp, rd, ep, ed, Cx, Px, ATy, z_un

    for it in range(1, max_iter + 1):
        rho_v = kkt.rho
        x_t = kkt.solve(sigma * x - qs + Cs.T @ (rho_v * z - y))
        z_t = Cs @ x_t
        x_new = alpha * x_t + (1 - alpha) * x
        z_relax = alpha * z_t + (1 - alpha) * z
        z_new = np.clip(z_relax + y / rho_v, ls, us)
        dy = rho_v * (z_relax - z_new)
        y_new = y + dy
        x, z, y = x_new, z_new, y_new

        if it % check_interval and it != max_iter:
            continue
        r_prim, r_dual, eps_p, eps_d, Cx, Px, ATy, z_un = residuals(x, z, y)
        if r_prim <= eps_p and r_dual <= eps_d:
            status = SOLVED
            break
        # primal infeasibility certificate from the dual increment
        if m:
            dy_un = E * dy / c
            norm_dy = np.max(np.abs(dy_un))
            if norm_dy > 1e-12:
                eps_inf = 1e-5 * norm_dy
                cond1 = np.max(np.abs(C_op.T @ dy_un)) <= eps_inf
                pos, neg = np.maximum(dy_un, 0), np.minimum(dy_un, 0)
                support = np.sum(np.where(hi < _INF, hi, 0) * pos) + np.sum(np.where(lo > -_INF, lo, 0) * neg)
                unbounded = np.any((hi >= _INF) & (pos > eps_inf)) or np.any((lo <= -_INF) & (neg < -eps_inf))
                if cond1 and support < -eps_inf and not unbounded:
                    status = PRIMAL_INFEASIBLE
                    break
        # residual balancing
        p_scale = max(np.max(np.abs(Cx), initial=0.0), np.max(np.abs(z_un), initial=0.0), 1e-10)
        d_scale = max(np.max(np.abs(Px), initial=0.0), np.max(np.abs(ATy), initial=0.0),
                      np.max(np.abs(qp.q), initial=0.0), 1e-10)
        ratio = np.sqrt((r_prim / p_scale) / max(r_dual / d_scale, 1e-30))
        new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
        if new_rho > 5 * rho or new_rho < rho / 5:
            rho = new_rho
            kkt.update(rho_vec(rho))

    x_un = D * x
    y_un = E * y / c if m else y
    result = QpResult(x_un, status, it, r_prim, r_dual, y_un)
    if status == SOLVED and polish and m:
        _polish(qp, P, C, lo, hi, result, tol)
    return result


def _polish(qp, P, C, lo, hi, result, tol, delta=1e-9, refine=5):
    y = result.y
    x = result.x
    slack = C @ x
    lower_act = (y < -tol * 1e-2) | ((slack - lo) < -y) & (lo > -_INF) & (y < 0)
    upper_act = (y > tol * 1e-2) | ((hi - slack) < y) & (hi < _INF) & (y > 0)
    eq = lo == hi
    act = lower_act | upper_act | eq
    Ca = C[act]
    rhs_b = np.where(upper_act[act] | eq[act], hi[act], lo[act])
    n, na = P.shape[0], Ca.shape[0]
    K = np.block([[P + delta * np.eye(n), Ca.T], [Ca, -delta * np.eye(na)]])
    Kt = np.block([[P, Ca.T], [Ca, np.zeros((na, na))]])
    rhs = np.concatenate([-qp.q, rhs_b])
    try:
        fac = lu_factor(K)
    except (np.linalg.LinAlgError, ValueError):
        return
    sol = lu_solve(fac, rhs)
    for _ in range(refine):
        sol = sol + lu_solve(fac, rhs - Kt @ sol)
    xp, ya = sol[:n], sol[n:]
    yp = np.zeros_like(y)
    yp[act] = ya
    # dual sign feasibility and primal feasibility of the polished point
    if not np.all(np.isfinite(sol)):
        return
    Cx = C @ xp
    rp = float(np.max(np.maximum(Cx - hi, 0) + np.maximum(lo - Cx, 0), initial=0.0))
    rd = float(np.max(np.abs(P @ xp + qp.q + C.T @ yp), initial=0.0))
    sign_ok = np.all(yp[lower_act & ~eq] <= 1e-9) and np.all(yp[upper_act & ~eq] >= -1e-9)
    if sign_ok and rp <= max(result.primal_residual, tol) and rd <= max(result.dual_residual, tol):
        result.x, result.y = xp, yp
        result.primal_residual, result.dual_residual = rp, rd
        result.polished = True
