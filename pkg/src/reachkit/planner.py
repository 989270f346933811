"""Reachability-aware trajectory optimisation by sequential convex programming.

Each iteration estimates reachable sets around the current open-loop
controls, tightens the state constraints with the particle back-offs,
linearises dynamics and obstacle constraints about the previous iterate,
and solves the resulting QP with :func:`reachkit.qp.solve_qp`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from reachkit.dynamics.base import DynamicsModel, ParamTuple, rollout
from reachkit.geometry import AxisAlignedBox, box_to_ellipsoid, outer_box
from reachkit.qp import PRIMAL_INFEASIBLE, SOLVED, QpProblem, solve_qp
from reachkit.randup import ReachEstimate, SamplerConfig, UncertaintySpec, rand_up
from reachkit.robup import AdversarialConfig, rob_up

logger = logging.getLogger(__name__)

CONVERGED = "converged"
INFEASIBLE = "infeasible_subproblem"
MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class Obstacle:
    """Sphere (``axis=None``) or infinite cylinder around ``axis`` through ``center``."""

    center: np.ndarray
    radius: float
    axis: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.axis is not None:
            axis = np.asarray(self.axis, dtype=float)
            object.__setattr__(self, "axis", axis / np.linalg.norm(axis))

    def _offset(self, p):
        d = np.asarray(p, dtype=float) - self.center
        if self.axis is not None:
            d = d - (d @ self.axis)[..., None] * self.axis
        return d

    def signed_distance(self, p):
        return np.linalg.norm(self._offset(p), axis=-1) - self.radius

    def outward_normal(self, p) -> np.ndarray:
        d = self._offset(p)
        norm = np.linalg.norm(d)
        if norm > 1e-12:
            return d / norm
        # tie-break: first coordinate axis not parallel to the cylinder axis
        for i in range(d.size):
            e = np.zeros(d.size)
            e[i] = 1.0
            if self.axis is not None:
                e = e - (e @ self.axis) * self.axis
            if np.linalg.norm(e) > 1e-6:
                return e / np.linalg.norm(e)
        raise ValueError("degenerate obstacle geometry")


@dataclass
class OcpSpec:
    """Robust optimal control problem data.

    ``uncertainty`` supplies ``X0``, ``Theta``, ``W`` and the horizon (its
    control sets are ignored; ``control_bounds`` is ``U``). Boxes may use
    infinite bounds for unconstrained coordinates. The cost is
    ``sum_k u_k' R u_k + (x_N - target)' Qf (x_N - target)`` with diagonal
    weights.
    """

    model: DynamicsModel
    uncertainty: UncertaintySpec
    control_bounds: AxisAlignedBox
    x0_nominal: np.ndarray
    goal: AxisAlignedBox
    state_bounds: AxisAlignedBox
    obstacles: Sequence[Obstacle] = ()
    position_dims: Sequence[int] = (0, 1, 2)
    control_weights: Optional[np.ndarray] = None
    terminal_weights: Optional[np.ndarray] = None
    terminal_target: Optional[np.ndarray] = None
    theta_nominal: Optional[np.ndarray] = None
    w_nominal: Optional[np.ndarray] = None

    def __post_init__(self):
        m, n = self.model.m, self.model.n
        self.x0_nominal = np.asarray(self.x0_nominal, dtype=float)
        self.control_weights = np.ones(m) if self.control_weights is None else np.asarray(self.control_weights, float)
        self.terminal_weights = np.zeros(n) if self.terminal_weights is None else np.asarray(self.terminal_weights, float)
        self.terminal_target = np.zeros(n) if self.terminal_target is None else np.asarray(self.terminal_target, float)
        if self.theta_nominal is None:
            self.theta_nominal = self.uncertainty.theta_set.center
        if self.w_nominal is None:
            self.w_nominal = self.uncertainty.disturbance_set.center
        self.theta_nominal = np.asarray(self.theta_nominal, dtype=float)
        self.w_nominal = np.asarray(self.w_nominal, dtype=float)
        if not np.all(self.uncertainty.theta_set.contains(self.theta_nominal)):
            raise ValueError("nominal theta must lie in Theta")
        if not np.all(self.uncertainty.disturbance_set.contains(self.w_nominal)):
            raise ValueError("nominal disturbance must lie in W")
        self.position_dims = list(self.position_dims)

    @property
    def horizon(self) -> int:
        return self.uncertainty.horizon

    def cost(self, states, controls) -> float:
        dev = states[-1] - self.terminal_target
        return float(np.sum(controls ** 2 * self.control_weights) + np.sum(dev ** 2 * self.terminal_weights))


@dataclass
class ScpIterate:
    states: np.ndarray
    controls: np.ndarray
    deltas: np.ndarray
    trust_radius: float
    change: float
    accepted: bool
    qp_status: str
    cost: float


@dataclass
class ScpResult:
    states: np.ndarray
    controls: np.ndarray
    iterations: int
    status: str
    history: List[ScpIterate] = field(default_factory=list)
    reach: Optional[ReachEstimate] = None

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def nominal_rollout(spec: OcpSpec, controls) -> np.ndarray:
    """``mu_{k+1} = f(mu_k, u_k, theta_bar, w_bar)`` from ``x0_nominal``."""
    N = spec.horizon
    u = np.asarray(controls, dtype=float).reshape(N, spec.model.m)
    z = ParamTuple(spec.x0_nominal, u, spec.theta_nominal, np.tile(spec.w_nominal, (N, 1)))
    return rollout(spec.model, z, N).states


@dataclass(frozen=True)
class TightenedBounds:
    lower: np.ndarray
    upper: np.ndarray
    infeasible: np.ndarray


def reformulate_bounds(deltas, bounds: AxisAlignedBox) -> TightenedBounds:
    """``x_min + delta_k <= mu_k <= x_max - delta_k`` with per-dimension infeasibility flags."""
    deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
    lower = bounds.lower + deltas
    upper = bounds.upper - deltas
    return TightenedBounds(lower, upper, lower > upper)


def reformulate_obstacle(shape: np.ndarray, obstacle: Obstacle, mu_ref):
    """Linearised, back-off tightened obstacle constraint ``a . p <= b``.

    ``shape`` is the position-ellipsoid matrix ``Q_k``; ``mu_ref`` the
    reference position. The returned ``b`` already includes the
    ``sqrt(a' Q a)`` margin.
    """
    mu_ref = np.asarray(mu_ref, dtype=float)
    normal = obstacle.outward_normal(mu_ref)
    a = -normal
    b = -(obstacle.radius + normal @ obstacle.center)
    backoff = math.sqrt(max(float(a @ shape @ a), 0.0))
    return a, b - backoff


def _straight_line(spec: OcpSpec) -> np.ndarray:
    N = spec.horizon
    lo, hi = spec.goal.lower, spec.goal.upper
    finite = np.isfinite(lo) & np.isfinite(hi)
    target = np.where(finite, 0.5 * (np.where(finite, lo, 0) + np.where(finite, hi, 0)), spec.x0_nominal)
    s = np.linspace(0.0, 1.0, N + 1)[:, None]
    return (1 - s) * spec.x0_nominal + s * target


def _initial_trust_radius(bounds: AxisAlignedBox, fraction: float = 0.1) -> float:
    width = bounds.upper - bounds.lower
    if not np.all(np.isfinite(width)):
        return math.inf
    return fraction * float(np.linalg.norm(width))


def _estimate(spec: OcpSpec, controls, method: str, cfg: SamplerConfig, adv: AdversarialConfig):
    unc = spec.uncertainty.with_controls(controls)
    if method == "robup":
        return rob_up(spec.model, unc, cfg, adv)
    if method == "randup":
        return rand_up(spec.model, unc, cfg)
    raise ValueError(f"unknown reach method {method!r}")


def _deltas(reach: ReachEstimate, mu: np.ndarray) -> np.ndarray:
    return np.stack([outer_box(reach.particles(k), mu[k]).half_widths for k in range(mu.shape[0])])


def constraint_violation(spec: OcpSpec, states, deltas) -> float:
    """Largest violation of the tightened bounds, goal and obstacle constraints."""
    tb = reformulate_bounds(deltas[1:], spec.state_bounds)
    viol = [np.max(np.maximum(tb.lower - states[1:], 0.0), initial=0.0),
            np.max(np.maximum(states[1:] - tb.upper, 0.0), initial=0.0)]
    goal = reformulate_bounds(deltas[-1], spec.goal)
    viol += [np.max(np.maximum(goal.lower[0] - states[-1], 0.0), initial=0.0),
             np.max(np.maximum(states[-1] - goal.upper[0], 0.0), initial=0.0)]
    pd = spec.position_dims
    for k in range(1, states.shape[0]):
        Q = box_to_ellipsoid(AxisAlignedBox.from_center(states[k], deltas[k]), pd).shape
        for obs in spec.obstacles:
            a, b = reformulate_obstacle(Q, obs, states[k, pd])
            viol.append(max(float(a @ states[k, pd] - b), 0.0))
    viol = [v for v in viol if np.isfinite(v)]
    return float(max(viol, default=0.0))


def _build_qp(spec: OcpSpec, mu_ref, u_ref, deltas, rho_x, rho_u):
    model = spec.model
    N, n, m = spec.horizon, model.n, model.m
    nx = (N + 1) * n
    nv = nx + N * m

    def xi(k):
        return slice(k * n, (k + 1) * n)

    def ui(k):
        return slice(nx + k * m, nx + (k + 1) * m)

    P = np.zeros((nv, nv))
    q = np.zeros(nv)
    for k in range(N):
        P[ui(k), ui(k)] = 2.0 * np.diag(spec.control_weights)
    P[xi(N), xi(N)] = 2.0 * np.diag(spec.terminal_weights)
    q[xi(N)] = -2.0 * spec.terminal_weights * spec.terminal_target

    A_rows, b_rows = [], []
    row = np.zeros((n, nv))
    row[:, xi(0)] = np.eye(n)
    A_rows.append(row)
    b_rows.append(spec.x0_nominal)
    theta = spec.theta_nominal
    for k in range(N):
        fk = model.step(mu_ref[k], u_ref[k], theta, spec.w_nominal)
        Ak, Bk, _, _ = model.jacobians(mu_ref[k], u_ref[k], theta, spec.w_nominal)
        row = np.zeros((n, nv))
        row[:, xi(k + 1)] = np.eye(n)
        row[:, xi(k)] = -Ak
        row[:, ui(k)] = -Bk
        A_rows.append(row)
        b_rows.append(fk - Ak @ mu_ref[k] - Bk @ u_ref[k])

    G_rows, h_rows = [], []

    def add_box(sl, lower, upper):
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            idx = sl.start + i
            if np.isfinite(hi):
                g = np.zeros(nv)
                g[idx] = 1.0
                G_rows.append(g)
                h_rows.append(hi)
            if np.isfinite(lo):
                g = np.zeros(nv)
                g[idx] = -1.0
                G_rows.append(g)
                h_rows.append(-lo)

    tb = reformulate_bounds(deltas, spec.state_bounds)
    goal = reformulate_bounds(deltas[N], spec.goal)
    if tb.infeasible[1:].any() or goal.infeasible.any():
        return None
    for k in range(1, N + 1):
        add_box(xi(k), tb.lower[k], tb.upper[k])
    add_box(xi(N), goal.lower[0], goal.upper[0])
    for k in range(N):
        add_box(ui(k), spec.control_bounds.lower, spec.control_bounds.upper)

    pd = spec.position_dims
    for k in range(1, N + 1):
        Q = box_to_ellipsoid(AxisAlignedBox.from_center(mu_ref[k], deltas[k]), pd).shape
        for obs in spec.obstacles:
            a, b = reformulate_obstacle(Q, obs, mu_ref[k, pd])
            g = np.zeros(nv)
            g[[k * n + d for d in pd]] = a
            G_rows.append(g)
            h_rows.append(b)

    if np.isfinite(rho_x):
        for k in range(1, N + 1):
            add_box(xi(k), mu_ref[k] - rho_x, mu_ref[k] + rho_x)
    if np.isfinite(rho_u):
        for k in range(N):
            add_box(ui(k), u_ref[k] - rho_u, u_ref[k] + rho_u)

    G = np.array(G_rows) if G_rows else np.zeros((0, nv))
    h = np.array(h_rows) if h_rows else np.zeros(0)
    return QpProblem(P, q, G, h, np.vstack(A_rows), np.concatenate(b_rows)), xi, ui


@dataclass(frozen=True)
class ScpConfig:
    max_iters: int = 15
    tol: float = 1e-3
    trust_fraction: float = 0.1
    trust_radius: Optional[float] = None
    control_trust_radius: Optional[float] = None
    qp_tol: float = 1e-6
    qp_max_iter: int = 20_000
    penalty: float = 1e3


def scp_solve(spec: OcpSpec, reach_method: str = "robup",
              cfg: SamplerConfig = SamplerConfig(100, 0),
              adv: AdversarialConfig = AdversarialConfig(),
              scp: ScpConfig = ScpConfig(),
              init_states=None, init_controls=None) -> ScpResult:
    """Solve the reachability-aware OCP from a straight-line (or given) guess."""
    model = spec.model
    N = spec.horizon
    u_ref = np.zeros((N, model.m)) if init_controls is None else np.array(init_controls, dtype=float)
    mu_ref = _straight_line(spec) if init_states is None else np.array(init_states, dtype=float)
    rho_x = scp.trust_radius if scp.trust_radius is not None else \
        _initial_trust_radius(spec.state_bounds, scp.trust_fraction)
    rho_u = scp.control_trust_radius if scp.control_trust_radius is not None else \
        _initial_trust_radius(spec.control_bounds, scp.trust_fraction)

    def merit(states, deltas, controls):
        return spec.cost(states, controls) + scp.penalty * constraint_violation(spec, states, deltas)

    history: List[ScpIterate] = []
    infeasible_streak = 0
    accept_streak = 0
    mu_prev = nominal_rollout(spec, u_ref)
    reach = _estimate(spec, u_ref, reach_method, cfg, adv)
    deltas = _deltas(reach, mu_prev)
    prev_merit = math.inf
    status = MAX_ITERS
    it = 0
    for it in range(1, scp.max_iters + 1):
        built = _build_qp(spec, mu_ref, u_ref, deltas, rho_x, rho_u)
        if built is None:
            res = None
            qp_status = PRIMAL_INFEASIBLE
        else:
            qp, xi, ui = built
            res = solve_qp(qp, tol=scp.qp_tol, max_iter=scp.qp_max_iter)
            qp_status = res.status
        if qp_status != SOLVED:
            infeasible_streak += 1
            history.append(ScpIterate(mu_ref, u_ref, deltas, rho_x, math.nan, False, qp_status, math.nan))
            logger.info("SCP iter %d: subproblem %s", it, qp_status)
            if infeasible_streak >= 2:
                status = INFEASIBLE
                break
            rho_x, rho_u = 2 * rho_x, 2 * rho_u
            continue
        infeasible_streak = 0
        u_new = np.stack([res.x[ui(k)] for k in range(N)])
        u_new = np.clip(u_new, spec.control_bounds.lower, spec.control_bounds.upper)
        mu_new = nominal_rollout(spec, u_new)
        reach_new = _estimate(spec, u_new, reach_method, cfg, adv)
        deltas_new = _deltas(reach_new, mu_new)
        new_merit = merit(mu_new, deltas_new, u_new)
        within_tr = np.max(np.abs(mu_new - mu_ref)) <= rho_x * (1 + 1e-9) + 1e-9
        change = float(np.max(np.abs(mu_new - mu_prev)) + np.max(np.abs(u_new - u_ref)))
        accepted = within_tr and new_merit <= prev_merit + 1e-9 * max(1.0, abs(prev_merit))
        history.append(ScpIterate(mu_new, u_new, deltas_new, rho_x, change, accepted, qp_status,
                                  spec.cost(mu_new, u_new)))
        logger.info("SCP iter %d: change %.3e merit %.4e accepted %s", it, change, new_merit, accepted)
        if not accepted:
            rho_x, rho_u = 0.5 * rho_x, 0.5 * rho_u
            accept_streak = 0
            if change < scp.tol:
                break
            continue
        accept_streak += 1
        if accept_streak >= 3:
            rho_x, rho_u = 2 * rho_x, 2 * rho_u
            accept_streak = 0
        mu_ref, u_ref, mu_prev = mu_new, u_new, mu_new
        reach, deltas, prev_merit = reach_new, deltas_new, new_merit
        feasible = constraint_violation(spec, mu_new, deltas_new) <= 1e-6
        if change < scp.tol and feasible:
            status = CONVERGED
            break
    return ScpResult(mu_prev, u_ref, it, status, history, reach)


def audit(spec: OcpSpec, controls, n_particles: int = 1000, seed: int = 2 ** 32 + 17,
          tol: float = 1e-9) -> dict:
    """Replay fresh randUP particles under ``controls``; count constraint violations."""
    reach = rand_up(spec.model, spec.uncertainty.with_controls(controls), SamplerConfig(n_particles, seed))
    xs = reach.states[:, 1:, :]
    b = spec.state_bounds
    bounds_bad = np.any((xs < b.lower - tol) | (xs > b.upper + tol), axis=(1, 2))
    obs_bad = np.zeros(xs.shape[0], dtype=bool)
    min_clearance = math.inf
    for obs in spec.obstacles:
        sd = obs.signed_distance(xs[..., spec.position_dims])
        obs_bad |= np.any(sd < -tol, axis=1)
        min_clearance = min(min_clearance, float(sd.min()))
    goal_bad = ~spec.goal.contains(reach.states[:, -1, :], tol)
    M = xs.shape[0]
    return {"n_particles": M,
            "bounds_violation_rate": float(bounds_bad.mean()),
            "obstacle_violation_rate": float(obs_bad.mean()),
            "goal_violation_rate": float(goal_bad.mean()),
            "min_clearance": min_clearance}
