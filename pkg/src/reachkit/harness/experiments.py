"""Experiment drivers: linear comparison, learned-model coverage, spacecraft studies.

Each driver is a pure function of its arguments (seeds included). Work
items fan out over a bounded thread pool and are merged by key, so
results do not depend on scheduling. Wall-clock times are only recorded
when ``record_timings=True`` because they would break byte-stable output.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from reachkit.dynamics import AdditiveLinear, MlpResidual, MlpWeights, Spacecraft13D
from reachkit.geometry import AxisAlignedBox, Ellipsoid, ellipsoid_volume, hull_volume
from reachkit.harness.baseline import grid_for_budget
from reachkit.lipschitz import LipschitzModelInfo, lipschitz_propagate
from reachkit.planner import Obstacle
from reachkit.randup import ReachEstimate, SamplerConfig, UncertaintySpec, rand_up
from reachkit.robup import AdversarialConfig, rob_up

logger = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (10, 32, 100, 316, 1000, 3162, 10000)


def derive_seed(base: int, *keys: int) -> int:
    """Independent 64-bit seed for a work item identified by ``keys``."""
    words = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in keys)).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


def thread_count(threads: Optional[int] = None) -> int:
    env = os.environ.get("REACHKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"REACHKIT_THREADS must be an integer, got {env!r}") from None
    return max(1, int(threads or 1))


def run_pool(items: Dict, fn: Callable, threads: Optional[int] = None) -> Dict:
    """Apply ``fn`` to every value of ``items``; results keyed like the input."""
    workers = thread_count(threads)
    keys = sorted(items)
    if workers == 1:
        return {k: fn(items[k]) for k in keys}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {k: pool.submit(fn, items[k]) for k in keys}
        return {k: futures[k].result() for k in keys}


@dataclass
class CoverageReport:
    """Rows of ``(method, M, k, mean, std)`` plus free-form extras."""

    kind: str
    rows: List[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def add(self, method: str, M: int, k: int, values, **extra) -> None:
        values = np.asarray(values, dtype=float)
        self.rows.append({"method": method, "M": int(M), "k": int(k),
                          "mean": float(values.mean()),
                          "std": float(values.std(ddof=1)) if values.size > 1 else 0.0, **extra})

    def lookup(self, **where) -> List[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in where.items())]

    def to_dict(self) -> dict:
        from reachkit.harness.config import REPORT_ID, to_jsonable
        doc = {"schema": REPORT_ID, "kind": self.kind, "rows": self.rows,
               "extras": to_jsonable(self.extras)}
        if self.timings:
            doc["timings"] = dict(sorted(self.timings.items()))
        return doc

    def to_csv(self) -> str:
        extra_cols = sorted({k for r in self.rows for k in r} - {"method", "M", "k", "mean", "std"})
        cols = ["method", "M", "k", "mean", "std"] + extra_cols
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join(_fmt(r.get(c, "")) for c in cols))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluations_to_reach(evaluations: Sequence[float], coverage: Sequence[float],
                         level: float = 0.9) -> float:
    """Evaluations needed for ``coverage >= level``.

    Interpolates the shortfall ``1 - coverage`` log-linearly in log
    evaluations between schedule points and extrapolates past the last
    point with the final segment's slope (a power-law tail). Returns
    ``inf`` when the curve is flat or rising at the end.
    """
    e = np.asarray(evaluations, dtype=float)
    s = np.maximum(1.0 - np.asarray(coverage, dtype=float), 1e-15)
    target = 1.0 - level
    order = np.argsort(e)
    e, s = e[order], s[order]
    if s[0] <= target:
        return float(e[0])
    for i in range(1, e.size):
        if s[i] <= target:
            t = (math.log(target) - math.log(s[i - 1])) / (math.log(s[i]) - math.log(s[i - 1]))
            return float(math.exp(math.log(e[i - 1]) + t * (math.log(e[i]) - math.log(e[i - 1]))))
    if e.size < 2 or s[-1] >= s[-2] or e[-1] == e[-2]:
        return math.inf
    slope = (math.log(s[-1]) - math.log(s[-2])) / (math.log(e[-1]) - math.log(e[-2]))
    return float(math.exp(math.log(e[-1]) + (math.log(target) - math.log(s[-1])) / slope))


# ---------------------------------------------------------------------------
# additive linear comparison


def linear_spec(n: int, ubar: float) -> UncertaintySpec:
    return UncertaintySpec.build(AxisAlignedBox(-np.ones(n), np.ones(n)),
                                 AxisAlignedBox(-ubar * np.ones(n), ubar * np.ones(n)), 1)


def _hull_coverage(points: np.ndarray, true_volume: float) -> float:
    from reachkit.geometry import convex_hull
    hull = convex_hull(points)
    return 0.0 if hull.is_degenerate else hull_volume(hull) / true_volume


def run_linear_comparison(ubars: Sequence[float] = (0.5, 1.0, 2.0), dims: Sequence[int] = (3, 4),
                          schedule: Sequence[int] = DEFAULT_SCHEDULE, repetitions: int = 10,
                          seed: int = 0, n_adv: int = 1, threads: Optional[int] = None,
                          record_timings: bool = False) -> CoverageReport:
    """Coverage of ``X_1`` versus dynamics evaluations for randUP, robUP! and the grid.

    Evaluations are ``M`` for randUP, ``M * (n_adv + 1)`` for robUP! and the
    number of grid points for the baseline (point mode).
    """
    report = CoverageReport("linear_comparison")
    schedule = sorted(int(b) for b in schedule)
    items = {}
    for i_n, n in enumerate(dims):
        for i_u, ubar in enumerate(ubars):
            for rep in range(repetitions):
                items[(i_n, i_u, rep)] = (n, ubar, rep, derive_seed(seed, i_n, i_u, rep))

    def work(item):
        n, ubar, rep, s = item
        model = AdditiveLinear(n, ubar)
        spec = linear_spec(n, ubar)
        true_vol = (2.0 * (1.0 + ubar)) ** n
        t0 = time.perf_counter()
        full = rand_up(model, spec, SamplerConfig(max(schedule), s))
        rand = {b: _hull_coverage(full.states[:b, 1, :], true_vol) for b in schedule}
        t1 = time.perf_counter()
        rob = {}
        for b in schedule:
            M = b // (n_adv + 1)
            if M < 2:
                continue
            est = rob_up(model, spec, SamplerConfig(M, derive_seed(s, b)), AdversarialConfig(n_adv=n_adv))
            rob[b] = _hull_coverage(est.states[:, 1, :], true_vol)
        t2 = time.perf_counter()
        return rand, rob, (t1 - t0, t2 - t1)

    results = run_pool(items, work, threads)
    curves = {}
    for i_n, n in enumerate(dims):
        for i_u, ubar in enumerate(ubars):
            reps = [results[(i_n, i_u, r)] for r in range(repetitions)]
            model = AdditiveLinear(n, ubar)
            for b in schedule:
                report.add("randup", b, 1, [r[0][b] for r in reps], n=n, ubar=ubar)
            for b in schedule:
                vals = [r[1][b] for r in reps if b in r[1]]
                if vals:
                    report.add("robup", (b // (n_adv + 1)) * (n_adv + 1), 1, vals, n=n, ubar=ubar)
            grid_e, grid_c = [], []
            for b in schedule:
                g = grid_for_budget(model, b, "point")
                if g.evaluations in grid_e:
                    continue
                grid_e.append(g.evaluations)
                grid_c.append(g.coverage)
                report.add("grid", g.evaluations, 1, [g.coverage], n=n, ubar=ubar)
            rand_mean = [np.mean([r[0][b] for r in reps]) for b in schedule]
            curves[f"n={n},ubar={ubar}"] = {
                "randup_evals_to_0.9": evaluations_to_reach(schedule, rand_mean),
                "grid_evals_to_0.9": evaluations_to_reach(grid_e, grid_c),
            }
            if record_timings:
                report.timings[f"randup n={n} ubar={ubar}"] = float(sum(r[2][0] for r in reps))
                report.timings[f"robup n={n} ubar={ubar}"] = float(sum(r[2][1] for r in reps))
    report.extras["evaluations_to_0.9"] = curves
    return report


# ---------------------------------------------------------------------------
# learned double-integrator coverage


@dataclass(frozen=True)
class NnInstance:
    x0: Ellipsoid
    controls: np.ndarray


NN_Q0 = 1e-3 * np.diag([10.0, 10.0, 2.0, 2.0])


def nn_instance(seed: int, horizon: int = 5) -> NnInstance:
    """Random initial ellipsoid and open-loop controls ``u_k = ubar + du_k``."""
    rng = np.random.default_rng(seed)
    mu0 = np.concatenate([rng.uniform(-5, 5, 2), rng.uniform(-1, 1, 2)])
    ubar = rng.uniform(-0.1, 0.1, 2)
    du = rng.uniform(-0.005, 0.005, (horizon, 2))
    return NnInstance(Ellipsoid(mu0, NN_Q0.copy()), ubar + du)


def run_nn_coverage(weights: MlpWeights, n_instances: int = 100, seed: int = 0, horizon: int = 5,
                    randup_particles: int = 3000, robup_particles: int = 2000, n_adv: int = 1,
                    lipschitz_constants: Sequence[float] = (1.0, 1.0, 0.0, 0.0),
                    containment_samples: int = 1000, threads: Optional[int] = None,
                    record_timings: bool = False) -> CoverageReport:
    """Coverage of randUP, robUP! and the Lipschitz tube on the learned model.

    The true reachable sets are affine images of ``X0`` under the exact
    double integrator, whose state matrix has unit determinant, so the
    true volume equals ``vol(X0)`` at every step.
    """
    model = MlpResidual(weights, 4, 2)
    report = CoverageReport("nn_coverage")
    items = {i: (i, derive_seed(seed, i)) for i in range(n_instances)}

    def work(item):
        i, s = item
        inst = nn_instance(s, horizon)
        spec = UncertaintySpec.build(inst.x0, inst.controls, horizon)
        true_vol = ellipsoid_volume(inst.x0)
        out = {}
        t0 = time.perf_counter()
        est = rand_up(model, spec, SamplerConfig(randup_particles, derive_seed(s, 1)))
        out["randup"] = [hull_volume(est.hull(k)) / true_vol for k in range(1, horizon + 1)]
        t1 = time.perf_counter()
        est = rob_up(model, spec, SamplerConfig(robup_particles, derive_seed(s, 2)),
                     AdversarialConfig(n_adv=n_adv))
        out["robup"] = [hull_volume(est.hull(k)) / true_vol for k in range(1, horizon + 1)]
        t2 = time.perf_counter()
        info = LipschitzModelInfo.from_residual_model(model, inst.controls, lipschitz_constants)
        probe = rand_up(model, spec, SamplerConfig(containment_samples, derive_seed(s, 3)))
        for name, literal in (("lipschitz", False), ("lipschitz_paper", True)):
            tube = lipschitz_propagate(info, inst.x0, horizon, paper_literal=literal)
            out[name] = [ellipsoid_volume(e) / true_vol for e in tube[1:]]
            out[name + "_violations"] = int(sum(
                np.count_nonzero(tube[k].mahalanobis_sq(probe.states[:, k, :]) > 1.0 + 1e-9)
                for k in range(1, horizon + 1)))
        t3 = time.perf_counter()
        out["times"] = (t1 - t0, t2 - t1, t3 - t2)
        return out

    results = run_pool(items, work, threads)
    per = {m: np.array([results[i][m] for i in range(n_instances)])
           for m in ("randup", "robup", "lipschitz", "lipschitz_paper")}
    sizes = {"randup": randup_particles, "robup": robup_particles * (n_adv + 1),
             "lipschitz": 0, "lipschitz_paper": 0}
    for method, arr in per.items():
        for k in range(1, horizon + 1):
            report.add(method, sizes[method], k, arr[:, k - 1])
    report.extras["robup_above_randup_fraction"] = [
        float(np.mean(per["robup"][:, k] > per["randup"][:, k])) for k in range(horizon)]
    report.extras["lipschitz_violations"] = int(sum(results[i]["lipschitz_violations"] for i in range(n_instances)))
    report.extras["lipschitz_paper_violations"] = int(
        sum(results[i]["lipschitz_paper_violations"] for i in range(n_instances)))
    report.extras["containment_samples_per_instance"] = containment_samples
    report.extras["per_instance"] = {m: arr.tolist() for m, arr in per.items()}
    if record_timings:
        for j, m in enumerate(("randup", "robup", "lipschitz")):
            report.timings[m] = float(sum(results[i]["times"][j] for i in range(n_instances)))
    return report


# ---------------------------------------------------------------------------
# spacecraft


def spacecraft_uncertainty(horizon: int = 21, controls=None) -> UncertaintySpec:
    """Default spacecraft ``X0``, ``Theta`` and ``W``; controls pinned to ``controls``."""
    x0 = np.zeros(13)
    x0[9] = 1.0
    hw = np.r_[[0.05] * 3, [0.01] * 3, [0.0] * 4, [0.01] * 3]
    wb = np.r_[[1e-4] * 3, [5e-4] * 3, [1e-4] * 7]
    controls = np.zeros((horizon, 6)) if controls is None else controls
    return UncertaintySpec.build(AxisAlignedBox.from_center(x0, hw), controls, horizon,
                                 AxisAlignedBox([7.1, 0.065, 0.065, 0.065], [7.3, 0.075, 0.075, 0.075]),
                                 AxisAlignedBox(-wb, wb))


def run_spacecraft_sweep(particle_counts: Sequence[int] = (50, 100, 200, 400),
                         adv_iters: Sequence[int] = (0, 1, 2, 3, 4, 5), repetitions: int = 20,
                         seed: int = 0, horizon: int = 21, force_bound: float = 0.05,
                         torque_bound: float = 1e-3, threads: Optional[int] = None,
                         record_timings: bool = False) -> CoverageReport:
    """Positional hull volume at ``k = N`` relative to the largest ``(M, n_adv)`` run.

    Every repetition draws a random open-loop control sequence; all
    configurations of a repetition share its sampling seed so that
    ``n_adv = 0`` runs are nested in ``M``.
    """
    model = Spacecraft13D()
    report = CoverageReport("spacecraft_sweep")
    pos = [0, 1, 2]
    items = {r: (r, derive_seed(seed, r)) for r in range(repetitions)}
    counts = sorted(particle_counts)
    advs = sorted(adv_iters)

    def work(item):
        r, s = item
        rng = np.random.default_rng(derive_seed(s, 0))
        bound = np.r_[[force_bound] * 3, [torque_bound] * 3]
        spec = spacecraft_uncertainty(horizon, rng.uniform(-bound, bound, (horizon, 6)))
        vols, times = {}, {}
        for M in counts:
            for a in advs:
                t0 = time.perf_counter()
                cfg = SamplerConfig(M, derive_seed(s, 1))
                est = rand_up(model, spec, cfg) if a == 0 else \
                    rob_up(model, spec, cfg, AdversarialConfig(n_adv=a))
                vols[(M, a)] = hull_volume(est.hull(horizon, pos))
                times[(M, a)] = time.perf_counter() - t0
        ref = vols[(counts[-1], advs[-1])]
        return {key: v / ref for key, v in vols.items()}, times

    results = run_pool(items, work, threads)
    for M in counts:
        for a in advs:
            report.add("robup" if a else "randup", M * (a + 1), horizon,
                       [results[r][0][(M, a)] for r in range(repetitions)], particles=M, n_adv=a)
            if record_timings:
                report.timings[f"M={M},n_adv={a}"] = float(
                    np.mean([results[r][1][(M, a)] for r in range(repetitions)]))
    return report


# ---------------------------------------------------------------------------
# sensitivity


@dataclass(frozen=True)
class Halfspace:
    """State constraint ``a . x <= b``; signed distance is positive inside."""

    a: np.ndarray
    b: float

    def signed_distance(self, states):
        a = np.asarray(self.a, dtype=float)
        return (self.b - np.asarray(states) @ a) / np.linalg.norm(a)


@dataclass(frozen=True)
class ObstacleConstraint:
    """Clearance of the position coordinates ``dims`` from an obstacle."""

    obstacle: Obstacle
    dims: Sequence[int] = (0, 1, 2)

    def signed_distance(self, states):
        return self.obstacle.signed_distance(np.asarray(states)[..., list(self.dims)])


def sensitivity_report(estimate: ReachEstimate, constraints: Iterable) -> List[dict]:
    """Per-timestep particle with the smallest constraint clearance.

    Returns one row per ``k >= 1`` with the particle index, its signed
    distance, the constraint index, and the particle's ``theta`` and
    disturbances ``w_0..w_{k-1}``.
    """
    constraints = list(constraints)
    if not constraints:
        raise ValueError("need at least one constraint")
    rows = []
    for k in range(1, estimate.horizon + 1):
        xs = estimate.particles(k)
        dist = np.stack([c.signed_distance(xs) for c in constraints], axis=1)
        per_particle = dist.min(axis=1)
        j = int(np.argmin(per_particle))
        row = {"k": k, "particle": j, "signed_distance": float(per_particle[j]),
               "constraint": int(np.argmin(dist[j])), "state": xs[j].tolist()}
        if estimate.params is not None:
            row["theta"] = estimate.params.theta[j].tolist()
            row["disturbances"] = estimate.params.disturbances[j, :k].tolist()
        rows.append(row)
    return rows
