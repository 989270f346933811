"""Command-line interface: ``reachkit {reach,plan,experiment,train-mlp}``.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 infeasible plan.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

from reachkit.dynamics import MlpWeights
from reachkit.geometry import Ellipsoid, GeometryError, box_to_ellipsoid, ellipsoid_volume
from reachkit.harness import config as C
from reachkit.harness import experiments as E
from reachkit.harness.training import DatasetSpec, TrainingConfig, TrainingDiverged, train_mlp, validation_loss
from reachkit.lipschitz import LipschitzModelInfo, LipschitzOverflow, lipschitz_propagate, tube_to_dict
from reachkit.planner import CONVERGED, audit, scp_solve
from reachkit.randup import rand_up, volume_of
from reachkit.robup import rob_up

logger = logging.getLogger("reachkit")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INFEASIBLE = 0, 1, 2, 3
EXPERIMENTS = ("linear_comparison", "nn_coverage", "spacecraft_sweep", "spacecraft_plan", "sensitivity")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def data_path(name: str) -> Path:
    """Path of a file shipped in ``reachkit/data``."""
    return Path(str(resources.files("reachkit") / "data" / name))


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="JSON config or problem file")
    p.add_argument("--seed", type=int, help="unsigned 64-bit sampling seed")
    p.add_argument("--out", type=Path, help="output directory (default: stdout)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (REACHKIT_THREADS overrides)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--timings", action="store_true", help="also write wall-clock timings.json")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reachkit", description="Sampling-based reachability analysis and planning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("reach", help="estimate reachable sets for a problem file")
    _common(p)
    p.add_argument("--method", choices=("randup", "robup", "lipschitz"), default="randup")
    p.add_argument("--particles", type=int)
    p.add_argument("--adv-iters", type=int)

    p = sub.add_parser("plan", help="reachability-aware trajectory optimisation")
    _common(p)
    p.add_argument("--method", choices=("randup", "robup"))
    p.add_argument("--particles", type=int)
    p.add_argument("--adv-iters", type=int)

    p = sub.add_parser("experiment", help="run a named study")
    p.add_argument("kind", choices=EXPERIMENTS)
    _common(p, config_required=False)
    p.add_argument("--particles", type=int)
    p.add_argument("--adv-iters", type=int)

    p = sub.add_parser("train-mlp", help="train the residual MLP on double-integrator data")
    _common(p, config_required=False)
    return parser


def _check_seed(seed: Optional[int]) -> None:
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise UsageError("--seed must be an unsigned 64-bit integer")


def _emit(args, name: str, text: str) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / name).write_text(text)


def _emit_timings(args, timings: dict) -> None:
    if args.timings:
        if args.out is None:
            sys.stderr.write(C.dumps(timings))
        else:
            _emit(args, "timings.json", C.dumps(timings))


def _csv(header: List[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reach


def _lipschitz_info(model, spec, doc):
    if "lipschitz" not in doc:
        raise C.ConfigError("method lipschitz needs a 'lipschitz' section with constants")
    if "sequence" not in doc["controls"]:
        raise C.ConfigError("method lipschitz needs a fixed control sequence")
    controls = np.asarray(doc["controls"]["sequence"], float)
    L = doc["lipschitz"]["constants"]
    if hasattr(model, "residual"):
        return LipschitzModelInfo.from_residual_model(model, controls, L)
    if spec.theta_set.dim or spec.disturbance_set.dim:
        raise C.ConfigError("method lipschitz does not handle parameter or disturbance uncertainty")

    def g(x, k):
        u = np.broadcast_to(controls[k], x.shape[:-1] + controls.shape[-1:])
        return model.step(x, u, np.zeros(x.shape[:-1] + (0,)), np.zeros(x.shape[:-1] + (0,))) - x

    return LipschitzModelInfo(np.eye(model.n), np.zeros(model.n), g, L)


def cmd_reach(args) -> int:
    doc = C.load_config(args.config)
    if doc["schema"] != C.REACH_SCHEMA_ID:
        raise C.ConfigError(f"reach expects a {C.REACH_SCHEMA_ID} file")
    model = C.build_model(doc["model"], doc["_base"])
    spec = C.build_uncertainty(doc, model)
    hull_dims = doc.get("hull_dims")
    if hull_dims is None and model.n > 6:
        raise C.ConfigError("hull_dims is required for models with more than 6 states")
    t0 = time.perf_counter()
    if args.method == "lipschitz":
        info = _lipschitz_info(model, spec, doc)
        e0 = spec.x0_set if isinstance(spec.x0_set, Ellipsoid) else box_to_ellipsoid(spec.x0_set, model.n)
        tube = lipschitz_propagate(info, e0, spec.horizon,
                                   paper_literal=doc["lipschitz"].get("paper_literal", False))
        result = {"schema": C.REACH_RESULT_ID, **tube_to_dict(tube)}
        rows = []
        for k, e in enumerate(tube):
            r = np.sqrt(np.clip(np.diag(e.shape), 0, None))
            rows.append(["lipschitz", 0, k, *e.center, *(e.center - r), *(e.center + r), ellipsoid_volume(e)])
    else:
        cfg = C.build_sampler(doc.get("sampler"), args.particles, args.seed)
        if args.method == "robup":
            adv = C.build_adversarial(doc.get("adversarial"), args.adv_iters)
            est = rob_up(model, spec, cfg, adv, hull_dims=hull_dims)
        else:
            est = rand_up(model, spec, cfg, hull_dims=hull_dims)
        result = {"schema": C.REACH_RESULT_ID, "seed": cfg.seed, **est.to_dict()}
        if getattr(est, "diagnostics", None):
            result["diagnostics"] = est.diagnostics
        rows = []
        for k in range(spec.horizon + 1):
            box = est.outer_box(k)
            vol = volume_of(est.hull(k))
            rows.append([est.method, est.n_particles, k, *est.center(k), *box.lower, *box.upper, vol])
    elapsed = time.perf_counter() - t0
    n = model.n
    header = (["method", "M", "k"] + [f"center_{i}" for i in range(n)] + [f"lower_{i}" for i in range(n)]
              + [f"upper_{i}" for i in range(n)] + ["volume"])
    if args.format == "csv":
        _emit(args, "reach.csv", _csv(header, rows))
    else:
        _emit(args, "reach.json", C.dumps(C.to_jsonable(result)))
    _emit_timings(args, {"reach_seconds": elapsed})
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan


def _plan(doc, args):
    spec, scp_cfg, method, init_states, init_controls = C.build_ocp(doc)
    method = args.method or method
    cfg = C.build_sampler(doc.get("sampler"), getattr(args, "particles", None), args.seed)
    adv = C.build_adversarial(doc.get("adversarial"), getattr(args, "adv_iters", None))
    t0 = time.perf_counter()
    res = scp_solve(spec, method, cfg, adv, scp_cfg, init_states, init_controls)
    elapsed = time.perf_counter() - t0
    return spec, res, elapsed


def _plan_outputs(doc, spec, res):
    audit_doc = doc.get("audit", {})
    audit_seed = audit_doc.get("seed", E.derive_seed(2 ** 32 + 17, 0))
    report = audit(spec, res.controls, audit_doc.get("particles", 1000), audit_seed)
    history = [{"iteration": i + 1, "accepted": h.accepted, "qp_status": h.qp_status,
                "trust_radius": h.trust_radius, "change": h.change, "cost": h.cost,
                "max_delta": h.deltas.max(axis=0)} for i, h in enumerate(res.history)]
    result = {"schema": C.PLAN_RESULT_ID, "status": res.status, "iterations": res.iterations,
              "states": res.states, "controls": res.controls, "history": history,
              "cost": spec.cost(res.states, res.controls), "audit": report}
    n, m = spec.model.n, spec.model.m
    header = ["k"] + [f"x_{i}" for i in range(n)] + [f"u_{j}" for j in range(m)]
    rows = []
    for k in range(spec.horizon + 1):
        u = res.controls[k] if k < spec.horizon else np.full(m, np.nan)
        rows.append([k, *res.states[k], *u])
    return result, _csv(header, rows)


def cmd_plan(args) -> int:
    doc = C.load_config(args.config)
    if doc["schema"] != C.OCP_SCHEMA_ID:
        raise C.ConfigError(f"plan expects a {C.OCP_SCHEMA_ID} file")
    spec, res, elapsed = _plan(doc, args)
    result, csv = _plan_outputs(doc, spec, res)
    if args.format == "csv":
        _emit(args, "trajectory.csv", csv)
    else:
        _emit(args, "plan.json", C.dumps(C.to_jsonable(result)))
    _emit_timings(args, {"plan_seconds": elapsed})
    logger.info("plan status %s after %d iterations", res.status, res.iterations)
    return EXIT_OK if res.status == CONVERGED else EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# experiments


def _experiment_doc(args) -> dict:
    if args.config is None:
        return {"schema": C.EXPERIMENT_SCHEMA_ID, "kind": args.kind, "_base": None}
    doc = C.load_config(args.config)
    if doc["schema"] != C.EXPERIMENT_SCHEMA_ID:
        raise C.ConfigError(f"experiment expects a {C.EXPERIMENT_SCHEMA_ID} file")
    if doc["kind"] != args.kind:
        raise C.ConfigError(f"config is for experiment {doc['kind']!r}, not {args.kind!r}")
    return doc


def _resolve(doc, key, default_name):
    if key in doc:
        p = Path(doc[key])
        return p if p.is_absolute() or doc["_base"] is None else Path(doc["_base"]) / p
    return data_path(default_name)


def cmd_experiment(args) -> int:
    doc = _experiment_doc(args)
    params = dict(doc.get("params", {}))
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    if args.out is None and "output_dir" in doc:
        args.out = Path(doc["output_dir"])
    common = {"seed": seed, "threads": args.threads, "record_timings": args.timings}
    kind = args.kind
    t0 = time.perf_counter()
    if kind in ("spacecraft_plan", "sensitivity"):
        return _problem_experiment(args, doc, kind, seed)
    if kind == "linear_comparison":
        if "schedule" in doc:
            params["schedule"] = doc["schedule"]
        if "repetitions" in doc:
            params["repetitions"] = doc["repetitions"]
        if args.adv_iters is not None:
            params["n_adv"] = args.adv_iters
        report = E.run_linear_comparison(**params, **common)
    elif kind == "nn_coverage":
        weights = MlpWeights.load(_resolve(doc, "weights", "double_integrator_mlp.json"))
        if "repetitions" in doc:
            params["n_instances"] = doc["repetitions"]
        if args.particles is not None:
            params["randup_particles"] = args.particles
            params["robup_particles"] = max(2, args.particles * 2 // 3)
        if args.adv_iters is not None:
            params["n_adv"] = args.adv_iters
        report = E.run_nn_coverage(weights, **params, **common)
    else:
        if "repetitions" in doc:
            params["repetitions"] = doc["repetitions"]
        if "schedule" in doc:
            params["particle_counts"] = doc["schedule"]
        if "n_adv" in doc:
            params["adv_iters"] = doc["n_adv"]
        report = E.run_spacecraft_sweep(**params, **common)
    elapsed = time.perf_counter() - t0
    out = report.to_dict()
    timings = out.pop("timings", {})
    C.validate(out, C.REPORT_SCHEMA)
    if args.out is None:
        sys.stdout.write(report.to_csv() if args.format == "csv" else C.dumps(out))
    else:
        _emit(args, "coverage.csv", report.to_csv())
        _emit(args, "report.json", C.dumps(out))
    _emit_timings(args, {"total_seconds": elapsed, **timings})
    return EXIT_OK


def _problem_experiment(args, doc, kind, seed) -> int:
    problem = C.load_config(_resolve(doc, "problem", "spacecraft.json"))
    args.seed = seed
    spec, res, elapsed = _plan(problem, args)
    if kind == "spacecraft_plan":
        result, csv = _plan_outputs(problem, spec, res)
        if args.out is None:
            sys.stdout.write(csv if args.format == "csv" else C.dumps(C.to_jsonable(result)))
        else:
            _emit(args, "trajectory.csv", csv)
            _emit(args, "plan.json", C.dumps(C.to_jsonable(result)))
        _emit_timings(args, {"plan_seconds": elapsed})
        return EXIT_OK if res.status == CONVERGED else EXIT_INFEASIBLE
    params = doc.get("params", {})
    cfg = C.build_sampler(problem.get("sampler"), args.particles or params.get("particles"), seed)
    adv = C.build_adversarial(problem.get("adversarial"), args.adv_iters)
    est = rob_up(spec.model, spec.uncertainty.with_controls(res.controls), cfg, adv)
    constraints = [E.ObstacleConstraint(o, spec.position_dims) for o in spec.obstacles]
    rows = E.sensitivity_report(est, constraints)
    header = ["k", "particle", "signed_distance", "constraint"] + \
        [f"theta_{i}" for i in range(spec.model.p)]
    csv = _csv(header, [[r["k"], r["particle"], r["signed_distance"], r["constraint"], *r["theta"]]
                        for r in rows])
    doc_out = {"schema": C.REPORT_ID, "kind": "sensitivity", "rows": [], "plan_status": res.status,
               "extremal": rows}
    if args.out is None:
        sys.stdout.write(csv if args.format == "csv" else C.dumps(C.to_jsonable(doc_out)))
    else:
        _emit(args, "sensitivity.csv", csv)
        _emit(args, "sensitivity.json", C.dumps(C.to_jsonable(doc_out)))
    _emit_timings(args, {"plan_seconds": elapsed})
    return EXIT_OK


# ---------------------------------------------------------------------------
# training


def cmd_train(args) -> int:
    doc = {}
    if args.config is not None:
        doc = C.load_config(args.config)
        if doc["schema"] != C.TRAIN_SCHEMA_ID:
            raise C.ConfigError(f"train-mlp expects a {C.TRAIN_SCHEMA_ID} file")
    fields = {k: v for k, v in doc.items() if k not in ("schema", "_base", "dataset")}
    if "hidden" in fields:
        fields["hidden"] = tuple(fields["hidden"])
    if args.seed is not None:
        fields["seed"] = args.seed
    cfg = TrainingConfig(**fields)
    data = DatasetSpec(**{k: tuple(v) for k, v in doc.get("dataset", {}).items()})
    t0 = time.perf_counter()
    weights = train_mlp(data, cfg)
    elapsed = time.perf_counter() - t0
    loss = validation_loss(weights, data)
    logger.info("validation loss %.3e", loss)
    _emit(args, "weights.json", json.dumps(weights.to_dict()) + "\n")
    if args.out is not None:
        _emit(args, "training.json", C.dumps({"validation_loss": loss, "steps": cfg.steps, "seed": cfg.seed}))
    _emit_timings(args, {"train_seconds": elapsed})
    return EXIT_OK


COMMANDS = {"reach": cmd_reach, "plan": cmd_plan, "experiment": cmd_experiment, "train-mlp": cmd_train}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_seed(args.seed)
    except UsageError as err:
        sys.stderr.write(f"{err}\n")
        return EXIT_USAGE
    except SystemExit as err:  # --help
        return EXIT_OK if not err.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (C.ConfigError, UsageError) as err:
        sys.stderr.write(f"reachkit: {err}\n")
        return EXIT_USAGE
    except (FloatingPointError, LipschitzOverflow, TrainingDiverged, GeometryError, np.linalg.LinAlgError) as err:
        sys.stderr.write(f"reachkit: numerical failure: {err}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
