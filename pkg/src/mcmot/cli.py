"""``fota`` command line: generate, track, eval, solve, loss, compare.

Exit codes: 0 success, 1 I/O error, 2 bad config or input, 3 numerical failure.
Results go to stdout or files; progress and errors go to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__, fota, metrics, scenario
from .geometry import DegenerateBoxError, FilterDivergenceError
from .model import Box3D
from .scenario import ScenarioConfig, ScenarioFormatError
from .setloss import GroundTruthTrack, LossWeights, QueryPrediction, match_queries, set_prediction_loss
from .tracker import METRICS, FrameResult, TrackerConfig, run

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3
RESULTS_SCHEMA_VERSION = 1


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_manifest(path: Path, command: str, config: dict[str, Any], inputs: Sequence[Path],
                   outputs: Sequence[Path], timings: dict[str, float]) -> None:
    doc = {
        "tool_version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "timings_s": timings,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})", EXIT_INVALID) from exc


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ generate

def scenario_config_from_args(args: argparse.Namespace) -> ScenarioConfig:
    base: dict[str, Any] = _read_json(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise CliError("scenario config must be a JSON object", EXIT_INVALID)
    overrides = {
        "seed": args.seed,
        "num_cameras": args.num_cameras,
        "num_objects": args.num_objects,
        "num_frames": args.num_frames,
        "miss_rate": args.miss_rate,
        "clutter_rate": args.clutter_rate,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.noise is not None:
        base["detection_noise_sigma"] = list(args.noise)
    return ScenarioConfig.from_dict(base)


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = scenario_config_from_args(args)
    t0 = time.perf_counter()
    sc = scenario.generate(cfg)
    t1 = time.perf_counter()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fp, gp = scenario.save(sc, args.out)
    t2 = time.perf_counter()
    inputs = [Path(args.config)] if args.config else []
    write_manifest(Path(f"{args.out}.manifest.json"), "generate", cfg.to_dict(), inputs, [fp, gp],
                   {"generate": t1 - t0, "write": t2 - t1})
    _log(f"wrote {fp} and {gp} ({len(sc.frames)} frames, "
         f"{sum(len(f.detections) for f in sc.frames)} detections)")
    return EXIT_OK


# --------------------------------------------------------------------- track

def tracker_config_from_args(args: argparse.Namespace) -> TrackerConfig:
    base: dict[str, Any] = _read_json(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise CliError("tracker config must be a JSON object", EXIT_INVALID)
    if args.metric is not None:
        if base.get("distance_metric") != args.metric:
            base.pop("gate_threshold", None)
        base["distance_metric"] = args.metric
    if args.association is not None:
        base["association"] = args.association
    if args.gate is not None:
        base["gate_threshold"] = args.gate
    return TrackerConfig.from_dict(base)


def write_results(path: Path, cfg: TrackerConfig, results: Sequence[FrameResult]) -> None:
    header = {"schema_version": RESULTS_SCHEMA_VERSION, "config": cfg.to_dict()}
    scenario.write_jsonl(path, header, [r.to_dict() for r in results])


def read_results(path: str | Path) -> list[FrameResult]:
    _, rows = scenario._read(Path(path), FrameResult.from_dict)
    return rows


def cmd_track(args: argparse.Namespace) -> int:
    cfg = tracker_config_from_args(args)
    t0 = time.perf_counter()
    _, frames = scenario.read_frames(args.frames)
    t1 = time.perf_counter()
    profile: dict[str, float] = {}
    results = run(frames, cfg, profile)
    t2 = time.perf_counter()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(out, cfg, results)
    inputs = [Path(args.frames)] + ([Path(args.config)] if args.config else [])
    write_manifest(Path(f"{out}.manifest.json"), "track", cfg.to_dict(), inputs, [out],
                   {"read": t1 - t0, "track": t2 - t1, "cost_matrix": profile.get("cost_s", 0.0),
                    "association": profile.get("assign_s", 0.0)})
    ids = {o.track_id for r in results for o in r.outputs}
    _log(f"tracked {len(results)} frames with {cfg.association}/{cfg.distance_metric}: {len(ids)} confirmed tracks")
    return EXIT_OK


# ---------------------------------------------------------------------- eval

def report_dict(gt, results, match_dist: float, n_points: int) -> tuple[metrics.MetricReport, dict[str, Any]]:
    report = metrics.evaluate(gt, results, match_dist, n_points)
    doc = report.to_dict()
    doc["motion_errors"] = metrics.motion_errors(metrics.matched_pairs(gt, results, match_dist))
    return report, doc


def cmd_eval(args: argparse.Namespace) -> int:
    _, gt = scenario.read_gt(args.gt)
    results = read_results(args.results)
    report, doc = report_dict(gt, results, args.match_dist, args.n_points)
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.format == "json":
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(metrics.format_table([((args.label,), metrics.table_row(report))]))
    return EXIT_OK


# --------------------------------------------------------------------- solve

def cmd_solve(args: argparse.Namespace) -> int:
    doc = _read_json(args.problem)
    if not isinstance(doc, dict) or "cost" not in doc:
        raise CliError(f"{args.problem}: problem document needs a 'cost' matrix", EXIT_INVALID)
    try:
        cost = np.array(doc["cost"], dtype=float, ndmin=2)
        problem = fota.make_problem(
            cost, doc.get("p"), doc.get("q"), doc.get("s"), doc.get("epsilon"),
            gamma=float(doc.get("gamma", 0.1)), max_iters=int(doc.get("max_iters", 50)),
            tol=float(doc.get("tol", 1e-6)))
    except (TypeError, ValueError) as exc:
        raise CliError(f"{args.problem}: {exc}", EXIT_INVALID) from exc
    if problem is None:
        n, m = cost.shape
        out = {"plan": None, "assignment": [fota.UNMATCHED] * m, "marginal_error": 0.0,
               "converged": True, "iterations_used": 0, "transport_cost": 0.0}
    else:
        plan, assignment = fota.solve_with_plan(problem, float(doc.get("min_mass", 0.3)))
        out = {
            "plan": plan.plan.tolist(),
            "assignment": list(assignment.detection_to_track),
            "marginal_error": plan.marginal_error,
            "converged": plan.converged,
            "iterations_used": plan.iterations_used,
            "transport_cost": fota.transport_cost(problem, plan.plan),
        }
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.format == "table":
        text = "".join(f"{k}: {v}\n" for k, v in sorted(out.items()) if k != "plan")
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------- loss

def _box(d: Any) -> Box3D:
    return Box3D(tuple(d["center"]), tuple(d["dims"]), d.get("yaw", 0.0))


def cmd_loss(args: argparse.Namespace) -> int:
    doc = _read_json(args.document)
    try:
        gts = [GroundTruthTrack(int(g["track_id"]), int(g["class_id"]), _box(g["box"]),
                                bool(g.get("visible_t", True)), bool(g.get("visible_prev", False)))
               for g in doc.get("gts", [])]
        preds = [QueryPrediction(_box(p["box"]), tuple(p["class_probs"]), p.get("prev_track_id"))
                 for p in doc.get("preds", [])]
        weights = LossWeights(**doc.get("weights", {}))
        matching = match_queries(gts, preds, weights)
        loss = set_prediction_loss(gts, preds, matching, weights)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{args.document}: {type(exc).__name__}: {exc}", EXIT_INVALID) from exc
    out = {"matching": list(matching), "loss": loss}
    if args.format == "table":
        text = f"loss: {loss:.6f}\nmatching: {list(matching)}\n"
    else:
        text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)
    return EXIT_OK


# ------------------------------------------------------------------- compare

def compare_variants(scenarios: Sequence[scenario.Scenario], base_cfg: TrackerConfig, match_dist: float,
                     n_points: int) -> dict[tuple[str, str], list[tuple[metrics.MetricReport, float]]]:
    """Every metric x associator on every scenario; value list holds (report, fps) per scenario."""
    out: dict[tuple[str, str], list[tuple[metrics.MetricReport, float]]] = {}
    for sc in scenarios:
        for metric in METRICS:
            for assoc in ("km", "fota"):
                cfg = replace(base_cfg, distance_metric=metric, association=assoc, gate_threshold=None)
                profile: dict[str, float] = {}
                results = run(sc.frames, cfg, profile)
                spent = profile.get("cost_s", 0.0) + profile.get("assign_s", 0.0)
                fps = len(sc.frames) / spent if spent > 0 else float("inf")
                report = metrics.evaluate(sc.gt, results, match_dist, n_points)
                out.setdefault((metric, assoc), []).append((report, fps))
                _log(f"seed {sc.config.seed} {metric:>11s} {assoc:>4s}: IDS {report.ids} MOTA {report.mota:.3f}")
    return out


def _aggregate(values: Sequence[float], as_int: bool) -> Any:
    if len(values) == 1:
        return values[0]
    mean, std = float(np.mean(values)), float(np.std(values))
    return f"{mean:.1f}±{std:.1f}" if as_int else f"{mean:.3f}±{std:.3f}"


_INT_COLS = {"MT", "ML", "IDS", "FRAG", "FPS"}


def cmd_compare(args: argparse.Namespace) -> int:
    if (args.frames is None) != (args.gt is None):
        raise CliError("compare needs both FRAMES and GT, or neither for the default benchmark", EXIT_INVALID)
    if args.seeds < 1:
        raise CliError("--seeds must be >= 1", EXIT_INVALID)
    if args.frames is not None:
        header, frames = scenario.read_frames(args.frames)
        _, gt = scenario.read_gt(args.gt)
        base = ScenarioConfig.from_dict(header["config"])
        scenarios = [scenario.Scenario(base, tuple(gt), tuple(frames))]
    else:
        base = ScenarioConfig()
        scenarios = [scenario.generate(base)]
    # further seeds regenerate the same configuration with consecutive seeds
    scenarios += [scenario.generate(replace(base, seed=base.seed + k)) for k in range(1, args.seeds)]
    tcfg = tracker_config_from_args(argparse.Namespace(config=args.config, metric=None, association=None, gate=None))
    table = compare_variants(scenarios, tcfg, args.match_dist, args.n_points)

    if args.format == "json":
        doc = [{"metric": m, "association": a,
                "runs": [{"seed": sc.config.seed, "fps": fps, **rep.to_dict()}
                         for sc, (rep, fps) in zip(scenarios, vals)]}
               for (m, a), vals in table.items()]
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    rows = []
    for (m, a), vals in table.items():
        per_col = list(zip(*[metrics.table_row(rep, fps) for rep, fps in vals]))
        cells = [_aggregate(list(col), name in _INT_COLS) for name, col in zip(metrics.TABLE_COLUMNS, per_col)]
        rows.append(((m, a.upper()), cells))
    sys.stdout.write(metrics.format_table(rows, ("Cost matrix", "Association")))
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fota", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic scenario (frames + ground truth + manifest)")
    g.add_argument("--config", help="scenario config JSON")
    g.add_argument("--out", required=True, help="output prefix")
    g.add_argument("--seed", type=int)
    g.add_argument("--num-cameras", type=int)
    g.add_argument("--num-objects", type=int)
    g.add_argument("--num-frames", type=int)
    g.add_argument("--miss-rate", type=float)
    g.add_argument("--clutter-rate", type=float)
    g.add_argument("--noise", type=float, nargs=3, metavar=("POS", "DIMS", "YAW"))
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("track", help="run the tracker over a frames file")
    t.add_argument("frames")
    t.add_argument("--out", required=True, help="results JSONL path")
    t.add_argument("--config", help="tracker config JSON")
    t.add_argument("--association", choices=("fota", "km"))
    t.add_argument("--metric", choices=METRICS)
    t.add_argument("--gate", type=float)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score tracker results against ground truth")
    e.add_argument("gt")
    e.add_argument("results")
    e.add_argument("--match-dist", type=float, default=metrics.DEFAULT_MATCH_DIST)
    e.add_argument("--n-points", type=int, default=metrics.DEFAULT_N_POINTS)
    e.add_argument("--report", help="write the JSON report here")
    e.add_argument("--label", default="tracker")
    e.add_argument("--format", choices=("table", "json"), default="table")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("solve", help="solve one transport problem")
    s.add_argument("problem")
    s.add_argument("--out")
    s.add_argument("--format", choices=("json", "table"), default="json")
    s.set_defaults(func=cmd_solve)

    lo = sub.add_parser("loss", help="evaluate the set-prediction loss on a JSON document")
    lo.add_argument("document")
    lo.add_argument("--out")
    lo.add_argument("--format", choices=("json", "table"), default="json")
    lo.set_defaults(func=cmd_loss)

    c = sub.add_parser("compare", help="FOTA vs KM over the three distance metrics")
    c.add_argument("frames", nargs="?")
    c.add_argument("gt", nargs="?")
    c.add_argument("--seeds", type=int, default=1)
    c.add_argument("--config", help="tracker config JSON applied to every variant")
    c.add_argument("--match-dist", type=float, default=metrics.DEFAULT_MATCH_DIST)
    c.add_argument("--n-points", type=int, default=metrics.DEFAULT_N_POINTS)
    c.add_argument("--format", choices=("table", "json"), default="table")
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _log(f"error: {exc}")
        return exc.code
    except (fota.SolverNumericalError, FilterDivergenceError, FloatingPointError) as exc:
        _log(f"numerical error: {exc}")
        return EXIT_NUMERICAL
    except (ScenarioFormatError, DegenerateBoxError) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except OSError as exc:
        _log(f"error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
