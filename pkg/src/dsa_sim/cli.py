"""Command-line interface: ``dsa-sim {gen,grid-eval,oracle,train,simulate,report}``.

Exit codes: 0 success, 2 input validation failure, 3 degenerate metric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config_lattice import enumerate_grid
from .costmodel import CostModelError, DEFAULT_OVERHEAD_MS, cost_table_csv, resolve_cost_model
from .metrics import DEFAULT_IOU_THRESHOLD, DegenerateMetricError, normalized_ap_grid
from .oracle import coverage_curve, limit_study
from .policy import (
    DEFAULT_CONFIDENCE,
    DEFAULT_WINDOW,
    AutoFocusPolicy,
    PolicyError,
    StaticPolicy,
    TrainingError,
    baseline_policy,
    fit_static,
    fit_static_all,
    load_policy,
    oracle_policies,
    train_autofocus,
)
from .simulator import compare_report, dump_results, load_results, simulate_categories
from .trace_store import (
    EmulatorParams,
    Scenario,
    TraceError,
    drift_scenario,
    generate_synthetic,
    read_trace,
    save_trace,
)

log = logging.getLogger("dsa_sim")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DEGENERATE = 3

ORACLE_POLICIES = ("baseline", "static-oracle", "dynamic-oracle")


class Degenerate(Exception):
    """Raised by a command after writing its outputs when a metric was degenerate."""


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _outdir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cost(args, grid=None):
    return resolve_cost_model(args.cost_model, args.overhead_ms, grid)


def _select_categories(trace, wanted):
    cats = trace.categories()
    if not wanted:
        return cats
    by_name = {str(c): c for c in cats}
    missing = [w for w in wanted if w not in by_name]
    if missing:
        raise ValueError(f"categories not in trace: {', '.join(missing)}")
    return [by_name[w] for w in wanted]


def _safe_name(category) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in str(category))


# -- commands ----------------------------------------------------------------


def cmd_gen(args) -> None:
    grid = enumerate_grid()
    if args.grid:
        grid = enumerate_grid(**json.loads(Path(args.grid).read_text()))
    if args.scenario in (None, "drift"):
        cats = tuple(c for c in args.categories.split(",") if c)
        scenario = drift_scenario(args.videos, args.frames, cats, seed=args.seed)
    else:
        scenario = Scenario.from_json(json.loads(Path(args.scenario).read_text()))
    params = EmulatorParams(args.theta, args.clutter_rate, args.jitter, args.seed)
    trace = generate_synthetic(scenario, params, grid, args.detector, args.split)
    if args.out in (None, "-"):
        save_trace(trace, sys.stdout)
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            save_trace(trace, fh)
        log.info("wrote %d frames of %d videos to %s", len(trace), len(trace.videos), args.out)


def cmd_grid_eval(args) -> None:
    trace = read_trace(args.trace)
    cost = _cost(args, trace.grid)
    out = _outdir(args, "grid-eval")
    _write(out / "fps_table.csv", cost_table_csv(cost))
    degenerate = []
    for cat in _select_categories(trace, args.category):
        report = normalized_ap_grid(trace, cat, args.iou_threshold)
        _write(out / f"ap_grid_{_safe_name(cat)}.csv", report.to_csv())
        if report.degenerate:
            degenerate.append(str(cat))
        else:
            print(f"# normalized AP, category {cat} (baseline mAP {report.baseline_map:.4f})")
            print(report.to_csv(), end="")
    if degenerate:
        raise Degenerate(f"baseline mAP is zero for: {', '.join(degenerate)}")


def cmd_oracle(args) -> None:
    trace = read_trace(args.trace)
    cost = _cost(args, trace.grid)
    out = _outdir(args, "oracle")
    cats = _select_categories(trace, args.category)
    report = limit_study(trace, cost, args.iou_threshold, cats)
    _write(out / "oracle.csv", report.to_csv())
    _write(out / "oracle.txt", report.to_table())
    print(report.to_table(), end="")
    for cat in cats:
        curve = coverage_curve(trace.frames_with_category(cat), cat, cost, args.iou_threshold)
        _write(out / f"coverage_{_safe_name(cat)}.csv", curve.to_csv())
        print(f"coverage {cat}: {len(curve.points)} distinct optimal configs, "
              f"95% at k={curve.k_for(0.95)}")
    bad = [str(r.category) for r in report.rows if r.degenerate]
    if bad:
        raise Degenerate(f"baseline mAP is zero for: {', '.join(bad)}")


def cmd_train(args) -> None:
    trace = read_trace(args.trace)
    cost = _cost(args, trace.grid)
    out = _outdir(args, "models")
    cats = _select_categories(trace, args.category)
    oblivious = fit_static(trace, cost, "any", args.iou_threshold)
    static = fit_static_all(trace, cost, args.iou_threshold)
    static = StaticPolicy({c: static.mapping[c] for c in cats}, static.name)
    models = {c: train_autofocus(trace, cost, c, args.confidence, args.window, args.iou_threshold)
              for c in cats}
    _write(out / "oblivious.json", json.dumps(oblivious.to_json(), indent=2) + "\n")
    _write(out / "static.json", json.dumps(static.to_json(), indent=2) + "\n")
    _write(out / "autofocus.json", json.dumps(AutoFocusPolicy(models).to_json(), indent=2) + "\n")
    print(f"category-oblivious: {oblivious.mapping['any']}")
    for c in cats:
        print(f"static {c}: {static.mapping[c]}")
    print(f"autofocus models: {len(models)} (threshold {args.confidence}, window {args.window})")


def _policy_from_arg(spec: str, trace, cost, iou_threshold):
    if spec == "baseline":
        return baseline_policy(trace.grid)
    if spec in ("static-oracle", "dynamic-oracle"):
        static, dynamic, _ = oracle_policies(trace, cost, iou_threshold)
        return static if spec == "static-oracle" else dynamic
    data = json.loads(Path(spec).read_text())
    return load_policy(data)


def cmd_simulate(args) -> None:
    trace = read_trace(args.trace)
    cost = _cost(args, trace.grid)
    policy = _policy_from_arg(args.policy, trace, cost, args.iou_threshold)
    if args.name:
        policy = _renamed(policy, args.name)
    results = simulate_categories(trace, policy, cost, args.iou_threshold)
    text = dump_results(results)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        _write(Path(args.out), text)
    for r in results:
        log.info("%s %s: speedup %.3f, degradation %.4f", r.policy, r.category, r.speedup,
                 r.degradation)


def _renamed(policy, name):
    from dataclasses import replace

    return replace(policy, name=name)


def cmd_report(args) -> None:
    results = []
    for path in args.results:
        results.extend(load_results(Path(path).read_text()))
    report = compare_report(results)
    csv_text = report.to_csv()
    if args.out in (None, "-"):
        sys.stdout.write(csv_text)
    else:
        out = Path(args.out)
        _write(out, csv_text)
        _write(out.with_suffix(".txt"), report.to_table())
    print(report.to_table(), end="", file=sys.stderr if args.out in (None, "-") else sys.stdout)


# -- parser --------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; the copy attached to
    # subcommands must not overwrite values given before it
    def d(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cost-model", default=d("faster-rcnn"),
                        help="faster-rcnn, rfcn, or a height,proposals,fps CSV path")
    common.add_argument("--iou-threshold", type=float, default=d(DEFAULT_IOU_THRESHOLD))
    common.add_argument("--seed", type=int, default=d(0))
    common.add_argument("--out", default=d(None), help="output file or directory")
    common.add_argument("--overhead-ms", type=float, default=d(DEFAULT_OVERHEAD_MS),
                        help="controller cost per dynamic decision")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="dsa-sim", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic detection trace")
    p.add_argument("--scenario", default="drift",
                   help="scenario JSON file, or 'drift' for the built-in random scenario")
    p.add_argument("--videos", type=int, default=8)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--categories", default="airplane,motorcycle")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--detector", default="emulated")
    p.add_argument("--theta", type=float, default=16.0)
    p.add_argument("--clutter-rate", type=float, default=0.5)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--grid", help="JSON file overriding {heights, proposals}")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("grid-eval", parents=[common], help="FPS and normalized-AP grid tables")
    p.add_argument("--trace", required=True)
    p.add_argument("--category", action="append")
    p.set_defaults(func=cmd_grid_eval)

    p = sub.add_parser("oracle", parents=[common], help="oracle limit study and coverage curves")
    p.add_argument("--trace", required=True)
    p.add_argument("--category", action="append")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", parents=[common], help="fit static policies and AutoFocus models")
    p.add_argument("--trace", required=True)
    p.add_argument("--category", action="append")
    p.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", parents=[common], help="replay a trace under a policy")
    p.add_argument("--trace", required=True)
    p.add_argument("--policy", required=True,
                   help="policy JSON from 'train', or one of: " + ", ".join(ORACLE_POLICIES))
    p.add_argument("--name", help="override the policy name used in reports")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="compare simulation results")
    p.add_argument("results", nargs="+", help="result files written by 'simulate'")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (Degenerate, DegenerateMetricError) as exc:
        print(f"dsa-sim: degenerate metric: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (TraceError, CostModelError, PolicyError, TrainingError, ValueError, KeyError,
            OSError, json.JSONDecodeError) as exc:
        print(f"dsa-sim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
