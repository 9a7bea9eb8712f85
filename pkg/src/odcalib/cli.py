"""Command line front end: ``odcalib generate | calibrate | compare | experiment``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from .evaluation import MetricsTriple, percent_change
from .network import validate_network
from .plotting import plot_convergence, plot_demand_scatter
from .scenario import (MEASUREMENTS_FILE, NETWORK_FILE, Scenario, ScenarioSpec, SpecError,
                       build_scenario, load_scenario, save_scenario)
from .solver import CalibrationTrace, read_trace_csv, run_calibration

log = logging.getLogger("odcalib")

REPORT_COLUMNS = ("scenario", "method", "nrmse_demand", "nrmse_time", "nrmse_count")


class CommandError(RuntimeError):
    pass


def scenario_fingerprint(scenario_dir) -> str:
    h = hashlib.sha256()
    for name in (NETWORK_FILE, MEASUREMENTS_FILE):
        h.update((Path(scenario_dir) / name).read_bytes())
    return h.hexdigest()[:16]


def sidecar_path(trace_csv) -> Path:
    return Path(trace_csv).with_suffix(".json")


# -- generate -------------------------------------------------------------------

def cmd_generate(spec_path, out_dir) -> list[Path]:
    spec = ScenarioSpec.load(spec_path)
    scenario = build_scenario(spec)
    problems = validate_network(scenario.network) + scenario.measurements.validate()
    if problems:
        raise CommandError("generated scenario is invalid: " + "; ".join(problems))
    return save_scenario(scenario, out_dir)


# -- calibrate ------------------------------------------------------------------

def _mode(regularized: bool) -> str:
    return "regularized" if regularized else "baseline"


def calibrate_scenario(scenario: Scenario, regularized: bool, iterations=None, rollouts=None,
                       seed=None) -> CalibrationTrace:
    overrides = {"regularized": regularized}
    for key, val in (("iterations", iterations), ("rollouts", rollouts), ("seed", seed)):
        if val is not None:
            overrides[key] = val
    config = scenario.spec.solver_config(**overrides)
    return run_calibration(scenario.network, scenario.measurements, scenario.gt_demand, config,
                           scenario.sim_config)


def write_trace(trace: CalibrationTrace, scenario: Scenario, scenario_dir, regularized: bool,
                seed, out_csv) -> None:
    trace.write_csv(out_csv)
    last = trace.rows[-1]
    meta = {
        "scenario": scenario.spec.name,
        "fingerprint": scenario_fingerprint(scenario_dir),
        "method": _mode(regularized),
        "seed": seed,
        "w1": trace.weights.w1,
        "w2": trace.weights.w2,
        "od_pairs": list(scenario.network.od_pairs),
        "gt_demand": [float(x) for x in scenario.gt_demand],
        "calibrated_demand": [float(x) for x in trace.best_d],
        "final_metrics": {"nrmse_demand": last.nrmse_demand, "nrmse_time": last.nrmse_time,
                          "nrmse_count": last.nrmse_count},
    }
    sidecar_path(out_csv).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def cmd_calibrate(scenario_dir, out_csv, regularized=True, iterations=None, rollouts=None,
                  seed=None, plot=None) -> CalibrationTrace:
    scenario = load_scenario(scenario_dir)
    trace = calibrate_scenario(scenario, regularized, iterations, rollouts, seed)
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace, scenario, scenario_dir, regularized, seed, out_csv)
    if plot:
        plot_convergence({_mode(regularized): trace.rows}, plot)
    return trace


# -- compare ----------------------------------------------------------------------

def _load_trace(path) -> tuple[list, dict]:
    rows = read_trace_csv(path)
    side = sidecar_path(path)
    if not side.is_file():
        raise FileNotFoundError(f"{side} not found (written next to every trace by calibrate)")
    return rows, json.loads(side.read_text(encoding="utf-8"))


def compare_traces(trace_a, trace_b):
    """Report rows (per method + percent change) and per-OD scatter rows."""
    rows_a, meta_a = _load_trace(trace_a)
    rows_b, meta_b = _load_trace(trace_b)
    if meta_a["fingerprint"] != meta_b["fingerprint"] or meta_a["od_pairs"] != meta_b["od_pairs"]:
        raise CommandError("traces come from different scenarios")
    # percent change is regularized relative to baseline when the pair has one of each
    if meta_a["method"] == "regularized" and meta_b["method"] == "baseline":
        (rows_a, meta_a), (rows_b, meta_b) = (rows_b, meta_b), (rows_a, meta_a)
    ref = MetricsTriple(rows_a[-1].nrmse_demand, rows_a[-1].nrmse_time, rows_a[-1].nrmse_count)
    new = MetricsTriple(rows_b[-1].nrmse_demand, rows_b[-1].nrmse_time, rows_b[-1].nrmse_count)
    scen = meta_a["scenario"]
    report = [
        (scen, meta_a["method"], *ref.as_tuple()),
        (scen, meta_b["method"], *new.as_tuple()),
        (scen, "change_pct", *(percent_change(n, r) for n, r in zip(new.as_tuple(), ref.as_tuple()))),
    ]
    scatter = [(z, g, a, b) for z, g, a, b in zip(meta_a["od_pairs"], meta_a["gt_demand"],
                                                  meta_a["calibrated_demand"], meta_b["calibrated_demand"])]
    labels = (meta_a["method"], meta_b["method"])
    return report, scatter, labels


def cmd_compare(trace_a, trace_b, out_csv, plot=None):
    report, scatter, labels = compare_traces(trace_a, trace_b)
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report:
            w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])
    scatter_csv = out.with_name(out.stem + "_scatter.csv")
    la, lb = labels if labels[0] != labels[1] else (labels[0] + "_a", labels[1] + "_b")
    with open(scatter_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("od", "gt_demand", la, lb))
        for z, g, a, b in scatter:
            w.writerow([z, repr(g), repr(a), repr(b)])
    if plot:
        gt = [s[1] for s in scatter]
        plot_demand_scatter(gt, {la: [s[2] for s in scatter], lb: [s[3] for s in scatter]}, plot)
    return report, scatter


# -- experiment ---------------------------------------------------------------------

def cmd_experiment(spec_path, out_dir, seeds, iterations=None, rollouts=None):
    """Generate a scenario, run both methods on paired seeds and write all reports."""
    out = Path(out_dir)
    scen_dir = out / "scenario"
    cmd_generate(spec_path, scen_dir)
    scenario = load_scenario(scen_dir)
    summary = []
    for seed in seeds:
        traces = {}
        for regularized in (False, True):
            mode = _mode(regularized)
            trace = calibrate_scenario(scenario, regularized, iterations, rollouts, seed)
            csv_path = out / f"trace_{mode}_seed{seed}.csv"
            write_trace(trace, scenario, scen_dir, regularized, seed, csv_path)
            traces[mode] = trace
            last = trace.rows[-1]
            summary.append((scenario.spec.name, mode, seed, last.nrmse_demand, last.nrmse_time,
                            last.nrmse_count))
        plot_convergence({m: t.rows for m, t in traces.items()}, out / f"convergence_seed{seed}.svg")
        cmd_compare(out / f"trace_baseline_seed{seed}.csv", out / f"trace_regularized_seed{seed}.csv",
                    out / f"compare_seed{seed}.csv", plot=out / f"scatter_seed{seed}.svg")
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scenario", "method", "seed", "nrmse_demand", "nrmse_time", "nrmse_count"))
        for r in summary:
            w.writerow([r[0], r[1], r[2]] + [repr(float(x)) for x in r[3:]])
    return summary


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odcalib", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize network, ground-truth demand and measurements")
    p.add_argument("--spec", required=True, help="scenario spec JSON")
    p.add_argument("--out", required=True, help="output scenario directory")

    p = sub.add_parser("calibrate", help="run the metamodel calibration on a generated scenario")
    p.add_argument("scenario", help="scenario directory written by 'generate'")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--regularized", dest="regularized", action="store_true", default=True)
    mode.add_argument("--baseline", dest="regularized", action="store_false")
    p.add_argument("--iterations", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--plot", help="convergence figure path (.svg/.png/.pdf)")

    p = sub.add_parser("compare", help="compare two calibration traces of one scenario")
    p.add_argument("traces", nargs=2)
    p.add_argument("--out", required=True, help="comparison report CSV path")
    p.add_argument("--plot", help="demand scatter figure path")

    p = sub.add_parser("experiment", help="paired-seed baseline vs regularized experiment")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--iterations", type=int)
    p.add_argument("--rollouts", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            for path in cmd_generate(args.spec, args.out):
                print(path)
        elif args.command == "calibrate":
            trace = cmd_calibrate(args.scenario, args.out, args.regularized, args.iterations,
                                  args.rollouts, args.seed, args.plot)
            last = trace.rows[-1]
            print(f"{_mode(args.regularized)} w1={trace.weights.w1:.6g} w2={trace.weights.w2:.6g}")
            print(f"nrmse_demand={last.nrmse_demand:.4f} nrmse_time={last.nrmse_time:.4f} "
                  f"nrmse_count={last.nrmse_count:.4f}")
        elif args.command == "compare":
            report, _ = cmd_compare(args.traces[0], args.traces[1], args.out, args.plot)
            for r in report:
                print(f"{r[1]:>12}: " + " ".join(f"{x:10.4f}" for x in r[2:]))
        elif args.command == "experiment":
            summary = cmd_experiment(args.spec, args.out, args.seeds, args.iterations, args.rollouts)
            by_seed = {}
            for r in summary:
                by_seed.setdefault(r[2], {})[r[1]] = r[3]
            for seed, m in by_seed.items():
                print(f"seed {seed}: demand nRMSE baseline={m['baseline']:.4f} "
                      f"regularized={m['regularized']:.4f}")
    except SpecError as exc:
        print(f"error: invalid spec field {exc}", file=sys.stderr)
        return 2
    except (CommandError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
