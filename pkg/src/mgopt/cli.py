"""Command-line front end.

Subcommands: ``validate`` checks a case file, ``powerflow`` solves the
24-hour power flow for a schedule (grid-only by default), ``optimize``
runs a dispatch scenario and writes a replayable run directory,
``compare`` tabulates several run directories side by side, and
``report`` expands a run directory into per-hour CSV series.

Exit codes: 0 success, 2 validation error, 3 convergence failure,
4 infeasible result.  Every failure prints one ``error: <kind>: <detail>``
line on stderr, and a partially written run directory always carries a
FAILED marker file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import shutil
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .ahp import derive_weights
from .devices import DispatchSchedule, soc_trajectory, zero_schedule
from .netmodel import CaseError, MicrogridCase, load_case
from .objectives import OBJECTIVE_KEYS, OBJECTIVE_LABELS, normalize_objective
from .optimizer import OptimizerConfig, ScenarioResult, SuiteResult, run_suite, scenario_key
from .optimizer.qp import QpError
from .powerflow import PowerFlowError, solve_horizon

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_INFEASIBLE = 4

_KIND_FOR_CODE = {EXIT_VALIDATION: "validation", EXIT_CONVERGENCE: "convergence", EXIT_INFEASIBLE: "infeasible"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str) -> CliError:
    return CliError(code, message)


def _error_line(code: int, message: str) -> str:
    return f"error: {_KIND_FOR_CODE.get(code, 'internal')}: {message}"


# ---------------------------------------------------------------------------
# schedule CSV round trip

def write_schedule_csv(path: Path, case: MicrogridCase, schedule: DispatchSchedule) -> None:
    """Decision variables only, one row per hour; enough for exact replay."""
    header = ["hour"] + [u.name for u in case.units] + ["battery_kw"]
    if schedule.dr_shift is not None:
        header.append("shift_kw")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(schedule.horizon):
            row = [t] + [repr(float(v)) for v in schedule.dg_setpoints[:, t]]
            row.append(repr(float(schedule.battery_power[t])))
            if schedule.dr_shift is not None:
                row.append(repr(float(schedule.dr_shift[t])))
            writer.writerow(row)


def read_schedule_csv(path: Path, case: MicrogridCase) -> DispatchSchedule:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise _fail(EXIT_VALIDATION, f"{path} is empty") from None
        rows = [r for r in reader if r]
    expected = ["hour"] + [u.name for u in case.units] + ["battery_kw"]
    has_shift = header == expected + ["shift_kw"]
    if not has_shift and header != expected:
        raise _fail(
            EXIT_VALIDATION,
            f"{path} columns {header} do not match case units {expected}",
        )
    if len(rows) != case.horizon:
        raise _fail(EXIT_VALIDATION, f"{path} has {len(rows)} rows, case horizon is {case.horizon}")
    n = len(case.units)
    dg = np.zeros((n, case.horizon))
    battery = np.zeros(case.horizon)
    shift = np.zeros(case.horizon) if has_shift else None
    for row in rows:
        t = int(row[0])
        if not 0 <= t < case.horizon:
            raise _fail(EXIT_VALIDATION, f"{path} hour {t} outside 0..{case.horizon - 1}")
        dg[:, t] = [float(v) for v in row[1 : 1 + n]]
        battery[t] = float(row[1 + n])
        if has_shift:
            shift[t] = float(row[2 + n])
    return DispatchSchedule(dg, battery, shift)


# ---------------------------------------------------------------------------
# optimize run directory

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_json(path: Path, payload: Dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trace_csv(path: Path, trace: List[Dict]) -> None:
    columns = ["iteration", "merit", "kkt", "step", "alpha", "penalty", "elastic"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for entry in trace:
            writer.writerow([repr(entry[c]) if isinstance(entry[c], float) else entry[c] for c in columns])


def write_run_dir(
    out: Path,
    case_path: Path,
    case: MicrogridCase,
    suite: SuiteResult,
    result: ScenarioResult,
    scenario_id: int,
    dr: bool,
    config: OptimizerConfig,
) -> None:
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(case_path, out / "case.yaml")
    (out / "seed.txt").write_text(f"{config.seed}\n", encoding="utf-8")

    _write_json(
        out / "config.json",
        {
            "version": __version__,
            "case": {"name": case.name, "file": case_path.name, "sha256": _sha256(case_path)},
            "scenario": scenario_id,
            "dr": dr,
            "seed": config.seed,
            "weights": suite.weights,
            "consistency_ratio": suite.consistency_ratio,
            "bounds": {k: list(v) for k, v in suite.bounds.items()},
            "ga": asdict(config.ga),
            "sqp": asdict(config.sqp),
            "polish_sweeps": config.polish_sweeps,
            "refine_rounds": config.refine_rounds,
            "voltage_margin": config.voltage_margin,
        },
    )
    write_schedule_csv(out / "schedule.csv", case, result.schedule)
    values = result.objectives.as_dict()
    key = "dr" if dr else scenario_key(scenario_id)
    _write_json(
        out / "objectives.json",
        {
            "label": result.label,
            "scenario": scenario_id,
            "dr": dr,
            "objectives": values,
            "normalized": {
                k: normalize_objective(values[k], suite.bounds[k], k) for k in OBJECTIVE_KEYS
            },
            "weighted_total": suite.totals[key],
            "value": result.value,
            "ga_value": result.ga_value,
            "improved": result.improved,
            "feasible": result.feasible,
            "violation": result.violation,
            "weights": suite.weights,
            "bounds": {k: list(v) for k, v in suite.bounds.items()},
        },
    )
    _write_trace_csv(out / "trace.csv", result.trace)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_validate(args: argparse.Namespace) -> int:
    case = _load(args.case)
    battery = "1 battery" if case.battery is not None else "no battery"
    dr = f"DR fraction {case.dr.shiftable_fraction}" if case.dr is not None else "no DR"
    print(
        f"{case.name}: {len(case.buses)} buses, {len(case.branches)} branches, "
        f"{len(case.load_points)} load points, {len(case.units)} units, {battery}, "
        f"{len(case.contingencies)} contingencies, horizon {case.horizon} h, {dr}"
    )
    return EXIT_OK


def _cmd_powerflow(args: argparse.Namespace) -> int:
    case = _load(args.case)
    if args.schedule:
        schedule = read_schedule_csv(Path(args.schedule), case)
    else:
        schedule = zero_schedule(len(case.units), case.horizon)
    solution = solve_horizon(case, schedule)
    vmag = np.abs(solution.voltage)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["hour", "grid_kw", "grid_kvar", "loss_kw", "v_min_pu", "v_max_pu", "iterations"])
    for t in range(case.horizon):
        writer.writerow(
            [
                t,
                repr(float(solution.slack_kw[t])),
                repr(float(solution.slack_kvar[t])),
                repr(float(solution.loss_kw[t])),
                repr(float(vmag[t].min())),
                repr(float(vmag[t].max())),
                int(solution.iterations[t]),
            ]
        )
    return EXIT_OK


def _parse_weights(args: argparse.Namespace) -> Optional[List[float]]:
    if args.weights:
        parts = args.weights.split(",")
        if len(parts) != 4:
            raise _fail(EXIT_VALIDATION, f"--weights needs 4 comma-separated values, got {len(parts)}")
        try:
            vector = [float(p) for p in parts]
        except ValueError as exc:
            raise _fail(EXIT_VALIDATION, f"--weights: {exc}") from exc
        if any(w < 0 for w in vector) or sum(vector) <= 0:
            raise _fail(EXIT_VALIDATION, "--weights must be nonnegative and sum to a positive value")
        total = sum(vector)
        return [w / total for w in vector]
    if args.ahp:
        try:
            matrix = np.loadtxt(args.ahp)
        except OSError as exc:
            raise _fail(EXIT_VALIDATION, f"cannot read --ahp file: {exc}") from exc
        if matrix.shape != (4, 4):
            raise _fail(EXIT_VALIDATION, f"--ahp matrix must be 4x4, got {matrix.shape}")
        vector, _ = derive_weights(matrix)
        return [float(w) for w in vector]
    return None


def _optimizer_config(args: argparse.Namespace) -> OptimizerConfig:
    config = OptimizerConfig(seed=args.seed)
    if args.ga_population is not None:
        config.ga.population = args.ga_population
    if args.ga_generations is not None:
        config.ga.generations = args.ga_generations
    if args.sqp_iterations is not None:
        config.sqp.max_iterations = args.sqp_iterations
    if args.refine_rounds is not None:
        config.refine_rounds = args.refine_rounds
    if args.polish_sweeps is not None:
        config.polish_sweeps = args.polish_sweeps
    return config


def _cmd_optimize(args: argparse.Namespace) -> int:
    case_path = Path(args.case)
    case = _load(case_path)
    scenario_id = args.scenario
    if args.dr and scenario_id != 5:
        raise _fail(EXIT_VALIDATION, "--dr applies to scenario 5 only")
    if args.dr and case.dr is None:
        raise _fail(EXIT_VALIDATION, "case defines no demand response program")
    weights = _parse_weights(args)
    config = _optimizer_config(args)

    stem = case_path.name.rsplit(".", 1)[0]
    out = Path(args.out) if args.out else Path(f"{stem}-scenario{scenario_id}" + ("-dr" if args.dr else ""))

    try:
        suite = run_suite(case, config=config, weights=weights, include_dr=args.dr)
        result = suite.result(scenario_id, dr=args.dr)
        write_run_dir(out, case_path, case, suite, result, scenario_id, args.dr, config)
    except (PowerFlowError, QpError) as exc:
        _mark_failed(out, EXIT_CONVERGENCE, str(exc))
        raise _fail(EXIT_CONVERGENCE, str(exc)) from exc

    if not result.feasible:
        message = f"result violates constraints by {result.violation:.3e}"
        _mark_failed(out, EXIT_INFEASIBLE, message)
        raise _fail(EXIT_INFEASIBLE, message)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    print(f"{result.label}: wrote {out}")
    return EXIT_OK


def _mark_failed(out: Path, code: int, message: str) -> None:
    if out.exists():
        (out / "FAILED").write_text(_error_line(code, message) + "\n", encoding="utf-8")


def _cmd_compare(args: argparse.Namespace) -> int:
    rows = []
    for run in args.runs:
        path = Path(run) / "objectives.json"
        if not path.exists():
            raise _fail(EXIT_VALIDATION, f"{run} has no objectives.json")
        with open(path, "r", encoding="utf-8") as fh:
            rows.append(json.load(fh))
    headers = ["Scenario"] + [OBJECTIVE_LABELS[k] for k in OBJECTIVE_KEYS] + ["Weighted total"]
    table = [headers]
    for doc in rows:
        table.append(
            [doc["label"]]
            + [f"{doc['objectives'][k]:.6g}" for k in OBJECTIVE_KEYS]
            + [f"{doc['weighted_total']:.6g}"]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    for i, row in enumerate(table):
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            print("  ".join("-" * w for w in widths))
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    run = Path(args.run)
    case_file = run / "case.yaml"
    schedule_file = run / "schedule.csv"
    if not case_file.exists() or not schedule_file.exists():
        raise _fail(EXIT_VALIDATION, f"{run} is not a run directory (case.yaml/schedule.csv missing)")
    case = _load(case_file)
    schedule = read_schedule_csv(schedule_file, case)
    solution = solve_horizon(case, schedule)

    def table(name: str, header: List[str], rows: List[List]) -> None:
        with open(run / name, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)

    hours = range(case.horizon)
    table(
        "dispatch.csv",
        ["hour"] + [u.name for u in case.units] + ["battery_kw"],
        [
            [t] + [repr(float(v)) for v in schedule.dg_setpoints[:, t]] + [repr(float(schedule.battery_power[t]))]
            for t in hours
        ],
    )
    if case.battery is not None:
        soc = soc_trajectory(case.battery, schedule.battery_power, case.period_hours)
    else:
        soc = np.zeros(case.horizon)
    table("soc.csv", ["hour", "soc_kwh"], [[t, repr(float(soc[t]))] for t in hours])
    table(
        "grid.csv",
        ["hour", "import_kw", "export_kw", "price_ct_per_kwh"],
        [
            [
                t,
                repr(float(max(solution.slack_kw[t], 0.0))),
                repr(float(max(-solution.slack_kw[t], 0.0))),
                repr(float(case.prices_ct_per_kwh[t])),
            ]
            for t in hours
        ],
    )
    table("losses.csv", ["hour", "loss_kw"], [[t, repr(float(solution.loss_kw[t]))] for t in hours])
    written = ["dispatch.csv", "soc.csv", "grid.csv", "losses.csv"]
    if schedule.dr_shift is not None:
        base = np.zeros(case.horizon)
        for lp in case.load_points:
            base += np.asarray(lp.profile_kw, dtype=float)
        table(
            "load.csv",
            ["hour", "base_kw", "shift_kw", "shifted_kw"],
            [
                [
                    t,
                    repr(float(base[t])),
                    repr(float(schedule.dr_shift[t])),
                    repr(float(base[t] + schedule.dr_shift[t])),
                ]
                for t in hours
            ],
        )
        written.append("load.csv")
    print(f"wrote {', '.join(written)} to {run}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _load(path) -> MicrogridCase:
    try:
        return load_case(path)
    except FileNotFoundError as exc:
        raise _fail(EXIT_VALIDATION, f"case file not found: {path}") from exc
    except CaseError as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgopt", description="Day-ahead microgrid dispatch optimizer")
    parser.add_argument("--version", action="version", version=f"mgopt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a case file and print a summary")
    p.add_argument("case")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("powerflow", help="solve the horizon power flow and print hourly results")
    p.add_argument("case")
    p.add_argument("--schedule", help="schedule CSV (default: grid-only)")
    p.set_defaults(func=_cmd_powerflow)

    p = sub.add_parser("optimize", help="run one scenario and write a run directory")
    p.add_argument("case")
    p.add_argument("--scenario", type=int, required=True, choices=range(6), metavar="{0..5}")
    p.add_argument("--dr", action="store_true", help="co-optimize the demand-response shift (scenario 5)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--weights", help="four comma-separated objective weights")
    group.add_argument("--ahp", help="file with a 4x4 pairwise judgment matrix")
    p.add_argument("--out", help="output directory (default: <case>-scenario<k>)")
    p.add_argument("--ga-population", type=int, help="GA population size")
    p.add_argument("--ga-generations", type=int, help="GA generation count")
    p.add_argument("--sqp-iterations", type=int, help="SQP iteration cap")
    p.add_argument("--refine-rounds", type=int, help="constraint-screening rounds per refinement")
    p.add_argument("--polish-sweeps", type=int, help="cross-scenario polish sweeps")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("compare", help="tabulate objectives across run directories")
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="expand a run directory into per-hour CSV series")
    p.add_argument("run")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(_error_line(exc.code, str(exc)), file=sys.stderr)
        return exc.code
    except PowerFlowError as exc:
        print(_error_line(EXIT_CONVERGENCE, str(exc)), file=sys.stderr)
        return EXIT_CONVERGENCE
    except (CaseError, ValueError) as exc:
        print(_error_line(EXIT_VALIDATION, str(exc)), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
