"""Command-line front end.

Subcommands:

* ``calibrate`` — fit a latency model to measurement CSV (or the bundled
  hardware-tier fixture) and write it as model JSON.
* ``topt`` — report the smallest real-time-viable segment duration for a
  model, over a grid and (optionally) as the continuous crossing.
* ``simulate`` — run a meeting scenario file and report pipeline counts,
  costs, startup delays, and stalls.
* ``sweep`` — tabulate per-speaker pipeline cost against meeting size for
  the three language-assignment regimes.
* ``bench`` — time a real per-segment command over a chunked stream and
  emit measurement CSV that ``calibrate`` accepts unmodified.

Global flags (valid on every subcommand): ``--seed`` (default 42),
``--out PATH``, ``--format json|csv``, ``--quiet``.  Standard output is
human-readable by default; ``--format`` switches it (or the ``--out`` file)
to a machine representation with stable key order.  ``--quiet`` suppresses
the human summary only, never explicitly requested machine output.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import tempfile
import warnings
from pathlib import Path
from typing import Optional, Sequence

from .core import CostModel, ValidationError
from .latency import (
    FORM_AFFINE,
    FORM_LOG,
    MEASUREMENT_CSV_HEADER,
    InsufficientDataError,
    MeasurementSet,
    ThroughputPoint,
    fit,
    fit_auto,
    load_bundled_measurements,
    load_model,
    model_to_json,
    read_measurement_csv,
    save_model,
    t_opt_continuous,
    t_opt_discrete,
)
from .segproc import StreamSpec, run_external
from .simulator import (
    METRICS_CSV_HEADER,
    load_scenario,
    metrics_csv_rows,
    report_to_json,
    run_scenario,
    sweep_cost,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_SWEEP_ASSIGNMENTS = {
    "uniform": "uniform",
    "distinct": "all-distinct",
    "same": "all-same",
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; our contract reserves 2 for validation
    and uses 1 for usage errors."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _err(message: str) -> None:
    sys.stderr.write(f"streamring: error: {message}\n")


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _grid_arg(text: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid: {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("grid durations must be positive")
    if len(set(values)) != len(values):
        raise argparse.ArgumentTypeError("grid durations must be distinct")
    return values


def _n_range_arg(text: str) -> list[int]:
    """Meeting sizes: ``8``, ``2:50`` (inclusive), or a comma list of both."""
    out: list[int] = []
    try:
        for token in text.split(","):
            token = token.strip()
            if not token:
                continue
            if ":" in token:
                lo_s, hi_s = token.split(":")
                lo, hi = int(lo_s), int(hi_s)
                if hi < lo:
                    raise argparse.ArgumentTypeError(f"empty range: {token!r}")
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(token))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size spec: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("no meeting sizes given")
    return out


def _render_csv(rows: list[list[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _render(fmt: str, payload: object, rows: list[list[object]]) -> str:
    if fmt == "json":
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"
    return _render_csv(rows)


def _finish(
    args: argparse.Namespace,
    human: list[str],
    payload: object,
    rows: list[list[object]],
    out_default: str = "json",
) -> int:
    """Route one command's results: ``--out`` gets the machine rendering
    (``--format`` or the command's default), bare ``--format`` replaces the
    stdout summary, otherwise the summary prints unless ``--quiet``."""
    if args.out is not None:
        fmt = args.format or out_default
        Path(args.out).write_text(_render(fmt, payload, rows), encoding="utf-8")
        if not args.quiet:
            print("\n".join(human + [f"wrote {args.out}"]))
    elif args.format is not None:
        sys.stdout.write(_render(args.format, payload, rows))
    elif not args.quiet:
        print("\n".join(human))
    return EXIT_OK


def _relay_warnings(caught: list[warnings.WarningMessage]) -> None:
    for item in caught:
        sys.stderr.write(f"streamring: warning: {item.message}\n")


def _pick_label(sets: dict[str, MeasurementSet], label: Optional[str],
                source: str) -> MeasurementSet:
    if not sets:
        raise InsufficientDataError(f"{source}: insufficient data (no rows)")
    if label is not None:
        if label not in sets:
            raise ValidationError(
                f"label {label!r} not in {source} "
                f"(available: {', '.join(sorted(sets))})"
            )
        return sets[label]
    if len(sets) == 1:
        return next(iter(sets.values()))
    raise ValidationError(
        f"{source} holds several labels ({', '.join(sorted(sets))}); pass --label"
    )


def _tau_rows(points: list[ThroughputPoint]) -> list[list[object]]:
    rows: list[list[object]] = [["t_seconds", "p_seconds", "tau", "real_time"]]
    rows.extend([pt.t, pt.p, pt.tau, int(pt.tau < 1.0)] for pt in points)
    return rows


def _tau_payload(points: list[ThroughputPoint]) -> list[dict]:
    return [
        {"t_seconds": pt.t, "p_seconds": pt.p, "tau": pt.tau,
         "real_time": pt.tau < 1.0}
        for pt in points
    ]


def _tau_lines(points: list[ThroughputPoint]) -> list[str]:
    return [
        f"  T={pt.t:<6g} p={pt.p:<9.6g} tau={pt.tau:.4f}  "
        + ("real-time" if pt.tau < 1.0 else "lagging")
        for pt in points
    ]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_calibrate(args: argparse.Namespace) -> int:
    if args.input is not None:
        sets = read_measurement_csv(args.input)
        source = str(args.input)
    else:
        sets = load_bundled_measurements()
        source = "bundled fixture"
    mset = _pick_label(sets, args.label, source)
    if args.form == "auto":
        model, diag = fit_auto(mset)
    else:
        model, diag = fit(mset, args.form)
    points = mset.throughput_points()

    payload = {
        "label": mset.label,
        "model": model_to_json(model),
        "diagnostics": {
            "form": diag.form,
            "rmse": diag.rmse,
            "n_durations": diag.n_durations,
            "residuals": [[t, r] for t, r in diag.residuals],
        },
        "tau_table": _tau_payload(points),
    }
    human = [
        f"label: {mset.label}",
        f"form: {model.form}" + ("  (chosen by auto)" if args.form == "auto" else ""),
        f"a={model.a:.6g}  b={model.b:.6g}",
        f"rmse: {diag.rmse:.6g} over {diag.n_durations} durations",
        "residuals:",
        *[f"  T={t:<6g} {r:+.6g}" for t, r in diag.residuals],
        "throughput (measured means):",
        *_tau_lines(points),
    ]
    if args.out is not None:
        save_model(model, args.out)
        human.append(f"model written: {args.out}")
    if args.format is not None:
        sys.stdout.write(_render(args.format, payload, _tau_rows(points)))
    elif not args.quiet:
        print("\n".join(human))
    return EXIT_OK


def cmd_topt(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        points = [ThroughputPoint(t, model.evaluate(t)) for t in sorted(args.grid)]
        discrete = t_opt_discrete(points)
        continuous = t_opt_continuous(model) if args.continuous else None
    _relay_warnings(caught)

    payload: dict = {
        "model": model_to_json(model),
        "grid": sorted(args.grid),
        "tau_table": _tau_payload(points),
        "t_opt_discrete": discrete,
    }
    fmt_opt = lambda v: "none" if v is None else f"{v:g}"
    human = [
        f"model: {model.form}  a={model.a:.6g} b={model.b:.6g}",
        "throughput over grid:",
        *_tau_lines(points),
        f"T_opt (discrete): {fmt_opt(discrete)}",
    ]
    if args.continuous:
        payload["t_opt_continuous"] = continuous
        human.append(f"T_opt (continuous): {fmt_opt(continuous)}")
    return _finish(args, human, payload, _tau_rows(points))


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario)
    if args.csv is not None:
        write_metrics_csv(report, args.csv)
    payload = report_to_json(report)
    rows: list[list[object]] = [list(METRICS_CSV_HEADER)]
    rows.extend(metrics_csv_rows(report))
    startups = report.series.turn_startups
    cold = sum(1 for t in startups if t.cold)
    human = [
        f"scenario: {args.scenario}  (digest {report.scenario_digest[:12]})",
        f"segment duration: {report.resolved_segment_duration:g} s",
        f"pipelines: max k={report.max_k}  time-weighted mean k={report.mean_k:.4f}",
        f"cost ratio (concurrent/counterfactual): {report.cost_ratio:.6g}",
        f"turn startups: {len(startups)} ({cold} cold)",
        f"stall seconds: {report.total_stall_seconds:.6g}",
    ]
    for warning in report.warnings:
        human.append(f"warning: {warning}")
    if args.csv is not None:
        human.append(f"metrics csv: {args.csv}")
    return _finish(args, human, payload, rows)


def cmd_sweep(args: argparse.Namespace) -> int:
    rows_data = sweep_cost(
        args.n,
        args.langs,
        _SWEEP_ASSIGNMENTS[args.assignment],
        cost=CostModel(unit_cost=args.unit_cost),
        trials=args.trials,
        seed=args.seed,
    )
    payload = [
        {
            "n": r.n,
            "mean_k": r.mean_k,
            "token_cost": r.token_cost,
            "naive_cost": r.naive_cost,
            "cost_ratio": r.token_cost / r.naive_cost,
        }
        for r in rows_data
    ]
    rows: list[list[object]] = [
        ["n", "mean_k", "token_cost", "naive_cost", "cost_ratio"]
    ]
    rows.extend(
        [r.n, r.mean_k, r.token_cost, r.naive_cost, r.token_cost / r.naive_cost]
        for r in rows_data
    )
    human = [
        f"assignment: {args.assignment}  languages: {args.langs}  "
        f"trials: {args.trials}  seed: {args.seed}",
        f"{'N':>4} {'mean_k':>10} {'token':>12} {'naive':>12} {'ratio':>10}",
    ]
    human.extend(
        f"{r.n:>4} {r.mean_k:>10.4f} {r.token_cost:>12.4f} "
        f"{r.naive_cost:>12.4f} {r.token_cost / r.naive_cost:>10.6f}"
        for r in rows_data
    )
    return _finish(args, human, payload, rows, out_default="csv")


def cmd_bench(args: argparse.Namespace) -> int:
    stream = StreamSpec(total_duration=args.stream_seconds, mode=args.mode)
    if args.workdir is not None:
        workdir = Path(args.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        result = run_external(args.cmd, stream, args.segment, workdir,
                              label=args.label)
    else:
        with tempfile.TemporaryDirectory(prefix="streamring-bench-") as tmp:
            result = run_external(args.cmd, stream, args.segment, tmp,
                                  label=args.label)

    mset = result.measurements
    rows: list[list[object]] = [list(MEASUREMENT_CSV_HEADER)]
    rows.extend([mset.label, s.t, s.run, s.p] for s in mset.samples)
    payload: dict = {
        "label": mset.label,
        "ok": result.ok,
        "failed_segment": result.failed_segment,
        "error": result.error,
        "measurements": [
            {"label": mset.label, "t_seconds": s.t, "run": s.run, "p_seconds": s.p}
            for s in mset.samples
        ],
        "report": None,
    }
    if result.report is not None:
        payload["report"] = {
            "startup_delay": result.report.startup_delay,
            "glass_latency": result.report.glass_latency,
            "stall_count": result.report.stall_count,
            "stall_total": result.report.stall_total,
        }

    csv_text = _render_csv(rows)
    if args.out is not None:
        fmt = args.format or "csv"
        Path(args.out).write_text(_render(fmt, payload, rows), encoding="utf-8")
    elif args.format == "json":
        sys.stdout.write(_render("json", payload, rows))
    elif not args.quiet or args.format == "csv":
        # measurement CSV is bench's primary product, so it is the default
        # stdout rendering as well
        sys.stdout.write(csv_text)

    if not result.ok:
        _err(
            f"segment {result.failed_segment} command failed: "
            f"{result.error or 'unknown error'}"
        )
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42,
                        help="seed for any randomized work (default 42)")
    common.add_argument("--out", type=Path, default=None, metavar="PATH",
                        help="write machine output to this file")
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="machine output format (default: human summary)")
    common.add_argument("--quiet", action="store_true",
                        help="suppress the human-readable summary")

    parser = _Parser(
        prog="streamring",
        description="Speaker-scoped translation pipelines over segmented "
                    "streams: calibration, viability analysis, scenario "
                    "simulation, cost sweeps, benchmarking.",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="COMMAND")

    p = sub.add_parser(
        "calibrate", parents=[common],
        help="fit a latency model from measurement CSV",
        description="Fit a latency model to per-duration mean processing "
                    "times and write it as model JSON (--out).",
    )
    p.add_argument("--input", type=Path, default=None, metavar="CSV",
                   help="measurement CSV (default: bundled hardware fixture)")
    p.add_argument("--label", default=None,
                   help="measurement label to calibrate when the CSV holds several")
    p.add_argument("--form", choices=(FORM_AFFINE, FORM_LOG, "auto"),
                   default="auto",
                   help="functional form; auto keeps the lower-RMSE fit")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser(
        "topt", parents=[common],
        help="smallest real-time-viable segment duration",
        description="Report the smallest grid duration with tau < 1 and, "
                    "with --continuous, the exact crossing.",
    )
    p.add_argument("--model", type=Path, required=True, metavar="JSON",
                   help="model file from calibrate")
    p.add_argument("--grid", type=_grid_arg, default=[1.0, 2.0, 3.0, 5.0, 8.0],
                   metavar="T1,T2,...",
                   help="candidate segment durations (default 1,2,3,5,8)")
    p.add_argument("--continuous", action="store_true",
                   help="also solve for the continuous tau = 1 crossing")
    p.set_defaults(handler=cmd_topt)

    p = sub.add_parser(
        "simulate", parents=[common],
        help="run a meeting scenario file",
        description="Validate and run a scenario JSON, reporting pipeline "
                    "counts, costs, startup delays, and stalls.",
    )
    p.add_argument("--scenario", type=Path, required=True, metavar="JSON")
    p.add_argument("--csv", type=Path, default=None, metavar="PATH",
                   help="also write the per-sample metrics CSV here")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser(
        "sweep", parents=[common],
        help="pipeline cost vs meeting size",
        description="Tabulate mean concurrent pipelines and per-speaker cost "
                    "against meeting size for an assignment regime.",
    )
    p.add_argument("--n", type=_n_range_arg, required=True, metavar="SPEC",
                   help="meeting sizes: '8', '2:50', or comma list")
    p.add_argument("--langs", type=int, default=4, metavar="K",
                   help="language pool size for uniform assignment (default 4)")
    p.add_argument("--assignment", choices=tuple(_SWEEP_ASSIGNMENTS),
                   default="uniform")
    p.add_argument("--trials", type=int, default=100,
                   help="random meetings per size for uniform (default 100)")
    p.add_argument("--unit-cost", type=_positive_float, default=1.0,
                   metavar="C", help="cost of one pipeline-unit (default 1)")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser(
        "bench", parents=[common],
        help="time an external per-segment command",
        description="Chunk a stream, run a command once per chunk with "
                    "{input}/{output} substituted, and emit measurement CSV "
                    "that calibrate accepts unmodified.",
    )
    p.add_argument("--cmd", required=True, metavar="TEMPLATE",
                   help="command template, e.g. 'mymodel {input} -o {output}'")
    p.add_argument("--stream-seconds", type=_positive_float, required=True,
                   metavar="S", help="total stream duration to chunk")
    p.add_argument("--segment", type=_positive_float, required=True,
                   metavar="T", help="segment duration in seconds")
    p.add_argument("--label", default="bench",
                   help="label for the emitted measurement rows")
    p.add_argument("--mode", choices=("live", "batch"), default="batch",
                   help="live paces chunk availability on the wall clock")
    p.add_argument("--workdir", type=Path, default=None,
                   help="keep chunk files here instead of a temp dir")
    p.set_defaults(handler=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return handler(args)
    except (ValidationError, json.JSONDecodeError, FileNotFoundError) as exc:
        _err(str(exc))
        return EXIT_VALIDATION
    except OSError as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
