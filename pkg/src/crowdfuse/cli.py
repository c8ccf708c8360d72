"""Batch command-line front end.

Four subcommands wire the library into reproducible experiments:

* ``simulate``: draw walk estimates and compare sample to analytic moments.
* ``theory``: write one expected-gap grid with Monte Carlo fallback cells.
* ``backtest``: run the aggregation rules over a panel (files or synthetic).
* ``sweep``: rerun the backtest over shrinking top-n subsets.

Exit codes: 0 success, 1 runtime or IO failure, 2 usage error. Commands
with identical flags and seed are byte-reproducible; outputs are never
overwritten without ``--force``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import backtest as bt
from . import gaps
from .aggregation import RULE_CWM, RULE_EWM, RULE_KF, RULE_KFPLUS
from .panel import (
    Calibration,
    MissingSeedError,
    Panel,
    PanelError,
    calibrate_v,
    calibration_series,
    load_panel,
    load_synth_config,
    synth_panel,
)
from .quincunx import Environment, Judge, moments, sample_estimates

_RULE_FLAGS = {
    "ewm": RULE_EWM,
    "kf": RULE_KF,
    "cwm": RULE_CWM,
    "kfplus": RULE_KFPLUS,
}
_KINDS = {kind.value: kind for kind in gaps.GapKind}

SIMULATE_CSV_HEADER = "moment,analytic,sample,abs_error,tolerance"


def _check_output(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _cmd_simulate(args: argparse.Namespace) -> int:
    _check_output(args.out, args.force)
    judge = Judge(args.p)
    env = Environment(norm=args.norm, count=args.C, unit=args.v, deviation=args.t)
    rng = np.random.default_rng(args.seed)
    draws = sample_estimates(judge, env, args.samples, rng)
    m = moments(judge, env)
    n = args.samples

    centered = draws - draws.mean()
    sample_mean = float(draws.mean())
    sample_var = float((centered**2).mean())
    rows = [
        ("mean", env.norm + m.mean, sample_mean, 4.0 * math.sqrt(m.variance / n)),
    ]
    if m.kurtosis is None:
        rows.append(("variance", m.variance, sample_var, 0.0))
    else:
        var_stderr = m.variance * math.sqrt(max(m.kurtosis - 1.0, 0.0) / n)
        rows.append(("variance", m.variance, sample_var, 4.0 * var_stderr))
        sample_skew = float((centered**3).mean()) / sample_var**1.5
        sample_kurt = float((centered**4).mean()) / sample_var**2
        rows.append(
            ("skewness", m.skewness, sample_skew,
             max(0.1 * abs(m.skewness), 5.0 * math.sqrt(6.0 / n)))
        )
        rows.append(
            ("kurtosis", m.kurtosis, sample_kurt,
             max(0.1 * m.kurtosis, 5.0 * math.sqrt(24.0 / n)))
        )

    lines = [SIMULATE_CSV_HEADER]
    for name, analytic, sample, tolerance in rows:
        lines.append(
            f"{name},{analytic!r},{sample!r},{abs(sample - analytic)!r},{tolerance!r}"
        )
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_theory(args: argparse.Namespace) -> int:
    _check_output(args.out, args.force)
    cells = gaps.figure_grid(
        _KINDS[args.kind],
        resolution=args.resolution,
        fallback_trials=args.trials,
        seed=args.seed,
        jobs=args.jobs,
    )
    gaps.write_grid_csv(cells, args.out)
    return 0


def _load_inputs(args: argparse.Namespace, parser: argparse.ArgumentParser) -> tuple[Panel, Calibration]:
    if args.synthetic:
        try:
            config = load_synth_config(args.synthetic, seed_override=args.seed)
        except MissingSeedError as exc:
            parser.error(str(exc))
        panel = synth_panel(config)
    else:
        if not (args.forecasts and args.realizations and args.vintages):
            parser.error("either --synthetic or all of --forecasts/--realizations/--vintages")
        panel = load_panel(args.forecasts, args.realizations, args.vintages)
    series = calibration_series(panel)
    missing = sorted(panel.variables - set(series))
    if missing:
        raise PanelError(f"no vintage data to calibrate variables: {missing}")
    return panel, calibrate_v({v: series[v] for v in sorted(panel.variables)})


def _parse_rules(text: str, parser: argparse.ArgumentParser) -> tuple[str, ...]:
    rules = []
    for token in text.split(","):
        token = token.strip().lower()
        if token not in _RULE_FLAGS:
            parser.error(f"unknown rule {token!r}, expected subset of {','.join(_RULE_FLAGS)}")
        rules.append(_RULE_FLAGS[token])
    return tuple(dict.fromkeys(rules))


def _cmd_backtest(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    out_paths = {
        name: os.path.join(args.out_dir, name)
        for name in ("rmse.csv", "dm.csv", "diagnostics.csv")
    }
    os.makedirs(args.out_dir, exist_ok=True)
    for path in out_paths.values():
        _check_output(path, args.force)
    panel, calib = _load_inputs(args, parser)
    rules = _parse_rules(args.rules, parser)
    report = bt.run_backtest(panel, rules, calib, window=args.window, hln=args.hln)
    bt.write_rmse_csv(report.cells, out_paths["rmse.csv"])
    bt.write_dm_csv(report.dm, out_paths["dm.csv"])
    bt.write_diagnostics_csv(report.diagnostics, out_paths["diagnostics.csv"])
    return 0


def _cmd_sweep(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.n_min < 1 or args.n_max < args.n_min:
        parser.error(f"invalid subset range {args.n_min}..{args.n_max}")
    os.makedirs(args.out_dir, exist_ok=True)
    out_path = os.path.join(args.out_dir, "sweep.csv")
    _check_output(out_path, args.force)
    panel, calib = _load_inputs(args, parser)
    rules = _parse_rules(args.rules, parser)
    if args.horizons:
        horizons = tuple(int(h) for h in args.horizons.split(","))
    else:
        horizons = tuple(sorted({f.horizon for f in panel.forecasts}))
    points = bt.subset_sweep(
        panel,
        horizons,
        range(args.n_min, args.n_max + 1),
        calib,
        rules=rules,
        aggregate=args.aggregate,
        window=args.window,
    )
    bt.write_sweep_csv(points, out_path)
    return 0


def _add_backtest_inputs(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--forecasts", help="forecast CSV (survey,variable,horizon,forecaster_id,value)")
    sub.add_argument("--realizations", help="realization CSV (target,variable,value,vintage)")
    sub.add_argument("--vintages", help="vintage CSV (asof,variable,period,level)")
    sub.add_argument("--synthetic", help="flat key = value generator config file")
    sub.add_argument("--seed", type=int, help="generator seed (required with --synthetic unless the config has one)")
    sub.add_argument("--rules", default="ewm,kf,cwm,kfplus", help="comma-separated rules to run")
    sub.add_argument("--out-dir", required=True, help="directory for the report CSVs")
    sub.add_argument("--window", type=int, default=None, help="restrict reliability MSE to the last N errors")
    sub.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sub.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads (results are identical for any value)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdfuse",
        description="Fusion experiments on crowd forecasts: simulation, theory grids, and panel backtests.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="compare sample and analytic walk moments")
    sim.add_argument("--p", type=float, required=True, help="detection reliability in [0.5, 1]")
    sim.add_argument("--C", type=int, required=True, help="element count")
    sim.add_argument("--v", type=float, required=True, help="evidence unit per element")
    sim.add_argument("--t", type=int, required=True, help="net signed deviation")
    sim.add_argument("--norm", type=float, default=0.0, help="category norm (default 0)")
    sim.add_argument("--samples", type=int, required=True, help="number of draws")
    sim.add_argument("--seed", type=int, required=True, help="random seed")
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.add_argument("--force", action="store_true", help="overwrite an existing output")

    theory = commands.add_parser("theory", help="write one expected-gap grid as CSV")
    theory.add_argument("--kind", choices=sorted(_KINDS), required=True, help="which gap surface")
    theory.add_argument("--resolution", type=int, default=50, help="grid points per axis (>= 10)")
    theory.add_argument("--trials", type=int, default=1_000_000, help="Monte Carlo trials for singular cells")
    theory.add_argument("--seed", type=int, required=True, help="random seed")
    theory.add_argument("--out", required=True, help="output CSV path")
    theory.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads (results are identical for any value)")
    theory.add_argument("--force", action="store_true", help="overwrite an existing output")

    run = commands.add_parser("backtest", help="run aggregation rules over a panel")
    _add_backtest_inputs(run)
    run.add_argument("--hln", action="store_true", help="apply the small-sample DM correction")

    sweep = commands.add_parser("sweep", help="backtest over shrinking top-n subsets")
    _add_backtest_inputs(sweep)
    sweep.add_argument("--n-min", type=int, required=True, help="smallest subset size")
    sweep.add_argument("--n-max", type=int, required=True, help="largest subset size")
    sweep.add_argument("--horizons", help="comma-separated horizons (default: all in the panel)")
    sweep.add_argument("--aggregate", choices=("mean", "pooled"), default="mean",
                       help="combine variables by mean of RMSEs or pooled errors")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "theory":
            return _cmd_theory(args)
        if args.command == "backtest":
            return _cmd_backtest(args, parser)
        if args.command == "sweep":
            return _cmd_sweep(args, parser)
        parser.error(f"unknown command {args.command!r}")
    except (PanelError, ValueError) as exc:
        print(f"crowdfuse: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"crowdfuse: io error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
