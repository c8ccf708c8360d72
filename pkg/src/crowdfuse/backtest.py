"""Rolling backtest of aggregation rules over a panel.

Surveys are processed in order. For each variable-horizon cell the engine
matures realized errors as soon as their first report is stamped (never
earlier), updates forecaster reliabilities and contributions from them,
builds the eligible slice (two matured errors required), lets every rule
estimate, and scores the estimates against the first-reported realization.
State updates always happen after the estimates that would use them, so an
estimate at survey i is a pure function of forecasts at i and of
realizations stamped by i.

Outputs: per-cell RMSE, Diebold-Mariano comparisons against the
contribution-weighted rule, per-cell diagnostics, and the top-n subset
sweep behind the smaller-wiser-crowd curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .aggregation import (
    ALL_RULES,
    RULE_CWM,
    RULE_EWM,
    RULE_KF,
    RULE_KFPLUS,
    ForecasterState,
    SurveySlice,
    add_contribution,
    cwm,
    ewm,
    kf_crowd,
    kf_plus,
    positive_contribution_subset,
    slice_contribution_terms,
    top_n_subset,
    update_state,
)
from .panel import Calibration, Panel, add_quarters

RMSE_CSV_HEADER = "variable,horizon,rule,rmse,n_surveys"
DM_CSV_HEADER = "variable,horizon,rule,stat,p_value"
SWEEP_CSV_HEADER = "horizon,rule,n_included,rmse"
DIAGNOSTICS_CSV_HEADER = "variable,horizon,median_p_hat,cwm_fallback_surveys,skipped_surveys"

_RULE_ORDER = {rule: i for i, rule in enumerate(ALL_RULES)}
_MIN_DM_LENGTH = 8


class EmptyPanelError(ValueError):
    """The panel holds no forecasts to backtest."""


@dataclass(frozen=True)
class RmseCell:
    variable: str
    horizon: int
    rule: str
    rmse: float
    n_surveys: int

    def __post_init__(self) -> None:
        if not math.isnan(self.rmse) and self.rmse < 0.0:
            raise ValueError("rmse must be nonnegative")


@dataclass(frozen=True)
class DmCell:
    variable: str
    horizon: int
    rule: str
    stat: float
    p_value: float

    @property
    def direction(self) -> int:
        return 0 if self.stat == 0.0 else (1 if self.stat > 0.0 else -1)


@dataclass(frozen=True)
class CellDiagnostics:
    variable: str
    horizon: int
    median_p_hat: float
    cwm_fallback_surveys: int
    skipped_surveys: int


@dataclass(frozen=True)
class SweepPoint:
    horizon: int
    rule: str
    n_included: int
    rmse: float


@dataclass
class BacktestReport:
    cells: list[RmseCell]
    dm: list[DmCell]
    diagnostics: list[CellDiagnostics]


def dm_test(
    errors_a: Sequence[float],
    errors_b: Sequence[float],
    horizon: int,
    hln: bool = False,
) -> tuple[float, float]:
    """Diebold-Mariano test on squared-error loss, one-sided lower tail.

    The loss differential is a_t^2 - b_t^2; its long-run variance uses the
    rectangular kernel truncated at lag horizon - 1 (falling back to the
    lag-0 term if the truncated sum turns nonpositive). Small p-values mean
    the first series' losses are smaller. A differential with zero variance
    is degenerate and reports (0, 0.5). ``hln`` applies the small-sample
    stat correction.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError("error series must be equal-length 1-D sequences")
    t = a.size
    if t < _MIN_DM_LENGTH:
        raise ValueError(f"need at least {_MIN_DM_LENGTH} aligned observations, got {t}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    d = a * a - b * b
    dbar = float(d.mean())
    dc = d - dbar
    gamma0 = float(dc @ dc) / t
    lrv = gamma0
    for lag in range(1, horizon):
        if lag >= t:
            break
        lrv += 2.0 * float(dc[lag:] @ dc[:-lag]) / t
    if lrv <= 0.0:
        lrv = gamma0
    if lrv == 0.0:
        return 0.0, 0.5
    stat = dbar / math.sqrt(lrv / t)
    if hln:
        stat *= math.sqrt((t + 1 - 2 * horizon + horizon * (horizon - 1) / t) / t)
    p_value = 0.5 * math.erfc(-stat / math.sqrt(2.0))
    return float(stat), float(p_value)


def _estimate(rule: str, slice_: SurveySlice, states: Mapping[str, ForecasterState]):
    if rule == RULE_EWM:
        return ewm(slice_)
    if rule == RULE_KF:
        return kf_crowd(slice_, states)
    if rule == RULE_CWM:
        return cwm(slice_, states)
    if rule == RULE_KFPLUS:
        return kf_plus(slice_, states)
    raise ValueError(f"unknown rule {rule!r}")


@dataclass
class CellTrail:
    """Everything one variable-horizon cell produced over the backtest."""

    estimates: dict[str, list[tuple[str, float]]]
    errors: dict[str, list[tuple[int, float]]]
    diagnostics: CellDiagnostics


def _run_cell(
    panel: Panel,
    variable: str,
    horizon: int,
    rules: Sequence[str],
    calib: Calibration,
    top_n: int | None,
    window: int | None,
) -> CellTrail:
    """Roll one variable-horizon cell through the surveys."""
    pair = calib.pair(variable)
    states: dict[str, ForecasterState] = {}
    pending: list[tuple[SurveySlice, str]] = []
    estimates: dict[str, list[tuple[str, float]]] = {rule: [] for rule in rules}
    errors: dict[str, list[tuple[int, float]]] = {rule: [] for rule in rules}
    p_hats: list[float] = []
    fallback_surveys = 0
    skipped_surveys = 0

    for idx, survey in enumerate(panel.surveys):
        still_pending = []
        for past_slice, target in pending:
            realized = panel.realized_value(variable, target, asof=survey)
            if realized is None:
                still_pending.append((past_slice, target))
                continue
            for j, term in slice_contribution_terms(past_slice, realized).items():
                states[j] = add_contribution(states[j], term)
            for j in sorted(past_slice.forecasts):
                se = (past_slice.forecasts[j] - realized) ** 2
                state = states.get(j, ForecasterState(forecaster_id=j))
                states[j] = update_state(state, se, pair, window)
        pending = still_pending

        forecasts = panel.forecasts_at(survey, variable, horizon)
        if not forecasts:
            continue
        eligible = {
            j for j in forecasts
            if j in states and len(states[j].squared_errors) >= 2
        }
        if top_n is not None and eligible:
            eligible = set(top_n_subset({j: states[j] for j in eligible}, top_n))
        slice_ = SurveySlice(survey, forecasts, frozenset(eligible))
        target = add_quarters(survey, horizon - 1)
        realized = panel.realized_value(variable, target)

        if eligible:
            p_hats.extend(states[j].p_hat.p for j in sorted(eligible))
            results = {rule: _estimate(rule, slice_, states) for rule in rules}
            for rule in rules:
                estimates[rule].append((survey, results[rule].estimate))
            if realized is not None:
                if not positive_contribution_subset(slice_, states):
                    fallback_surveys += 1
                for rule in rules:
                    errors[rule].append((idx, results[rule].estimate - realized))
            else:
                skipped_surveys += 1
        else:
            skipped_surveys += 1

        pending.append((slice_, target))

    diag = CellDiagnostics(
        variable=variable,
        horizon=horizon,
        median_p_hat=float(np.median(p_hats)) if p_hats else math.nan,
        cwm_fallback_surveys=fallback_surveys,
        skipped_surveys=skipped_surveys,
    )
    return CellTrail(estimates=estimates, errors=errors, diagnostics=diag)


def cell_estimates(
    panel: Panel,
    variable: str,
    horizon: int,
    rules: Sequence[str],
    calib: Calibration,
    top_n: int | None = None,
    window: int | None = None,
) -> dict[str, list[tuple[str, float]]]:
    """Per-rule (survey, estimate) trail for one cell; useful for audits."""
    trail = _run_cell(panel, variable, horizon, rules, calib, top_n, window)
    return trail.estimates


def run_backtest(
    panel: Panel,
    rules: Sequence[str],
    calib: Calibration,
    top_n: int | None = None,
    window: int | None = None,
    hln: bool = False,
) -> BacktestReport:
    """Backtest the requested rules over every variable-horizon cell.

    RMSE covers the surveys where a rule produced an estimate and a
    first-reported realization exists. Diebold-Mariano cells compare each
    rule's errors against the contribution-weighted rule's on their common
    surveys, when at least eight align. ``top_n`` restricts every survey's
    eligible set to the most reliable n forecasters.
    """
    if not panel.forecasts:
        raise EmptyPanelError("panel holds no forecasts")
    for rule in rules:
        if rule not in ALL_RULES:
            raise ValueError(f"unknown rule {rule!r}")
    cells: list[RmseCell] = []
    dm_cells: list[DmCell] = []
    diagnostics: list[CellDiagnostics] = []
    for variable in sorted(panel.variables):
        for horizon in panel.horizons(variable):
            trail = _run_cell(panel, variable, horizon, rules, calib, top_n, window)
            errors = trail.errors
            diagnostics.append(trail.diagnostics)
            for rule in rules:
                series = [e for _, e in errors[rule]]
                rmse = math.sqrt(sum(e * e for e in series) / len(series)) if series else math.nan
                cells.append(RmseCell(variable, horizon, rule, rmse, len(series)))
            if RULE_CWM in rules:
                base = dict(errors[RULE_CWM])
                for rule in rules:
                    if rule == RULE_CWM:
                        continue
                    shared = [idx for idx, _ in errors[rule] if idx in base]
                    if len(shared) < _MIN_DM_LENGTH:
                        continue
                    rule_errors = dict(errors[rule])
                    stat, p_value = dm_test(
                        [rule_errors[i] for i in shared],
                        [base[i] for i in shared],
                        horizon,
                        hln,
                    )
                    dm_cells.append(DmCell(variable, horizon, rule, stat, p_value))
    cells.sort(key=lambda c: (c.variable, c.horizon, _RULE_ORDER[c.rule]))
    dm_cells.sort(key=lambda c: (c.variable, c.horizon, _RULE_ORDER[c.rule]))
    diagnostics.sort(key=lambda c: (c.variable, c.horizon))
    return BacktestReport(cells=cells, dm=dm_cells, diagnostics=diagnostics)


def subset_sweep(
    panel: Panel,
    horizons: Sequence[int],
    n_range: Iterable[int],
    calib: Calibration,
    rules: Sequence[str] = ALL_RULES,
    aggregate: str = "mean",
    window: int | None = None,
) -> list[SweepPoint]:
    """RMSE curves as the eligible set shrinks to the best n forecasters.

    Reruns the full backtest per n with the top-n eligibility filter and
    aggregates each rule's RMSE across variables, by default as the mean of
    per-variable RMSEs (``aggregate="pooled"`` pools the squared errors
    instead).
    """
    if aggregate not in ("mean", "pooled"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    sizes = sorted(set(n_range))
    if not sizes or sizes[0] < 1:
        raise ValueError("subset sizes must be positive")
    points: list[SweepPoint] = []
    for n in sizes:
        report = run_backtest(panel, rules, calib, top_n=n, window=window)
        for horizon in horizons:
            for rule in rules:
                matched = [
                    c for c in report.cells
                    if c.horizon == horizon and c.rule == rule and c.n_surveys > 0
                ]
                if not matched:
                    continue
                if aggregate == "mean":
                    rmse = sum(c.rmse for c in matched) / len(matched)
                else:
                    total = sum(c.rmse**2 * c.n_surveys for c in matched)
                    count = sum(c.n_surveys for c in matched)
                    rmse = math.sqrt(total / count)
                points.append(SweepPoint(horizon, rule, n, rmse))
    points.sort(key=lambda p: (p.horizon, _RULE_ORDER[p.rule], p.n_included))
    return points


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.6f}"


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_rmse_csv(cells: Sequence[RmseCell], path: str) -> None:
    lines = [RMSE_CSV_HEADER]
    for c in cells:
        lines.append(f"{c.variable},{c.horizon},{c.rule},{_fmt(c.rmse)},{c.n_surveys}")
    _write_lines(path, lines)


def write_dm_csv(cells: Sequence[DmCell], path: str) -> None:
    lines = [DM_CSV_HEADER]
    for c in cells:
        lines.append(f"{c.variable},{c.horizon},{c.rule},{_fmt(c.stat)},{_fmt(c.p_value)}")
    _write_lines(path, lines)


def write_diagnostics_csv(cells: Sequence[CellDiagnostics], path: str) -> None:
    lines = [DIAGNOSTICS_CSV_HEADER]
    for c in cells:
        lines.append(
            f"{c.variable},{c.horizon},{_fmt(c.median_p_hat)},"
            f"{c.cwm_fallback_surveys},{c.skipped_surveys}"
        )
    _write_lines(path, lines)


def write_sweep_csv(points: Sequence[SweepPoint], path: str) -> None:
    lines = [SWEEP_CSV_HEADER]
    for p in points:
        lines.append(f"{p.horizon},{p.rule},{p.n_included},{_fmt(p.rmse)}")
    _write_lines(path, lines)
