"""Survey panel ingestion, target construction, calibration, and synthesis.

A panel holds quarterly forecasts (per survey, variable, horizon, and
forecaster), realized values as first reported, and vintage level series.
File schemas (UTF-8 CSV, mandatory header, ``.`` decimal separator,
periods formatted ``YYYYQn``):

* forecasts:     ``survey,variable,horizon,forecaster_id,value``
* realizations:  ``target,variable,value,vintage``
* vintages:      ``asof,variable,period,level``

Realized targets are taken from the first vintage strictly following the
target period, so they reflect only what forecasters could not have known.
Realization values are level data; analysis units are yearly percentage
changes computed across the first-report series (except UNEMP, already in
percent). Synthetic panels skip the transformation and carry analysis
units directly.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .quincunx import Environment, Judge, sample_estimate

log = logging.getLogger(__name__)

FORECAST_HEADER = ["survey", "variable", "horizon", "forecaster_id", "value"]
REALIZATION_HEADER = ["target", "variable", "value", "vintage"]
VINTAGE_HEADER = ["asof", "variable", "period", "level"]

UNTRANSFORMED_VARIABLES = frozenset({"UNEMP"})

MIN_HORIZON = 1
MAX_HORIZON = 5

_PERIOD_RE = re.compile(r"^(\d{4})Q([1-4])$")
_DATE_RE = re.compile(r"^(\d{4})-(\d{2})(?:-(\d{2}))?$")


class PanelError(ValueError):
    """Base error for panel files and derived quantities."""


class SchemaError(PanelError):
    """A file's header does not match the documented schema."""


class DuplicateRowError(PanelError):
    """Two rows share a key that must be unique."""


class MissingLevelError(PanelError):
    """A level needed for the percentage-change transform is absent."""


class ZeroBaseError(PanelError):
    """The lagged level is zero, so the percentage change is undefined."""


class CalibrationError(PanelError):
    """The calibration series is empty or constant."""


class MissingSeedError(SchemaError):
    """A generator run has no seed, neither in the config nor from the caller."""


# ---------------------------------------------------------------------------
# Period arithmetic
# ---------------------------------------------------------------------------

def parse_period(text: str) -> tuple[int, int]:
    m = _PERIOD_RE.match(text)
    if not m:
        raise PanelError(f"bad period {text!r}, expected YYYYQn")
    return int(m.group(1)), int(m.group(2))


def format_period(year: int, quarter: int) -> str:
    return f"{year:04d}Q{quarter}"


def add_quarters(period: str, k: int) -> str:
    year, quarter = parse_period(period)
    idx = year * 4 + (quarter - 1) + k
    return format_period(idx // 4, idx % 4 + 1)


def period_key(period: str) -> int:
    year, quarter = parse_period(period)
    return year * 4 + quarter - 1


def period_end_month(period: str) -> tuple[int, int]:
    """(year, month) in which the quarter ends."""
    year, quarter = parse_period(period)
    return year, 3 * quarter


def asof_key(text: str) -> tuple[int, int]:
    """(year, month) ordering key for a vintage stamp (YYYYQn or ISO date)."""
    m = _PERIOD_RE.match(text)
    if m:
        return int(m.group(1)), 3 * int(m.group(2))
    m = _DATE_RE.match(text)
    if m:
        return int(m.group(1)), int(m.group(2))
    raise PanelError(f"bad vintage stamp {text!r}, expected YYYYQn or YYYY-MM[-DD]")


# ---------------------------------------------------------------------------
# Rows and the panel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForecastRow:
    survey: str
    variable: str
    horizon: int
    forecaster_id: str
    value: float


@dataclass(frozen=True)
class RealizationRow:
    target: str
    variable: str
    value: float
    vintage: str


@dataclass(frozen=True)
class VintageRow:
    asof: str
    variable: str
    period: str
    level: float


def _report_candidates(
    rows: Iterable[tuple[str, str, str, float]]
) -> dict[str, dict[str, list[tuple[tuple[int, int], float]]]]:
    """Group reported values by (variable, period), keeping stamps after the period end.

    Values stamped at or before the period end cannot be first reports of a
    completed period and are dropped with a diagnostic. The survivors are
    sorted by stamp, so index 0 is the first report.
    """
    grouped: dict[str, dict[str, list[tuple[tuple[int, int], float]]]] = {}
    early: set[tuple[str, str]] = set()
    for variable, period, stamp, value in rows:
        key = asof_key(stamp)
        if key <= period_end_month(period):
            early.add((variable, period))
            continue
        grouped.setdefault(variable, {}).setdefault(period, []).append((key, value))
    for variable in grouped:
        for period in grouped[variable]:
            grouped[variable][period].sort(key=lambda item: item[0])
    for variable, period in sorted(early):
        if period not in grouped.get(variable, {}):
            log.warning(
                "no stamp after period end for %s %s; value dropped", variable, period
            )
    return grouped


def _first_reports(
    rows: Iterable[tuple[str, str, str, float]]
) -> dict[str, dict[str, float]]:
    """Per (variable, period), the value at the first stamp after the period ends."""
    grouped = _report_candidates(rows)
    return {
        variable: {period: candidates[0][1] for period, candidates in by_period.items()}
        for variable, by_period in grouped.items()
    }


@dataclass
class Panel:
    """An immutable forecast panel with derived lookup tables."""

    forecasts: tuple[ForecastRow, ...]
    realizations: tuple[RealizationRow, ...]
    vintages: tuple[VintageRow, ...]
    transform: str = "yearly_pct"

    surveys: tuple[str, ...] = field(init=False)
    variables: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        if self.transform not in ("yearly_pct", "none"):
            raise ValueError(f"unknown transform {self.transform!r}")
        self.surveys = tuple(sorted({f.survey for f in self.forecasts}, key=period_key))
        self.variables = frozenset(f.variable for f in self.forecasts)
        self._forecast_map: dict[tuple[str, str, int], dict[str, float]] = {}
        for row in self.forecasts:
            cell = self._forecast_map.setdefault((row.survey, row.variable, row.horizon), {})
            cell[row.forecaster_id] = row.value
        self._reports = _report_candidates(
            (r.variable, r.target, r.vintage, r.value) for r in self.realizations
        )

    def forecasts_at(self, survey: str, variable: str, horizon: int) -> dict[str, float]:
        return dict(self._forecast_map.get((survey, variable, horizon), {}))

    def horizons(self, variable: str) -> tuple[int, ...]:
        return tuple(sorted({f.horizon for f in self.forecasts if f.variable == variable}))

    def _levels(self, variable: str, asof: str | None) -> dict[str, float]:
        """First-report levels per period, restricted to stamps known by ``asof``."""
        by_period = self._reports.get(variable, {})
        if asof is None:
            return {period: cands[0][1] for period, cands in by_period.items()}
        bound = period_end_month(asof)
        out = {}
        for period, cands in by_period.items():
            if cands[0][0] <= bound:
                out[period] = cands[0][1]
        return out

    def first_report_levels(self, variable: str) -> dict[str, float]:
        return self._levels(variable, None)

    def realized_value(
        self, variable: str, target: str, asof: str | None = None
    ) -> float | None:
        """Realized analysis-unit value for a target period, or None if unknown.

        With ``asof`` set to a survey period, only first reports stamped by
        the end of that period count as known; this is what keeps rolling
        state updates free of lookahead.
        """
        levels = self._levels(variable, asof)
        if self.transform == "none" or variable in UNTRANSFORMED_VARIABLES:
            return levels.get(target)
        try:
            return to_yearly_pct_change(levels, target)
        except (MissingLevelError, ZeroBaseError):
            return None


# ---------------------------------------------------------------------------
# Transform and calibration
# ---------------------------------------------------------------------------

def to_yearly_pct_change(
    levels: Mapping[str, float], target_period: str, variable: str | None = None
) -> float:
    """Yearly percentage change of a level series at a target period.

    100 * (x_t / x_{t-4} - 1) over the four-quarter lag. UNEMP is already in
    percent and passes through unchanged.
    """
    if variable in UNTRANSFORMED_VARIABLES:
        if target_period not in levels:
            raise MissingLevelError(f"no level at {target_period}")
        return levels[target_period]
    lag_period = add_quarters(target_period, -4)
    if target_period not in levels or lag_period not in levels:
        raise MissingLevelError(
            f"need levels at {target_period} and {lag_period} for the yearly change"
        )
    base = levels[lag_period]
    if base == 0.0:
        raise ZeroBaseError(f"level at {lag_period} is zero")
    return 100.0 * (levels[target_period] / base - 1.0)


@dataclass(frozen=True)
class Calibration:
    """The (element count, evidence unit) pair per variable.

    The count is 1 under the documented rule; the unit is the largest
    absolute deviation of the analysis-unit series from its mean, so the
    maximal-uncertainty bound covers every observed value.
    """

    count: int
    unit_by_variable: Mapping[str, float]

    def pair(self, variable: str) -> tuple[int, float]:
        return self.count, self.unit_by_variable[variable]


def calibrate_v(series_by_variable: Mapping[str, Sequence[float]]) -> Calibration:
    """Calibrate the evidence unit per variable from analysis-unit series.

    The norm of each variable is its arithmetic mean (summed in input
    order, for cross-platform determinism); the unit is the maximum
    absolute deviation from the norm.
    """
    units: dict[str, float] = {}
    for variable in sorted(series_by_variable):
        series = list(series_by_variable[variable])
        if not series:
            raise CalibrationError(f"{variable}: empty calibration series")
        norm = sum(series) / len(series)
        unit = max(abs(x - norm) for x in series)
        if unit == 0.0:
            raise CalibrationError(f"{variable}: constant series gives a zero unit")
        units[variable] = unit
    return Calibration(count=1, unit_by_variable=units)


def calibration_series(panel: Panel) -> dict[str, list[float]]:
    """Analysis-unit series per variable from the vintage table's first reports."""
    first = _first_reports((v.variable, v.period, v.asof, v.level) for v in panel.vintages)
    out: dict[str, list[float]] = {}
    for variable in sorted(first):
        levels = first[variable]
        periods = sorted(levels, key=period_key)
        if panel.transform == "none" or variable in UNTRANSFORMED_VARIABLES:
            out[variable] = [levels[p] for p in periods]
            continue
        series = []
        for p in periods:
            try:
                series.append(to_yearly_pct_change(levels, p))
            except (MissingLevelError, ZeroBaseError):
                continue
        out[variable] = series
    return out


# ---------------------------------------------------------------------------
# Loading and writing
# ---------------------------------------------------------------------------

def _read_rows(path: str, header: list[str]) -> list[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {','.join(header)}")
        if got != header:
            raise SchemaError(
                f"{path}: header {','.join(got)!r} does not match {','.join(header)!r}"
            )
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                log.warning("%s:%d: expected %d columns, got %d; row rejected",
                            path, line_no, len(header), len(row))
                continue
            rows.append((line_no, row))
    return rows


def load_panel(
    forecast_path: str,
    realization_path: str,
    vintage_path: str,
    transform: str = "yearly_pct",
) -> Panel:
    """Load and validate the three panel files.

    Rows that fail invariants (bad periods, horizons outside 1..5,
    unparseable numbers) are rejected with line-numbered diagnostics;
    duplicate keys raise :class:`DuplicateRowError` naming both lines.
    """
    forecasts: list[ForecastRow] = []
    seen: dict[tuple[str, str, int, str], int] = {}
    rows = _read_rows(forecast_path, FORECAST_HEADER)
    if not rows:
        log.warning("%s: no forecast rows", forecast_path)
    for line_no, (survey, variable, horizon_s, forecaster, value_s) in rows:
        try:
            parse_period(survey)
            horizon = int(horizon_s)
            value = float(value_s)
        except (PanelError, ValueError) as exc:
            log.warning("%s:%d: %s; row rejected", forecast_path, line_no, exc)
            continue
        if not MIN_HORIZON <= horizon <= MAX_HORIZON:
            log.warning("%s:%d: horizon %d outside %d..%d; row rejected",
                        forecast_path, line_no, horizon, MIN_HORIZON, MAX_HORIZON)
            continue
        key = (survey, variable, horizon, forecaster)
        if key in seen:
            raise DuplicateRowError(
                f"{forecast_path}: duplicate forecast {key} at lines {seen[key]} and {line_no}"
            )
        seen[key] = line_no
        forecasts.append(ForecastRow(survey, variable, horizon, forecaster, value))

    realizations: list[RealizationRow] = []
    seen_r: dict[tuple[str, str, str], int] = {}
    for line_no, (target, variable, value_s, vintage) in _read_rows(
        realization_path, REALIZATION_HEADER
    ):
        try:
            parse_period(target)
            asof_key(vintage)
            value = float(value_s)
        except (PanelError, ValueError) as exc:
            log.warning("%s:%d: %s; row rejected", realization_path, line_no, exc)
            continue
        key = (target, variable, vintage)
        if key in seen_r:
            raise DuplicateRowError(
                f"{realization_path}: duplicate realization {key} at lines "
                f"{seen_r[key]} and {line_no}"
            )
        seen_r[key] = line_no
        realizations.append(RealizationRow(target, variable, value, vintage))

    vintages: list[VintageRow] = []
    seen_v: dict[tuple[str, str, str], int] = {}
    for line_no, (asof, variable, period, level_s) in _read_rows(
        vintage_path, VINTAGE_HEADER
    ):
        try:
            asof_key(asof)
            parse_period(period)
            level = float(level_s)
        except (PanelError, ValueError) as exc:
            log.warning("%s:%d: %s; row rejected", vintage_path, line_no, exc)
            continue
        key = (asof, variable, period)
        if key in seen_v:
            raise DuplicateRowError(
                f"{vintage_path}: duplicate vintage {key} at lines "
                f"{seen_v[key]} and {line_no}"
            )
        seen_v[key] = line_no
        vintages.append(VintageRow(asof, variable, period, level))

    return Panel(
        forecasts=tuple(forecasts),
        realizations=tuple(realizations),
        vintages=tuple(vintages),
        transform=transform,
    )


def write_panel(
    panel: Panel, forecast_path: str, realization_path: str, vintage_path: str
) -> None:
    """Write the three files in canonical form (row order preserved, repr floats)."""
    with open(forecast_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(FORECAST_HEADER) + "\n")
        for r in panel.forecasts:
            fh.write(f"{r.survey},{r.variable},{r.horizon},{r.forecaster_id},{r.value!r}\n")
    with open(realization_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(REALIZATION_HEADER) + "\n")
        for r in panel.realizations:
            fh.write(f"{r.target},{r.variable},{r.value!r},{r.vintage}\n")
    with open(vintage_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(VINTAGE_HEADER) + "\n")
        for r in panel.vintages:
            fh.write(f"{r.asof},{r.variable},{r.period},{r.level!r}\n")


# ---------------------------------------------------------------------------
# Synthetic panels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Generator settings for a detection-walk-faithful synthetic panel.

    ``turnover`` is an annualized replacement rate; with quarterly surveys
    the per-survey exit probability is 1 - (1 - turnover) ** (1/4).
    Reliability draws: ``const`` gives every entrant ``p_value``;
    ``uniform`` draws from [p_low, p_high]; ``two_point`` gives ``p_high``
    with probability ``p_share_high`` and ``p_low`` otherwise. Longer
    horizons subtract ``p_decay`` per step, floored at 0.5.
    """

    num_forecasters: int
    num_surveys: int
    seed: int
    turnover: float = 0.0
    horizons: int = 1
    variable: str = "SYN"
    norm: float = 100.0
    count: int = 64
    unit: float = 0.125
    p_dist: str = "const"
    p_value: float = 0.8
    p_low: float = 0.7
    p_high: float = 0.95
    p_share_high: float = 0.5
    p_decay: float = 0.0
    start_year: int = 2000

    def __post_init__(self) -> None:
        if self.num_forecasters < 1 or self.num_surveys < 1:
            raise ValueError("need at least one forecaster and one survey")
        if not 0.0 <= self.turnover < 1.0:
            raise ValueError(f"turnover must lie in [0, 1), got {self.turnover!r}")
        if not MIN_HORIZON <= self.horizons <= MAX_HORIZON:
            raise ValueError(f"horizons must lie in {MIN_HORIZON}..{MAX_HORIZON}")
        if self.p_dist not in ("const", "uniform", "two_point"):
            raise ValueError(f"unknown p_dist {self.p_dist!r}")
        for name in ("p_value", "p_low", "p_high"):
            value = getattr(self, name)
            if not 0.5 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0.5, 1], got {value!r}")
        if not 0.0 <= self.p_share_high <= 1.0:
            raise ValueError("p_share_high must lie in [0, 1]")
        if self.p_decay < 0.0:
            raise ValueError("p_decay must be nonnegative")
        if self.count < 1 or not self.unit > 0.0:
            raise ValueError("count must be >= 1 and unit positive")


_SYNTH_FIELD_TYPES = {f.name: f.type for f in fields(SynthConfig)}


def load_synth_config(path: str, seed_override: int | None = None) -> SynthConfig:
    """Parse a flat ``key = value`` generator config file.

    Lines starting with ``#`` and blank lines are skipped. ``seed`` may be
    omitted from the file when supplied by the caller; an explicit override
    always wins.
    """
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
            name, _, text = line.partition("=")
            name, text = name.strip(), text.strip()
            if name not in _SYNTH_FIELD_TYPES:
                raise SchemaError(f"{path}:{line_no}: unknown key {name!r}")
            kind = _SYNTH_FIELD_TYPES[name]
            if kind == "int":
                values[name] = int(text)
            elif kind == "float":
                values[name] = float(text)
            else:
                values[name] = text
    if seed_override is not None:
        values["seed"] = seed_override
    if "seed" not in values:
        raise MissingSeedError(f"{path}: no seed in file and none supplied")
    return SynthConfig(**values)  # type: ignore[arg-type]


def synth_panel(config: SynthConfig) -> Panel:
    """Generate a reproducible panel of detection-walk forecasts.

    Every period draws a net deviation as a sum of fair element signs; the
    realized value is the environment's true magnitude; each active
    forecaster submits a walk estimate at their effective reliability.
    Entrants replace leavers one for one, keeping the roster size constant.
    """
    rng = np.random.default_rng(config.seed)
    n_periods = config.num_surveys + config.horizons - 1
    first = config.start_year * 4
    periods = [format_period((first + i) // 4, (first + i) % 4 + 1) for i in range(n_periods + 1)]

    deviations = [int(2 * rng.binomial(config.count, 0.5) - config.count) for _ in range(n_periods)]

    def draw_p() -> float:
        if config.p_dist == "const":
            return config.p_value
        if config.p_dist == "uniform":
            return float(rng.uniform(config.p_low, config.p_high))
        return config.p_high if rng.random() < config.p_share_high else config.p_low

    next_id = 0

    def new_forecaster() -> tuple[str, float]:
        nonlocal next_id
        next_id += 1
        return f"F{next_id:04d}", draw_p()

    roster = [new_forecaster() for _ in range(config.num_forecasters)]
    exit_prob = 1.0 - (1.0 - config.turnover) ** 0.25

    forecasts: list[ForecastRow] = []
    for s in range(config.num_surveys):
        if s > 0 and exit_prob > 0.0:
            roster = [
                member if rng.random() >= exit_prob else new_forecaster()
                for member in roster
            ]
        for h in range(1, config.horizons + 1):
            env = Environment(
                norm=config.norm,
                count=config.count,
                unit=config.unit,
                deviation=deviations[s + h - 1],
            )
            for fid, p_base in roster:
                p_eff = min(1.0, max(0.5, p_base - config.p_decay * (h - 1)))
                value = sample_estimate(Judge(p_eff), env, rng)
                forecasts.append(ForecastRow(periods[s], config.variable, h, fid, value))

    realizations = []
    vintages = []
    for i, t in enumerate(deviations):
        value = config.norm + t * config.unit
        stamp = periods[i + 1]
        realizations.append(RealizationRow(periods[i], config.variable, value, stamp))
        vintages.append(VintageRow(stamp, config.variable, periods[i], value))

    return Panel(
        forecasts=tuple(forecasts),
        realizations=tuple(realizations),
        vintages=tuple(vintages),
        transform="none",
    )
