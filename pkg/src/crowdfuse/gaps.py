"""Expected-accuracy gaps between fusion rules under estimated weights.

When the weights of a two-source fusion are set from sample variances
(n observations each) instead of the true variances, the realized MSE
exceeds the optimum by a random amount. This module draws those sample
variances (Gamma-distributed for Gaussian sources), evaluates the realized
gaps for three rule comparisons, provides the closed-form n = 2 expected
gaps, and cross-checks them by Monte Carlo. It also produces the
plot-ready reliability grids for the three comparisons and the
Gaussian-limit diagnostics of the detection walk.

Gap sign conventions (always first rule minus second):

* ``KFU_VS_KFC``: estimated-weight fusion minus true-weight fusion
  (nonnegative in expectation; zero only if the estimated weight is exact).
* ``EW_VS_KFU``: equal weighting minus estimated-weight fusion
  (negative where equal weighting wins).
* ``SR_VS_KFU``: keeping source 1 alone minus estimated-weight fusion
  (negative where refusing to fuse wins; asymmetric by construction).
"""

from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .quincunx import Environment, Judge, sample_estimates

MIN_MC_TRIALS = 10_000
_SINGULAR_TOL = 1e-9
_GRID_P_LO = 0.51
_GRID_P_HI = 0.995
_CHUNK = 1_000_000

GRID_CSV_HEADER = "p1,p2,analytic,mc_mean,mc_stderr,trials"


class SingularGapError(ValueError):
    """The closed form is singular at equal variances; use Monte Carlo."""


class GapKind(enum.Enum):
    KFU_VS_KFC = "kfu-kfc"
    EW_VS_KFU = "ew-kfu"
    SR_VS_KFU = "sr-kfu"


@dataclass(frozen=True)
class SampleVariance:
    """A sample variance together with the observation count behind it."""

    s2: float
    n: int

    def __post_init__(self) -> None:
        if self.s2 < 0.0:
            raise ValueError(f"sample variance must be nonnegative, got {self.s2!r}")
        if self.n < 2:
            raise ValueError(f"need at least 2 observations, got {self.n!r}")


@dataclass(frozen=True)
class GapEstimate:
    """A closed-form value next to its Monte Carlo estimate."""

    analytic: float
    monte_carlo_mean: float
    monte_carlo_stderr: float
    trials: int

    def __post_init__(self) -> None:
        if self.monte_carlo_stderr < 0.0:
            raise ValueError("stderr must be nonnegative")
        if self.trials <= 0:
            raise ValueError("trials must be positive")


@dataclass(frozen=True)
class GridCell:
    """One plot-ready grid record: axes plus whichever values were computed."""

    p1: float
    p2: float
    analytic: float
    mc_mean: float
    mc_stderr: float
    trials: int

    @property
    def value(self) -> float:
        return self.analytic if math.isfinite(self.analytic) else self.mc_mean


def reliability_variance(p: float) -> float:
    """Unit-normalized variance 4(1-p)p of the Gaussian-limit walk."""
    return 4.0 * (1.0 - p) * p


def draw_sample_variance(
    sigma2: float, n: int, rng: np.random.Generator
) -> SampleVariance:
    """One sample variance of n Gaussian observations with true variance sigma2.

    Distributed Gamma(shape = (n-1)/2, scale = 2 sigma2 / n), i.e.
    sigma2 * chi2_{n-1} / n, with mean (n-1) sigma2 / n.
    """
    if not sigma2 > 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2!r}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n!r}")
    return SampleVariance(float(rng.gamma((n - 1) / 2.0, 2.0 * sigma2 / n)), n)


def draw_sample_variances(
    sigma2: float, n: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized counterpart of :func:`draw_sample_variance`."""
    if not sigma2 > 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2!r}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n!r}")
    return rng.gamma((n - 1) / 2.0, 2.0 * sigma2 / n, size=size)


def _gap_arrays(
    kind: GapKind, a: float, b: float, s1: np.ndarray, s2: np.ndarray
) -> np.ndarray:
    """Realized gaps for arrays of sample variances (a, b are true variances)."""
    w_star = b / (a + b)
    total = s1 + s2
    w_hat = np.where(total > 0.0, s2 / np.where(total > 0.0, total, 1.0), w_star)
    fused = a * w_hat**2 + b * (1.0 - w_hat) ** 2
    if kind is GapKind.KFU_VS_KFC:
        best = a * w_star**2 + b * (1.0 - w_star) ** 2
        return fused - best
    if kind is GapKind.EW_VS_KFU:
        return (a / 4.0 + b / 4.0) - fused
    if kind is GapKind.SR_VS_KFU:
        return a - fused
    raise ValueError(f"unknown gap kind {kind!r}")


def realized_gap(
    kind: GapKind,
    sigma1_2: float,
    sigma2_2: float,
    s1: SampleVariance,
    s2: SampleVariance,
) -> float:
    """Realized MSE gap for one draw of the two sample variances.

    The estimated weight is s2 / (s1 + s2). Should both sample variances be
    exactly zero (a probability-zero event), the true-variance weight is
    used instead so the gap stays defined.
    """
    if not (sigma1_2 > 0.0 and sigma2_2 > 0.0):
        raise ValueError("true variances must be positive")
    out = _gap_arrays(
        kind, sigma1_2, sigma2_2, np.asarray([s1.s2]), np.asarray([s2.s2])
    )
    return float(out[0])


def expected_gap_analytic(kind: GapKind, sigma1_2: float, sigma2_2: float) -> float:
    """Closed-form expected gap for weights estimated from n = 2 observations.

    The forms for ``KFU_VS_KFC`` and ``EW_VS_KFU`` have a removable
    singularity at equal variances and raise :class:`SingularGapError`
    within 1e-9 of it; callers should fall back to :func:`monte_carlo_gap`
    there. The ``SR_VS_KFU`` form is regular everywhere.
    """
    a, b = sigma1_2, sigma2_2
    if not (a > 0.0 and b > 0.0):
        raise ValueError("true variances must be positive")
    if kind in (GapKind.KFU_VS_KFC, GapKind.EW_VS_KFU) and abs(a - b) < _SINGULAR_TOL:
        raise SingularGapError(
            f"closed form for {kind.value} is singular at equal variances"
        )
    if kind is GapKind.KFU_VS_KFC:
        num = (
            -5.0 * b**2.5 * a**1.5
            + 8.0 * a * b**3
            + math.sqrt(b**9 / a)
            + math.sqrt(a**5 * b**3)
            - 5.0 * math.sqrt(a * b**7)
        )
        return a * num / (2.0 * b * (a - b) ** 2 * (a + b))
    if kind is GapKind.EW_VS_KFU:
        num = (
            12.0 * b**2.5 * a**1.5
            - 2.0 * b**1.5 * a**2.5
            + b**4
            - 5.0 * a * b**3
            - 5.0 * a**2 * b**2
            + a**3 * b
            - 2.0 * math.sqrt(a * b**7)
        )
        return num / (4.0 * b * (a - b) ** 2)
    if kind is GapKind.SR_VS_KFU:
        num = -(b**2) + 3.0 * a * b + 2.0 * math.sqrt(a**3 * b) - 2.0 * math.sqrt(a * b**3)
        den = 2.0 * math.sqrt(b / a) * (a + b + 2.0 * math.sqrt(a * b))
        return num / den
    raise ValueError(f"unknown gap kind {kind!r}")


def _mc_chunk(
    kind: GapKind,
    a: float,
    b: float,
    n: int,
    size: int,
    rng: np.random.Generator,
) -> tuple[float, float, int]:
    s1 = draw_sample_variances(a, n, size, rng)
    s2 = draw_sample_variances(b, n, size, rng)
    g = _gap_arrays(kind, a, b, s1, s2)
    return float(g.sum()), float((g * g).sum()), size


def monte_carlo_gap(
    kind: GapKind,
    sigma1_2: float,
    sigma2_2: float,
    n: int,
    trials: int,
    rng: np.random.Generator,
    jobs: int = 1,
) -> GapEstimate:
    """Monte Carlo estimate of the expected gap, with its standard error.

    Trials run in fixed-size chunks, each on its own random stream spawned
    from ``rng``, and partial sums are reduced in chunk order, so the result
    does not depend on ``jobs`` or scheduling. The closed form is attached
    when it exists (NaN at the singular diagonal).
    """
    if trials < MIN_MC_TRIALS:
        raise ValueError(f"trials must be >= {MIN_MC_TRIALS}, got {trials}")
    sizes = [_CHUNK] * (trials // _CHUNK)
    if trials % _CHUNK:
        sizes.append(trials % _CHUNK)
    streams = rng.spawn(len(sizes))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(
                pool.map(
                    lambda args: _mc_chunk(kind, sigma1_2, sigma2_2, n, *args),
                    zip(sizes, streams),
                )
            )
    else:
        parts = [
            _mc_chunk(kind, sigma1_2, sigma2_2, n, size, stream)
            for size, stream in zip(sizes, streams)
        ]
    total = float(sum(p[0] for p in parts))
    total_sq = float(sum(p[1] for p in parts))
    count = sum(p[2] for p in parts)
    mean = total / count
    var = max(total_sq - total * total / count, 0.0) / (count - 1)
    stderr = math.sqrt(var / count)
    try:
        analytic = expected_gap_analytic(kind, sigma1_2, sigma2_2)
    except SingularGapError:
        analytic = math.nan
    return GapEstimate(
        analytic=analytic, monte_carlo_mean=mean, monte_carlo_stderr=stderr,
        trials=count,
    )


def figure_grid(
    kind: GapKind,
    resolution: int,
    substitute_p: bool = True,
    fallback_trials: int = 1_000_000,
    seed: int = 0,
    jobs: int = 1,
) -> list[GridCell]:
    """Evaluate one gap surface over a reliability (or variance) grid.

    With ``substitute_p`` the axes are reliabilities p1, p2 in
    [0.51, 0.995] and the variances are 4(1-p)p; otherwise the axis values
    are used directly as variances. Cells where the closed form is singular
    are filled by Monte Carlo with ``fallback_trials`` trials on a stream
    derived from (seed, cell index).
    """
    if resolution < 10:
        raise ValueError(f"resolution must be >= 10, got {resolution}")
    axis = np.linspace(_GRID_P_LO, _GRID_P_HI, resolution)
    cells: list[GridCell] = []
    for i, p1 in enumerate(axis):
        for j, p2 in enumerate(axis):
            a = reliability_variance(p1) if substitute_p else float(p1)
            b = reliability_variance(p2) if substitute_p else float(p2)
            try:
                analytic = expected_gap_analytic(kind, a, b)
                cells.append(
                    GridCell(float(p1), float(p2), analytic, math.nan, 0.0, 0)
                )
            except SingularGapError:
                stream = np.random.default_rng(
                    np.random.SeedSequence(seed, spawn_key=(i * resolution + j,))
                )
                est = monte_carlo_gap(kind, a, b, 2, fallback_trials, stream, jobs)
                cells.append(
                    GridCell(
                        float(p1), float(p2), math.nan,
                        est.monte_carlo_mean, est.monte_carlo_stderr, est.trials,
                    )
                )
    return cells


def gaussian_limit_check(
    judge: Judge,
    c_values: Sequence[int],
    samples: int,
    rng: np.random.Generator,
) -> list[tuple[int, float]]:
    """KS distance of the standardized walk to the standard Gaussian, per C.

    Holds C v^2 = 1 (v = 1 / sqrt(C)) at zero net deviation, so the walk
    variance is 4(1-p)p for every C and the distance shrinks as the element
    count grows. The walk lives on a lattice of spacing 2v, so the distance
    floors at about phi(0) * v / sigma rather than reaching zero. A perfect
    judge is degenerate and is skipped with a warning.
    """
    if judge.p == 1.0:
        warnings.warn("p = 1 walk is degenerate; Gaussian check skipped")
        return []
    sigma = math.sqrt(reliability_variance(judge.p))
    out: list[tuple[int, float]] = []
    for c in c_values:
        if c < 2 or c % 2 != 0:
            raise ValueError(f"element counts must be even and >= 2, got {c}")
        env = Environment(norm=0.0, count=c, unit=1.0 / math.sqrt(c), deviation=0)
        draws = sample_estimates(judge, env, samples, rng) / sigma
        out.append((c, ks_distance(draws, stats.norm.cdf)))
    return out


def ks_distance(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Two-sided Kolmogorov-Smirnov distance of a sample to a continuous CDF."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    f = cdf(x)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def _csv_float(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_grid_csv(cells: Iterable[GridCell], path: str) -> None:
    """Write grid records as UTF-8 CSV; empty fields where nothing was computed."""
    lines = [GRID_CSV_HEADER]
    for c in cells:
        lines.append(
            ",".join(
                (
                    repr(float(c.p1)),
                    repr(float(c.p2)),
                    _csv_float(c.analytic),
                    _csv_float(c.mc_mean),
                    _csv_float(c.mc_stderr) if c.trials else "",
                    str(c.trials),
                )
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_convergence_csv(points: Iterable[tuple[int, float]], path: str) -> None:
    """Write (element count, KS distance) pairs as UTF-8 CSV."""
    lines = ["C,ks_distance"]
    for c, d in points:
        lines.append(f"{c},{repr(float(d))}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
