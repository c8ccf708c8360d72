"""Quincunx-style judgment model: noisy detection walks over binary evidence.

A judge estimates a magnitude by scanning the ``count`` elements of an
environment. Each element deviates from its category norm by ``+unit`` or
``-unit``, and the judge detects each deviation's sign correctly with
probability ``p`` (independently). The estimate is the category norm plus
the resulting signed random walk, so detection reliability maps directly
onto estimate variance:

    mean     = (2p - 1) * t * v
    variance = 4 * C * (1 - p) * p * v**2
    skewness = -2 * mean / (C * sigma)
    kurtosis = 3 + 4 * v**2 / sigma**2 - 6 / C

where C is the element count, v the evidence unit, and t the net signed
deviation of the environment. The variance identity is invertible, which
gives the reliability-from-MSE rule and a closure property: fusing two
judges' estimates with inverse-variance weights yields a combined estimate
whose variance again has the 4C(1-p)p v^2 form for an effective p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateVarianceError(ValueError):
    """Raised when a shape moment is requested for a zero-variance judge."""


@dataclass(frozen=True)
class Environment:
    """A category instance: norm plus ``count`` elements of +/-``unit`` evidence.

    ``deviation`` is the signed sum of the element signs, so the true
    magnitude is ``norm + deviation * unit``. It must satisfy
    ``|deviation| <= count`` and share the parity of ``count``.
    """

    norm: float
    count: int
    unit: float
    deviation: int

    def __post_init__(self) -> None:
        if not isinstance(self.count, int) or self.count < 1:
            raise ValueError(f"count must be a positive integer, got {self.count!r}")
        if not isinstance(self.deviation, int):
            raise ValueError(f"deviation must be an integer, got {self.deviation!r}")
        if not (self.unit > 0.0 and math.isfinite(self.unit)):
            raise ValueError(f"unit must be a positive finite real, got {self.unit!r}")
        if not math.isfinite(self.norm):
            raise ValueError(f"norm must be finite, got {self.norm!r}")
        if abs(self.deviation) > self.count:
            raise ValueError(
                f"|deviation| = {abs(self.deviation)} exceeds count = {self.count}"
            )
        if (self.deviation + self.count) % 2 != 0:
            raise ValueError(
                f"deviation {self.deviation} and count {self.count} must have equal parity"
            )

    @property
    def true_value(self) -> float:
        return self.norm + self.deviation * self.unit

    @property
    def positive_elements(self) -> int:
        """Number of elements carrying +unit; the first ones by convention."""
        return (self.count + self.deviation) // 2


@dataclass(frozen=True)
class Judge:
    """Per-element correct-detection probability, restricted to [0.5, 1].

    Values below 0.5 would mean worse-than-chance detection, which the
    MSE-based reliability estimator can never produce; they are rejected.
    """

    p: float

    def __post_init__(self) -> None:
        if not (0.5 <= self.p <= 1.0):
            raise ValueError(f"p must lie in [0.5, 1], got {self.p!r}")

    @property
    def noise(self) -> float:
        """The unit-free variance factor (1 - p) * p."""
        return (1.0 - self.p) * self.p


@dataclass(frozen=True)
class Moments:
    """First four moments of the detection-walk error.

    ``kurtosis`` is ``None`` for a degenerate (zero-variance) walk; skewness
    takes its natural degenerate value 0 there.
    """

    mean: float
    variance: float
    skewness: float
    kurtosis: float | None

    def __post_init__(self) -> None:
        if self.variance < 0.0:
            raise ValueError(f"variance must be nonnegative, got {self.variance!r}")
        if self.variance > 0.0 and self.kurtosis is not None and self.kurtosis < 1.0:
            raise ValueError(f"kurtosis must be >= 1, got {self.kurtosis!r}")


def moments(judge: Judge, env: Environment) -> Moments:
    """Exact moments of the walk error for one judge in one environment.

    At p = 1 the walk is deterministic: variance 0, skewness 0 by
    convention, kurtosis undefined (``None``); use :func:`kurtosis` to get
    the error-raising accessor.
    """
    p, c, v, t = judge.p, env.count, env.unit, env.deviation
    mean = (2.0 * p - 1.0) * t * v
    variance = 4.0 * c * (1.0 - p) * p * v * v
    if variance == 0.0:
        return Moments(mean=mean, variance=0.0, skewness=0.0, kurtosis=None)
    sigma = math.sqrt(variance)
    skew = -2.0 * mean / (c * sigma)
    kurt = 3.0 + 4.0 * v * v / variance - 6.0 / c
    return Moments(mean=mean, variance=variance, skewness=skew, kurtosis=kurt)


def kurtosis(judge: Judge, env: Environment) -> float:
    """Kurtosis of the walk error; errors out when the variance is zero."""
    m = moments(judge, env)
    if m.kurtosis is None:
        raise DegenerateVarianceError(
            "kurtosis is undefined at zero variance (p = 1)"
        )
    return m.kurtosis


def sample_estimate(judge: Judge, env: Environment, rng: np.random.Generator) -> float:
    """One estimate: norm + unit * sum of detected element signs.

    The first ``(count + deviation) / 2`` elements carry +1 and the rest -1;
    each is detected correctly with probability p, independently, and a
    wrong detection flips the element's contribution.
    """
    n_pos = env.positive_elements
    signs = np.ones(env.count)
    signs[n_pos:] = -1.0
    correct = rng.random(env.count) < judge.p
    steps = np.where(correct, signs, -signs)
    return env.norm + env.unit * float(steps.sum())


def sample_estimates(
    judge: Judge, env: Environment, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized draws with the same distribution as :func:`sample_estimate`.

    Grouping the walk by true element sign, the sum of detections over the
    n+ positive elements is Binomial(n+, p) and likewise for the negative
    group, so the walk equals 2*(B+ - B-) - deviation. This is an exact
    distributional identity, not an approximation.
    """
    n_pos = env.positive_elements
    n_neg = env.count - n_pos
    b_pos = rng.binomial(n_pos, judge.p, size=size)
    b_neg = rng.binomial(n_neg, judge.p, size=size)
    walk = 2.0 * (b_pos - b_neg).astype(np.float64) - env.deviation
    return env.norm + env.unit * walk


def variance_from_p(p: float, count: int, unit: float) -> float:
    """Estimate variance implied by reliability p: 4 * C * (1-p) * p * v**2.

    Monotone decreasing in p on [0.5, 1]; zero exactly at p = 1.
    """
    if not (0.5 <= p <= 1.0):
        raise ValueError(f"p must lie in [0.5, 1], got {p!r}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count!r}")
    if not unit > 0.0:
        raise ValueError(f"unit must be positive, got {unit!r}")
    return 4.0 * count * (1.0 - p) * p * unit * unit


def p_from_mse(mse: float, count: int, unit: float) -> Judge:
    """Invert the variance identity: reliability implied by an observed MSE.

    p = 1/2 + sqrt(Cv^2 (Cv^2 - MSE)) / (2 Cv^2). An MSE above Cv^2 (possible
    in real data) is clamped to the maximal-uncertainty bound, returning
    p = 0.5 rather than a complex root.
    """
    if mse < 0.0 or not math.isfinite(mse):
        raise ValueError(f"mse must be a nonnegative finite real, got {mse!r}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count!r}")
    if not unit > 0.0:
        raise ValueError(f"unit must be positive, got {unit!r}")
    cap = count * unit * unit
    if mse >= cap:
        return Judge(0.5)
    p = 0.5 + math.sqrt(cap * (cap - mse)) / (2.0 * cap)
    return Judge(min(p, 1.0))


def fuse_p(a: Judge, b: Judge) -> Judge:
    """Effective reliability of the inverse-variance fusion of two judges.

    p = 1/2 + 1/2 * sqrt(1 - 4 * u1*u2 / (u1 + u2)) with u_i = (1-p_i)p_i.
    The result is at least max(p1, p2), strictly greater when both are
    below 1, and the element count and evidence unit cancel. Two perfect
    judges combine to the (zero-variance) limit p = 1.
    """
    u1, u2 = a.noise, b.noise
    if u1 + u2 == 0.0:
        return Judge(1.0)
    k = u1 * u2 / (u1 + u2)
    return Judge(0.5 + 0.5 * math.sqrt(1.0 - 4.0 * k))
