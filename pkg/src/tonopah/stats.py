"""Small statistics helpers for the experiment harness."""

import math
from dataclasses import dataclass

from scipy.stats import t as t_dist


class StatsError(ValueError):
    """Raised for degenerate inputs instead of returning NaN."""


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_t_test(a, b) -> WelchResult:
    """Two-sided Welch's unequal-variance t-test.

    Requires at least two samples per group and nonzero variance in at least
    one group (equal constant groups degenerate to t=0, p=1).
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise StatsError("welch_t_test needs at least 2 samples per group")
    m1 = sum(a) / n1
    m2 = sum(b) / n2
    v1 = sum((x - m1) ** 2 for x in a) / (n1 - 1)
    v2 = sum((x - m2) ** 2 for x in b) / (n2 - 1)
    if v1 == 0.0 and v2 == 0.0:
        if m1 == m2:
            return WelchResult(t=0.0, df=float(n1 + n2 - 2), p=1.0)
        raise StatsError("zero variance in both groups with unequal means")
    pooled = v1 / n1 + v2 / n2
    t_stat = (m1 - m2) / math.sqrt(pooled)
    df = pooled ** 2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    p = 2.0 * float(t_dist.sf(abs(t_stat), df))
    return WelchResult(t=t_stat, df=df, p=min(p, 1.0))


def ecdf(samples) -> list[tuple[float, float]]:
    """Empirical CDF evaluated at each sample: (value, fraction <= value)."""
    ordered = sorted(float(x) for x in samples)
    n = len(ordered)
    return [(value, (i + 1) / n) for i, value in enumerate(ordered)]
