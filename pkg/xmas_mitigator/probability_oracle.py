"""
Exact and Monte-Carlo probabilities for moving-averaged sign fields.

Each of the n×n window samples takes one of ``values_per_sample`` evenly
spaced values in [-ε, +ε] (for 3 values: -ε, 0, +ε), all equally likely. The
window mean equals +ε only when every sample is +ε; the enumerator counts such
assignments instead of assuming the closed form.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import EnumerationTooLargeError
from .models import ProbabilityRow

logger = logging.getLogger('ProbabilityOracle')

DEFAULT_MAX_ENUMERATION = 3 ** 9
MC_CHUNK = 1 << 18
Z_95 = 1.959963984540054

# Approximations quoted for the 3×3 kernel.
QUOTED = {3: ("about 5e-05", "≈ 0.9999")}


def sample_values(values_per_sample: int) -> List[int]:
    """Evenly spaced values in [-ε, +ε], scaled to integers in [-(v-1), v-1]."""
    if values_per_sample < 2:
        raise ValueError(f"values_per_sample must be >= 2, got {values_per_sample}")
    last = values_per_sample - 1
    return [2 * i - last for i in range(values_per_sample)]


def _window_sums(n: int, values_per_sample: int, max_enumeration: int) -> List[int]:
    if n < 1:
        raise ValueError(f"kernel side must be >= 1, got {n}")
    total = values_per_sample ** (n * n)
    if total > max_enumeration:
        raise EnumerationTooLargeError(
            f"{values_per_sample}^{n * n} = {total} assignments exceed the limit of "
            f"{max_enumeration}; use monte_carlo_reduction_prob instead"
        )
    values = sample_values(values_per_sample)
    return [sum(assignment) for assignment in itertools.product(values, repeat=n * n)]


def _count_extremes(n: int, values_per_sample: int, max_enumeration: int):
    sums = _window_sums(n, values_per_sample, max_enumeration)
    extreme = n * n * (values_per_sample - 1)
    plus = sum(1 for s in sums if s == extreme)
    minus = sum(1 for s in sums if s == -extreme)
    return plus, minus, len(sums)


def exact_equal_prob(n: int, values_per_sample: int = 3,
                     max_enumeration: int = DEFAULT_MAX_ENUMERATION) -> Fraction:
    """P[window mean == +ε], by full enumeration."""
    plus, _, total = _count_extremes(n, values_per_sample, max_enumeration)
    return Fraction(plus, total)


def exact_strict_reduction_prob(n: int, values_per_sample: int = 3,
                                max_enumeration: int = DEFAULT_MAX_ENUMERATION) -> Fraction:
    """P[|window mean| < ε], by full enumeration."""
    plus, minus, total = _count_extremes(n, values_per_sample, max_enumeration)
    return 1 - Fraction(plus, total) - Fraction(minus, total)


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Empirical frequency with a 95% Wilson score interval [lower, upper]."""
    frequency: float
    lower: float
    upper: float
    trials: int
    seed: int

    @property
    def center(self) -> float:
        return (self.lower + self.upper) / 2

    @property
    def half_width(self) -> float:
        return (self.upper - self.lower) / 2

    def contains(self, value: float, widths: float = 1.0) -> bool:
        return abs(self.center - value) <= widths * self.half_width


def wilson_interval(successes: int, trials: int, z: float = Z_95) -> Tuple[float, float]:
    """Wilson score interval; stays non-degenerate when every trial agrees."""
    p = successes / trials
    z2 = z * z
    denom = 1 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    spread = z / denom * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    return max(0.0, center - spread), min(1.0, center + spread)


def monte_carlo_reduction_prob(n: int, trials: int, seed: int = 0) -> MonteCarloEstimate:
    """Empirical P[|window mean| < ε] with its 95% Wilson interval."""
    if n < 1:
        raise ValueError(f"kernel side must be >= 1, got {n}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    cells = n * n
    reduced = 0
    remaining = trials
    while remaining:
        batch = min(remaining, max(1, MC_CHUNK // cells))
        sums = rng.integers(-1, 2, size=(batch, cells)).sum(axis=1)
        reduced += int(np.count_nonzero(np.abs(sums) < cells))
        remaining -= batch
    lower, upper = wilson_interval(reduced, trials)
    return MonteCarloEstimate(reduced / trials, lower, upper, trials, seed)


def probability_table(sides: List[int], values_per_sample: int = 3,
                      max_enumeration: int = DEFAULT_MAX_ENUMERATION) -> List[ProbabilityRow]:
    rows = []
    for n in sides:
        equal = exact_equal_prob(n, values_per_sample, max_enumeration)
        strict = exact_strict_reduction_prob(n, values_per_sample, max_enumeration)
        quoted: Optional[str] = None
        if values_per_sample == 3 and n in QUOTED:
            quoted = ' / '.join(QUOTED[n])
        rows.append(ProbabilityRow(
            n=n,
            values_per_sample=values_per_sample,
            equal_prob=str(equal),
            equal_decimal=float(equal),
            strict_reduction_prob=str(strict),
            strict_reduction_decimal=float(strict),
            quoted=quoted,
        ))
    return rows
