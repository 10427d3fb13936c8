"""Binomial rate estimates with Wilson score intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

Z95 = NormalDist().inv_cdf(0.975)


def wilson_interval(hits: int, trials: int, z: float = Z95) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = hits / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    # clamp so the interval always contains the point estimate
    return min(max(0.0, centre - half), p), max(min(1.0, centre + half), p)


@dataclass(frozen=True)
class EmpiricalRate:
    """Observed hit frequency over a number of Bernoulli trials."""

    trials: int
    hits: int
    rate: float
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, hits: int, trials: int) -> "EmpiricalRate":
        if not 0 <= hits <= trials:
            raise ValueError(f"need 0 <= hits <= trials, got {hits}/{trials}")
        lo, hi = wilson_interval(hits, trials)
        return cls(trials=trials, hits=hits, rate=hits / trials, ci_low=lo, ci_high=hi)

    def merge(self, other: "EmpiricalRate") -> "EmpiricalRate":
        return EmpiricalRate.from_counts(self.hits + other.hits, self.trials + other.trials)

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def separated_below(self, other: "EmpiricalRate") -> bool:
        """True when this interval lies entirely below ``other``'s."""
        return self.ci_high < other.ci_low
