"""Exact and simulated match probabilities for sparse binary vectors.

A stored pattern with ``a_stored`` active bits out of ``n`` is compared with
a uniformly random probe carrying ``a_probe`` active bits.  The probe
matches when the two share at least ``theta`` bits.  Counting the probes
with an overlap of exactly ``b`` bits gives

    C(a_stored, b) * C(n - a_stored, a_probe - b)

and the match probability is the sum of those counts for ``b >= theta``
divided by ``C(n, a_probe)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, partial
from typing import Sequence

import numpy as np

from .rng import stream
from .sampling import run_blocks, sample_subsets
from .stats import EmpiricalRate


@dataclass(frozen=True)
class BinaryPattern:
    n: int
    active: tuple[int, ...]

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        active = tuple(int(i) for i in self.active)
        if any(b <= a for a, b in zip(active, active[1:])):
            raise ValueError("active indices must be strictly increasing")
        if active and (active[0] < 0 or active[-1] >= self.n):
            raise ValueError(f"active indices must lie in [0, {self.n})")
        object.__setattr__(self, "active", active)

    @classmethod
    def from_indices(cls, n: int, indices) -> "BinaryPattern":
        idx = sorted(int(i) for i in indices)
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate active index")
        return cls(n, tuple(idx))

    def __len__(self) -> int:
        return len(self.active)

    def to_dense(self) -> np.ndarray:
        v = np.zeros(self.n, dtype=np.uint8)
        v[list(self.active)] = 1
        return v


@dataclass(frozen=True)
class MatchQuery:
    n: int
    a_stored: int
    a_probe: int
    theta: int

    def __post_init__(self):
        if not 0 < self.a_stored <= self.n:
            raise ValueError(f"need 0 < a_stored <= n, got a_stored={self.a_stored}, n={self.n}")
        if not 0 < self.a_probe <= self.n:
            raise ValueError(f"need 0 < a_probe <= n, got a_probe={self.a_probe}, n={self.n}")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")


@dataclass(frozen=True)
class ExactProbability:
    """A probability held as a reduced fraction of arbitrary-precision ints."""

    numerator: int
    denominator: int

    def __post_init__(self):
        if self.denominator <= 0:
            raise ValueError("denominator must be positive")
        if not 0 <= self.numerator <= self.denominator:
            raise ValueError("probability outside [0, 1]")
        g = math.gcd(self.numerator, self.denominator)
        if g > 1:
            object.__setattr__(self, "numerator", self.numerator // g)
            object.__setattr__(self, "denominator", self.denominator // g)

    @property
    def log10(self) -> float:
        if self.numerator == 0:
            return -math.inf
        # math.log10 is exact to double precision for ints of any size
        return math.log10(self.numerator) - math.log10(self.denominator)

    def as_fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    def __float__(self) -> float:
        # int true division is correctly rounded for operands of any size
        return self.numerator / self.denominator


def overlap(x: BinaryPattern, y: BinaryPattern) -> int:
    if x.n != y.n:
        raise ValueError(f"dimension mismatch: {x.n} != {y.n}")
    return len(set(x.active).intersection(y.active))


def overlap_set_size(n: int, a_stored: int, b: int, k: int) -> int:
    """Number of ``k``-active vectors sharing exactly ``b`` bits with the stored one."""
    if not (0 <= a_stored <= n and 0 <= k <= n):
        raise ValueError(f"need a_stored, k in [0, n]; got a_stored={a_stored}, k={k}, n={n}")
    if not 0 <= b <= min(a_stored, k):
        raise ValueError(f"need 0 <= b <= min(a_stored, k); got b={b}")
    if k - b > n - a_stored:
        return 0
    return math.comb(a_stored, b) * math.comb(n - a_stored, k - b)


def match_count(q: MatchQuery) -> int:
    top = min(q.a_stored, q.a_probe)
    return sum(overlap_set_size(q.n, q.a_stored, b, q.a_probe) for b in range(q.theta, top + 1))


def match_probability_exact(q: MatchQuery) -> ExactProbability:
    return ExactProbability(match_count(q), math.comb(q.n, q.a_probe))


_FSUM_LIMIT = 5_000_000


@lru_cache(maxsize=65536)
def _log_comb(n: int, r: int) -> float:
    r = min(r, n - r)
    if r == 0:
        return 0.0
    if r > _FSUM_LIMIT:
        return math.lgamma(n + 1) - math.lgamma(r + 1) - math.lgamma(n - r + 1)
    # lgamma loses ~n*log(n)*eps absolute; an exactly rounded sum of
    # per-factor logs keeps the error near sqrt(r)*eps.
    top = np.log(np.arange(n - r + 1, n + 1, dtype=np.float64))
    bottom = np.log(np.arange(1, r + 1, dtype=np.float64))
    return math.fsum(np.concatenate([top, -bottom]))


def match_probability_float(q: MatchQuery) -> float:
    """Log-space evaluation; no big integers and no overflow for large n."""
    top = min(q.a_stored, q.a_probe)
    lo = max(q.theta, q.a_probe - (q.n - q.a_stored))
    if lo > top:
        return 0.0
    if q.theta <= max(0, q.a_probe - (q.n - q.a_stored)):
        return 1.0
    log_total = _log_comb(q.n, q.a_probe)
    logs = np.array(
        [_log_comb(q.a_stored, b) + _log_comb(q.n - q.a_stored, q.a_probe - b) for b in range(lo, top + 1)]
    )
    peak = logs.max()
    log_p = peak + math.log(np.exp(logs - peak).sum()) - log_total
    return min(1.0, math.exp(log_p))


def sample_binary_pattern(n: int, a: int, rng: np.random.Generator) -> BinaryPattern:
    if not 0 < a <= n:
        raise ValueError(f"need 0 < a <= n, got a={a}, n={n}")
    idx = np.sort(sample_subsets(rng, 1, n, a)[0])
    return BinaryPattern(n, tuple(idx.tolist()))


def _binary_block(q: MatchQuery, seed: int, block: int, rows: int) -> int:
    rng = stream(seed, "binary", block)
    # one stored prototype per block of trials
    stored = sample_subsets(rng, 1, q.n, q.a_stored)[0]
    is_stored = np.zeros(q.n, dtype=np.int32)
    is_stored[stored] = 1
    probes = sample_subsets(rng, rows, q.n, q.a_probe)
    overlaps = is_stored[probes].sum(axis=1)
    return int(np.count_nonzero(overlaps >= q.theta))


def monte_carlo_binary(q: MatchQuery, trials: int, seed: int, workers: int = 1) -> EmpiricalRate:
    """Observed frequency of ``overlap >= theta`` against random probes."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hits = run_blocks(partial(_binary_block, q, seed), trials, workers)
    return EmpiricalRate.from_counts(hits, trials)


def resolve_probe_size(token: str | int, n: int) -> int:
    """Parse ``24`` or the symbolic ``n/2`` used for dense probes."""
    if isinstance(token, int):
        return token
    token = token.strip()
    if token.startswith("n/"):
        return n // int(token[2:])
    return int(token)


def exact_log10_grid(n_values: Sequence[int], a_stored: int, a_probe, theta: int) -> list[float]:
    return [
        match_probability_exact(MatchQuery(n, a_stored, resolve_probe_size(a_probe, n), theta)).log10
        for n in n_values
    ]
