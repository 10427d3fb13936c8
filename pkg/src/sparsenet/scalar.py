"""False-match rates for sparse scalar vectors.

A weight vector with ``k_weight`` nonzeros drawn from U[-1/k, 1/k] is
matched against an input vector with ``a_input`` nonzeros drawn from
U[0, 2S/k].  The match succeeds when the dot product reaches ``theta``.
There is no closed form for the probability that ``b`` shared components
clear the threshold, so rates are estimated by simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import partial
from typing import Sequence

import numpy as np

from .rng import stream
from .sampling import check_ascending, run_blocks, sample_subsets
from .stats import EmpiricalRate


def theta_default(k_weight: int) -> float:
    """Half the expected squared norm of a weight vector: k * (1/k)^2 / 3 / 2."""
    if k_weight < 1:
        raise ValueError("k_weight must be >= 1")
    return 1.0 / (6.0 * k_weight)


@dataclass(frozen=True)
class ScalarMatchConfig:
    n: int
    k_weight: int
    a_input: int
    scale: float = 1.0
    theta: float | None = None

    def __post_init__(self):
        if not 0 < self.k_weight <= self.n:
            raise ValueError(f"need 0 < k_weight <= n, got {self.k_weight}, n={self.n}")
        if not 0 < self.a_input <= self.n:
            raise ValueError(f"need 0 < a_input <= n, got {self.a_input}, n={self.n}")
        if self.scale < 0:
            raise ValueError("scale must be >= 0")

    @property
    def threshold(self) -> float:
        return theta_default(self.k_weight) if self.theta is None else self.theta


@dataclass(frozen=True)
class ScalarVector:
    n: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n):
            raise ValueError("index out of range")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("duplicate index")

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))

    def to_dense(self) -> np.ndarray:
        v = np.zeros(self.n)
        v[self.indices] = self.values
        return v

    def dot(self, other: "ScalarVector") -> float:
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        return float(self.to_dense() @ other.to_dense())


def sample_weight_vector(cfg: ScalarMatchConfig, rng: np.random.Generator) -> ScalarVector:
    k = cfg.k_weight
    idx = np.sort(sample_subsets(rng, 1, cfg.n, k)[0])
    return ScalarVector(cfg.n, idx, rng.uniform(-1.0 / k, 1.0 / k, size=k))


def sample_input_vector(cfg: ScalarMatchConfig, rng: np.random.Generator) -> ScalarVector:
    idx = np.sort(sample_subsets(rng, 1, cfg.n, cfg.a_input)[0])
    return ScalarVector(cfg.n, idx, rng.uniform(0.0, 2.0 * cfg.scale / cfg.k_weight, size=cfg.a_input))


def empirical_self_dot(k_weight: int, trials: int, seed: int) -> float:
    """Monte Carlo mean of x_w . x_w, for cross-checking ``theta_default``."""
    rng = stream(seed, "scalar", "self-dot")
    w = rng.uniform(-1.0 / k_weight, 1.0 / k_weight, size=(trials, k_weight))
    return float(np.mean(np.einsum("ij,ij->i", w, w)))


def _block_dots(cfg: ScalarMatchConfig, rng: np.random.Generator, rows: int) -> np.ndarray:
    k = cfg.k_weight
    w_idx = sample_subsets(rng, rows, cfg.n, k)
    w_val = rng.uniform(-1.0 / k, 1.0 / k, size=(rows, k))
    x_idx = sample_subsets(rng, rows, cfg.n, cfg.a_input)
    x_val = rng.uniform(0.0, 2.0 * cfg.scale / k, size=(rows, cfg.a_input))
    # scatter weights into a dense row, gather at the input support
    dense_w = np.zeros((rows, cfg.n))
    r = np.arange(rows)[:, None]
    dense_w[r, w_idx] = w_val
    return np.einsum("ij,ij->i", dense_w[r, x_idx], x_val)


def _scalar_block(cfg: ScalarMatchConfig, seed: int, block: int, rows: int) -> int:
    rng = stream(seed, "scalar", block)
    return int(np.count_nonzero(_block_dots(cfg, rng, rows) >= cfg.threshold))


def monte_carlo_scalar_match(cfg: ScalarMatchConfig, trials: int, seed: int, workers: int = 1) -> EmpiricalRate:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    hits = run_blocks(partial(_scalar_block, cfg, seed), trials, workers)
    return EmpiricalRate.from_counts(hits, trials)


def dimensionality_sweep(
    cfg: ScalarMatchConfig, n_values: Sequence[int], trials: int, seed: int, workers: int = 1
) -> list[tuple[int, EmpiricalRate]]:
    check_ascending(n_values, "n_values")
    return [
        (n, monte_carlo_scalar_match(replace(cfg, n=n), trials, seed, workers))
        for n in n_values
    ]


def scale_sweep(
    cfg: ScalarMatchConfig, s_values: Sequence[float], trials: int, seed: int, workers: int = 1
) -> list[tuple[float, EmpiricalRate]]:
    check_ascending(s_values, "s_values")
    # each scale gets its own stream so repeated values see fresh draws
    return [
        (s, monte_carlo_scalar_match(replace(cfg, scale=s), trials, seed + i, workers))
        for i, s in enumerate(s_values)
    ]
