"""Uniform sampling of fixed-size index subsets, batched across rows."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

# Trials per independent random stream.  Part of the reproducibility
# contract: changing it changes every Monte Carlo result.
BLOCK_TRIALS = 4096


def sample_subsets(rng: np.random.Generator, rows: int, n: int, size: int) -> np.ndarray:
    """Draw ``rows`` independent uniform ``size``-subsets of ``range(n)``.

    Robert Floyd's algorithm, vectorised over rows with a per-row
    membership table, so the cost is O(rows * (size + n)) regardless of how
    dense the subset is.  Column order within a row is not random; treat
    each row as a set.
    """
    if not 0 <= size <= n:
        raise ValueError(f"subset size {size} outside [0, {n}]")
    out = np.empty((rows, size), dtype=np.int64)
    taken = np.zeros((rows, n), dtype=bool)
    row_idx = np.arange(rows)
    for col, j in enumerate(range(n - size, n)):
        t = rng.integers(0, j + 1, size=rows)
        t = np.where(taken[row_idx, t], j, t)
        taken[row_idx, t] = True
        out[:, col] = t
    return out


def block_sizes(trials: int) -> list[int]:
    full, rest = divmod(trials, BLOCK_TRIALS)
    return [BLOCK_TRIALS] * full + ([rest] if rest else [])


def run_blocks(fn: Callable[[int, int], int], trials: int, workers: int = 1) -> int:
    """Sum ``fn(block_index, block_trials)`` over all blocks.

    ``fn`` must be picklable when ``workers > 1``.  Results are merged by
    addition, so they do not depend on the worker count.
    """
    sizes = block_sizes(trials)
    if workers <= 1 or len(sizes) == 1:
        return sum(fn(i, m) for i, m in enumerate(sizes))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return sum(pool.map(fn, range(len(sizes)), sizes))


def check_ascending(values: Sequence[float], what: str) -> None:
    if any(b < a for a, b in zip(values, values[1:])):
        raise ValueError(f"{what} must be ascending")
