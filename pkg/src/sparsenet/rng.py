"""Named, splittable random streams.

Every stochastic routine in the package draws from a ``numpy`` Philox
generator (counter based) addressed by a root seed plus a tuple of integer
keys.  Two streams with different keys are statistically independent and
neither depends on how many workers were used to consume them.
"""

from __future__ import annotations

import zlib

import numpy as np

# Stable integer tags for the named streams.
STREAM_TAGS = {
    "binary": 1,
    "scalar": 2,
    "model": 3,
    "eval": 4,
    "data": 5,
    "synthetic": 6,
}


def _tag(name: str | int) -> int:
    if isinstance(name, int):
        return name
    if name in STREAM_TAGS:
        return STREAM_TAGS[name]
    return zlib.crc32(name.encode())


def stream(seed: int, *keys: str | int) -> np.random.Generator:
    """Return the generator for ``(seed, *keys)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_tag(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def generator_state(rng: np.random.Generator) -> dict:
    """JSON-safe snapshot of the bit generator state."""
    return _to_lists(rng.bit_generator.state)


def restore_generator(state: dict) -> np.random.Generator:
    bit_gen = np.random.Philox()
    inner = state["state"]
    bit_gen.state = {
        **state,
        "state": {"counter": np.asarray(inner["counter"], dtype=np.uint64),
                  "key": np.asarray(inner["key"], dtype=np.uint64)},
        "buffer": np.asarray(state["buffer"], dtype=np.uint64),
    }
    return np.random.Generator(bit_gen)


def _to_lists(obj):
    if isinstance(obj, dict):
        return {k: _to_lists(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(v) for v in obj]
    return obj
