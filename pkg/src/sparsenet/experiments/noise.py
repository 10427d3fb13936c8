"""Pixel-replacement noise for images and white-noise blending for signals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NOISE_LEVELS = tuple(round(0.05 * i, 2) for i in range(11))


@dataclass(frozen=True)
class NoiseSpec:
    noise_value: float
    levels: tuple[float, ...] = NOISE_LEVELS

    @classmethod
    def from_training(cls, train_images: np.ndarray) -> "NoiseSpec":
        """Constant two standard deviations above the mean training intensity."""
        pixels = np.asarray(train_images, dtype=np.float64)
        return cls(float(pixels.mean() + 2.0 * pixels.std()))


def noisy_pixel_count(eta: float, pixels: int) -> int:
    # guard against 0.35 * 784 style representation error at exact integers
    return int(math.floor(eta * pixels + 1e-9))


def add_noise(image: np.ndarray, eta: float, noise_value: float, rng: np.random.Generator) -> np.ndarray:
    """Overwrite ``floor(eta * pixels)`` distinct random pixels with ``noise_value``."""
    return add_noise_batch(np.asarray(image)[None], eta, noise_value, rng)[0]


def add_noise_batch(images: np.ndarray, eta: float, noise_value: float, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= eta <= 1:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    n = len(images)
    flat = np.array(images, copy=True).reshape(n, -1)
    count = noisy_pixel_count(eta, flat.shape[1])
    if count:
        keys = rng.random(flat.shape)
        pos = np.argpartition(keys, count - 1, axis=1)[:, :count]
        np.put_along_axis(flat, pos, noise_value, axis=1)
    return flat.reshape(np.shape(images))


def blend_white_noise(signal: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
    """``(1 - eta) * signal + eta * noise`` with noise uniform on [-1, 1]."""
    if not 0 <= eta <= 1:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    signal = np.asarray(signal, dtype=np.float64)
    return (1.0 - eta) * signal + eta * rng.uniform(-1.0, 1.0, size=signal.shape)
