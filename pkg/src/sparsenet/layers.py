"""Sparse-weight linear layers and k-winners activations with boosting.

Selection multiplies each unit's pre-activation by a boost coefficient
``exp(beta * (target - duty))``; the layer then passes the *raw*
pre-activation of the ``k`` selected units and zeroes everything else.
Duty cycles are exponential running averages of how often a unit wins and
are updated once per training batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import entropy

from .tensor import DEFAULT_DTYPE, Layer, Linear, Parameter, kaiming_uniform

TRAINING = "training"
INFERENCE = "inference"
BOOST_PRESETS = (1.0, 1.5)
DEFAULT_DUTY_ALPHA = 1.0 / 1000
INFERENCE_K_FACTOR = 1.5


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def init_sparse_weights(out_units: int, in_units: int, density: float, rng: np.random.Generator):
    """Random fixed fan-in weights.

    Every output unit gets exactly ``round(density * in_units)`` incoming
    connections chosen without replacement.  Nonzero weights are Kaiming
    uniform with the effective fan-in; the bias is zero.
    """
    if not 0 < density <= 1:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    fan_in = round_half_up(density * in_units)
    if fan_in == 0:
        raise ValueError(f"density {density} leaves no connections for {in_units} inputs")
    mask = np.zeros((out_units, in_units), dtype=DEFAULT_DTYPE)
    if fan_in == in_units:
        mask[:] = 1
    else:
        # argsort of random keys gives an independent permutation per row
        chosen = np.argsort(rng.random((out_units, in_units)), axis=1)[:, :fan_in]
        np.put_along_axis(mask, chosen, 1, axis=1)
    weights = kaiming_uniform((out_units, in_units), fan_in, rng) * mask
    return weights, mask, np.zeros(out_units, dtype=DEFAULT_DTYPE)


class SparseLinear(Linear):
    kind = "sparse_linear"

    def __init__(self, in_features: int, out_features: int, density: float, rng: np.random.Generator):
        w, mask, b = init_sparse_weights(out_features, in_features, density, rng)
        self.weight = Parameter(w, mask=mask)
        self.bias = Parameter(b)
        self.density = density
        self._x = None

    def backward(self, grad):
        dx = super().backward(grad)
        self.weight.grad *= self.weight.mask
        return dx


@dataclass
class KWinnersState:
    """Selection parameters and homeostatic state of one k-winners layer.

    ``units`` is the number of competing units (for the 2-D variant,
    channels * height * width); ``duty_cycles`` has one entry per unit, or
    per channel for the 2-D variant.
    """

    k: int
    units: int
    boost_strength: float = 1.0
    duty_alpha: float = DEFAULT_DUTY_ALPHA
    channels: int | None = None
    mode: str = TRAINING
    inference_k_factor: float = INFERENCE_K_FACTOR
    boost_at_inference: bool = True
    duty_cycles: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0 < self.k <= self.units:
            raise ValueError(f"need 0 < k <= units, got k={self.k}, units={self.units}")
        if self.boost_strength < 0:
            raise ValueError("boost strength must be >= 0")
        if not 0 < self.duty_alpha <= 1:
            raise ValueError("duty_alpha must lie in (0, 1]")
        if self.mode not in (TRAINING, INFERENCE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.duty_cycles is None:
            # start at the target so every boost coefficient begins at 1
            self.duty_cycles = np.full(self.channels or self.units, self.target_duty)
        self.duty_cycles = np.asarray(self.duty_cycles, dtype=np.float64)

    @property
    def target_duty(self) -> float:
        return self.k / self.units

    @property
    def k_effective(self) -> int:
        if self.mode == INFERENCE:
            return int(math.floor(self.inference_k_factor * self.k))
        return self.k


def boost_coefficients(state: KWinnersState) -> np.ndarray:
    return np.exp(state.boost_strength * (state.target_duty - state.duty_cycles))


def top_k_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries per row; ties go to the lowest index."""
    rows, units = scores.shape
    if k > units:
        raise ValueError(f"k={k} exceeds layer size {units}")
    if k == units:
        return np.ones_like(scores, dtype=bool)
    kth = np.partition(scores, units - k, axis=1)[:, units - k][:, None]
    above = scores > kth
    room = k - above.sum(axis=1, keepdims=True)
    tied = scores == kth
    return above | (tied & (np.cumsum(tied, axis=1) <= room))


def _selection_scores(pre: np.ndarray, state: KWinnersState) -> np.ndarray:
    if state.mode == INFERENCE and not state.boost_at_inference:
        return pre
    boost = boost_coefficients(state)
    if pre.ndim == 4:
        boost = boost[None, :, None, None]
    return pre * boost.astype(pre.dtype)


def kwinners_forward(pre: np.ndarray, state: KWinnersState):
    """Returns ``(output, winners)`` for a (N, units) batch."""
    k = state.k_effective
    if k > pre.shape[1]:
        raise ValueError(f"k_effective={k} exceeds layer size {pre.shape[1]}")
    winners = top_k_mask(_selection_scores(pre, state), k)
    return np.where(winners, pre, 0).astype(pre.dtype), winners


def kwinners_backward(grad: np.ndarray, winners: np.ndarray) -> np.ndarray:
    return grad * winners


def update_duty_cycles(state: KWinnersState, winners: np.ndarray) -> None:
    """One running-average step with the batch-mean win indicator."""
    if state.mode != TRAINING:
        raise RuntimeError("duty cycles are frozen in inference mode")
    if winners.ndim == 4:
        won = winners.mean(axis=(0, 2, 3))
    else:
        won = winners.mean(axis=0)
    a = state.duty_alpha
    state.duty_cycles = (1 - a) * state.duty_cycles + a * won


def kwinners2d_forward(pre: np.ndarray, state: KWinnersState):
    """Top-k over the flattened (channel, position) activations per sample."""
    n, c, h, w = pre.shape
    k = state.k_effective
    if k > c * h * w:
        raise ValueError(f"k_effective={k} exceeds layer size {c * h * w}")
    scores = _selection_scores(pre, state).reshape(n, -1)
    winners = top_k_mask(scores, k).reshape(pre.shape)
    return np.where(winners, pre, 0).astype(pre.dtype), winners


def duty_cycle_entropy(state_or_duty) -> float:
    """Shannon entropy (bits) of the normalised duty-cycle distribution."""
    d = state_or_duty.duty_cycles if isinstance(state_or_duty, KWinnersState) else np.asarray(state_or_duty)
    if d.sum() <= 0:
        raise ValueError("duty cycles are all zero")
    return float(entropy(d, base=2))


class KWinners(Layer):
    kind = "kwinners"

    def __init__(self, units: int, k: int, boost_strength: float = 1.0,
                 duty_alpha: float = DEFAULT_DUTY_ALPHA, boost_at_inference: bool = True):
        self.kw = KWinnersState(k=k, units=units, boost_strength=boost_strength,
                                duty_alpha=duty_alpha, boost_at_inference=boost_at_inference)
        self._winners = None
        self._margin = math.inf

    def _select(self, pre):
        return kwinners_forward(pre, self.kw)

    def forward(self, x, training=True, update_state=True):
        self.kw.mode = TRAINING if training else INFERENCE
        out, self._winners = self._select(x)
        if self.track_ties:
            self._margin = _cut_margin(_selection_scores(x, self.kw).reshape(len(x), -1), self.kw.k_effective)
        if training and update_state:
            update_duty_cycles(self.kw, self._winners)
        return out

    def backward(self, grad):
        return kwinners_backward(grad, self._winners)

    def tie_margin(self):
        return self._margin

    def state(self):
        return {"duty_cycles": self.kw.duty_cycles.copy()}

    def load_state(self, state):
        self.kw.duty_cycles = np.asarray(state["duty_cycles"], dtype=np.float64)


class KWinners2d(KWinners):
    kind = "kwinners2d"

    def __init__(self, channels: int, height: int, width: int, k: int, boost_strength: float = 1.0,
                 duty_alpha: float = DEFAULT_DUTY_ALPHA, boost_at_inference: bool = True):
        self.kw = KWinnersState(k=k, units=channels * height * width, channels=channels,
                                boost_strength=boost_strength, duty_alpha=duty_alpha,
                                boost_at_inference=boost_at_inference)
        self._winners = None
        self._margin = math.inf

    def _select(self, pre):
        return kwinners2d_forward(pre, self.kw)


def _cut_margin(scores: np.ndarray, k: int) -> float:
    if k >= scores.shape[1]:
        return math.inf
    part = -np.partition(-scores, (k - 1, k), axis=1)
    return float((part[:, k - 1] - part[:, k]).min())
