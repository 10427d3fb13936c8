"""Minimal reverse-mode layers: linear, conv2d, max-pool, ReLU, log-softmax.

Each layer caches what it needs during ``forward`` and consumes the cache in
``backward``.  ``Sequential`` records one graph per forward pass; calling
``backward`` twice, or after the parameters were updated, raises
``StaleGraphError``.

Arrays use NCHW layout.  Training runs in float32; ``Sequential.astype``
switches a model to float64 for gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class StaleGraphError(RuntimeError):
    pass


class Parameter:
    """A trainable array, its gradient and an optional fixed binary mask."""

    def __init__(self, value: np.ndarray, mask: np.ndarray | None = None):
        self.value = value
        self.grad = np.zeros_like(value)
        self.mask = mask
        if mask is not None:
            self.value *= mask

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = self.grad.astype(dtype)
        if self.mask is not None:
            self.mask = self.mask.astype(dtype)


# -- functional forms ---------------------------------------------------------


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C, Ho, Wo, k, k) view of the sliding patches."""
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, filters: np.ndarray, bias: np.ndarray, stride: int = 1):
    """Valid cross-correlation.  Returns ``(output, patch_matrix)``."""
    n, c, h, w = x.shape
    f, cf, kh, kw = filters.shape
    if cf != c or kh != kw:
        raise ValueError(f"filters {filters.shape} incompatible with input {x.shape}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    win = _windows(x, kh, stride)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ filters.reshape(f, -1).T + bias
    return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2), cols


def conv2d_backward_input(grad: np.ndarray, filters: np.ndarray, input_shape, stride: int = 1):
    n, f, ho, wo = grad.shape
    _, c, k, _ = filters.shape
    h, w = input_shape[2], input_shape[3]
    if stride > 1:
        dil = np.zeros((n, f, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=grad.dtype)
        dil[:, :, ::stride, ::stride] = grad
        grad = dil
    # pad so that every input pixel sees all kernel offsets, then trim to (h, w)
    ph = h + k - 1 - grad.shape[2]
    pw = w + k - 1 - grad.shape[3]
    gpad = np.pad(grad, ((0, 0), (0, 0), (k - 1, ph - (k - 1)), (k - 1, pw - (k - 1))))
    win = _windows(gpad, k, 1)
    flipped = filters[:, :, ::-1, ::-1]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, f * k * k)
    dx = cols @ flipped.transpose(0, 2, 3, 1).reshape(f * k * k, c)
    return dx.reshape(n, h, w, c).transpose(0, 3, 1, 2)


def maxpool2d(x: np.ndarray, window: int = 2, stride: int = 2):
    """Returns ``(pooled, argmax)``; ragged borders are dropped.

    ``argmax`` is the row-major offset of the winner inside each window, so
    ties go to the first element.
    """
    flat = _pool_blocks(x, window, stride)
    arg = flat.argmax(axis=-1)
    return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], arg


def _pool_blocks(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    """(N, C, Ho, Wo, window*window) array of pooling windows, row-major inside."""
    if window == stride:
        n, c, h, w = x.shape
        ho, wo = h // window, w // window
        blocks = x[:, :, :ho * window, :wo * window].reshape(n, c, ho, window, wo, window)
        return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, window * window)
    win = _windows(x, window, stride)
    return win.reshape(*win.shape[:4], window * window)


def maxpool2d_backward(grad: np.ndarray, arg: np.ndarray, input_shape, window: int = 2, stride: int = 2):
    n, c, ho, wo = grad.shape
    dx = np.zeros(input_shape, dtype=grad.dtype)
    if window == stride:
        blocks = np.zeros((n, c, ho, wo, window * window), dtype=grad.dtype)
        np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        dx[:, :, :ho * window, :wo * window] = blocks.reshape(n, c, ho * window, wo * window)
        return dx
    rows = np.arange(ho)[:, None] * stride + arg // window
    cols = np.arange(wo)[None, :] * stride + arg % window
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (ni, ci, rows, cols), grad)
    return dx


def log_softmax(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] < 1:
        raise ValueError("need at least one class")
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def nll_loss(logp: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. ``logp``."""
    labels = np.asarray(labels)
    n, classes = logp.shape
    if labels.shape != (n,):
        raise ValueError("one label per row required")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"label outside [0, {classes})")
    rows = np.arange(n)
    loss = -float(logp[rows, labels].mean())
    grad = np.zeros_like(logp)
    grad[rows, labels] = -1.0 / n
    return loss, grad


# -- layers -------------------------------------------------------------------


class Layer:
    kind = "layer"
    track_ties = False

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x, training: bool, update_state: bool):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def tie_margin(self) -> float:
        """Smallest gap to a decision boundary seen in the last forward pass."""
        return math.inf

    def astype(self, dtype):
        for p in self.parameters():
            p.astype(dtype)

    def state(self) -> dict:
        return {}

    def load_state(self, state: dict):
        pass


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Parameter(kaiming_uniform((out_features, in_features), in_features, rng))
        self.bias = Parameter(np.zeros(out_features, dtype=DEFAULT_DTYPE))
        self._x = None

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, training=True, update_state=True):
        self._x = x
        return linear_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        self.weight.grad += grad.T @ self._x
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, filters: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, input_grad: bool = True):
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(kaiming_uniform((filters, in_channels, kernel, kernel), fan_in, rng))
        self.bias = Parameter(np.zeros(filters, dtype=DEFAULT_DTYPE))
        self.stride = stride
        self.input_grad = input_grad
        self._cols = None
        self._shape = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, training=True, update_state=True):
        out, self._cols = conv2d_forward(x, self.weight.value, self.bias.value, self.stride)
        self._shape = x.shape
        return out

    def backward(self, grad):
        f = grad.shape[1]
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, f)
        self.weight.grad += (g2.T @ self._cols).reshape(self.weight.shape)
        self.bias.grad += g2.sum(axis=0)
        if not self.input_grad:
            return None
        return conv2d_backward_input(grad, self.weight.value, self._shape, self.stride)


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, window: int = 2, stride: int = 2):
        self.window = window
        self.stride = stride
        self._arg = None
        self._shape = None
        self._margin = math.inf

    def forward(self, x, training=True, update_state=True):
        out, self._arg = maxpool2d(x, self.window, self.stride)
        self._shape = x.shape
        if self.track_ties and self.window > 1:
            flat = np.sort(_pool_blocks(x, self.window, self.stride), axis=-1)
            self._margin = float((flat[..., -1] - flat[..., -2]).min())
        return out

    def backward(self, grad):
        return maxpool2d_backward(grad, self._arg, self._shape, self.window, self.stride)

    def tie_margin(self):
        return self._margin


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None
        self._margin = math.inf

    def forward(self, x, training=True, update_state=True):
        self._mask = x > 0
        if self.track_ties:
            self._margin = float(np.abs(x).min())
        return np.where(self._mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return grad * self._mask

    def tie_margin(self):
        return self._margin


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._shape = None

    def forward(self, x, training=True, update_state=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class LogSoftmax(Layer):
    kind = "logsoftmax"

    def __init__(self):
        self._out = None

    def forward(self, x, training=True, update_state=True):
        self._out = log_softmax(x)
        return self._out

    def backward(self, grad):
        return grad - np.exp(self._out) * grad.sum(axis=-1, keepdims=True)


class Sequential:
    def __init__(self, layers: Sequence[Layer], name: str = "model"):
        self.layers = list(layers)
        self.name = name
        self._version = 0
        self._graph = None

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = []
        for i, layer in enumerate(self.layers):
            for label, p in zip(("weight", "bias"), layer.parameters()):
                out.append((f"{i}.{layer.kind}.{label}", p))
        return out

    def forward(self, x: np.ndarray, training: bool = True, update_state: bool | None = None) -> np.ndarray:
        if update_state is None:
            update_state = training
        for layer in self.layers:
            x = layer.forward(x, training=training, update_state=update_state)
        self._graph = self._version
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> None:
        """Accumulate parameter gradients for the most recent forward pass."""
        if self._graph is None:
            raise StaleGraphError("backward called without a fresh forward pass")
        if self._graph != self._version:
            raise StaleGraphError("parameters changed since the forward pass")
        self._graph = None
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if grad is None:
                break

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def mark_updated(self):
        self._version += 1

    def tie_margin(self) -> float:
        return min((layer.tie_margin() for layer in self.layers), default=math.inf)

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers:
            layer.astype(dtype)
        return self

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].value.dtype if params else np.dtype(DEFAULT_DTYPE)

    def predict(self, x: np.ndarray, batch_size: int = 500, training: bool = False) -> np.ndarray:
        preds = []
        for start in range(0, len(x), batch_size):
            out = self.forward(x[start:start + batch_size].astype(self.dtype, copy=False),
                               training=training, update_state=False)
            preds.append(out.argmax(axis=1))
        self._graph = None
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def loss_and_backward(model: Sequential, x: np.ndarray, labels: np.ndarray,
                      update_state: bool | None = None) -> float:
    logp = model.forward(x, training=True, update_state=update_state)
    loss, grad = nll_loss(logp, labels)
    model.backward(grad)
    return loss


# -- optimisation -------------------------------------------------------------


@dataclass
class SgdConfig:
    learning_rate: float = 0.04
    lr_decay: float = 0.8
    batch_size: int = 64
    first_epoch_batch_size: int = 4
    epochs: int = 6

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1 or self.first_epoch_batch_size < 1:
            raise ValueError("batch sizes must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; decays once per epoch boundary."""
        return self.learning_rate * self.lr_decay ** epoch


def sgd_step(params: Iterable[Parameter], lr: float) -> None:
    for p in params:
        if p.mask is not None:
            p.grad *= p.mask
        p.value -= lr * p.grad
        if p.mask is not None:
            p.value *= p.mask


def sgd_update(model: Sequential, lr: float) -> None:
    sgd_step(model.parameters(), lr)
    model.mark_updated()


# -- gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str
    checked: int
    tolerance: float
    resamples: int
    tie_margin: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(model: Sequential, x: np.ndarray, labels: np.ndarray, tolerance: float = 1e-4,
                   eps: float = 1e-6, resample=None, max_resamples: int = 50,
                   max_entries: int | None = None, rng: np.random.Generator | None = None,
                   analytic_override: dict | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences in float64.

    Runs the forward pass in training selection mode without mutating layer
    state.  When any layer sits within ``100 * eps`` of a decision boundary
    (top-k cut, pooling tie, ReLU kink) and ``resample`` is given, the input
    batch is redrawn via ``resample()``.  ``analytic_override`` maps
    parameter names to replacement gradients (negative controls).
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checks require a float64 model")
    for layer in model.layers:
        layer.track_ties = True
    resamples = 0
    while True:
        model.zero_grad()
        loss_and_backward(model, x, labels, update_state=False)
        margin = model.tie_margin()
        if margin > 100 * eps or resample is None or resamples >= max_resamples:
            break
        x, labels = resample()
        resamples += 1

    def loss_at():
        return nll_loss(model.forward(x, training=True, update_state=False), labels)[0]

    worst, worst_name, checked = 0.0, "", 0
    for name, p in model.named_parameters():
        analytic = p.grad.copy()
        if analytic_override and name in analytic_override:
            analytic = analytic_override[name]
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if p.mask is not None:
            idx = idx[p.mask.reshape(-1) != 0]
        if max_entries is not None and idx.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(idx, max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            up = loss_at()
            flat[i] = old - eps
            down = loss_at()
            flat[i] = old
            err = relative_error(analytic.reshape(-1)[i], (up - down) / (2 * eps))
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    model._graph = None
    for layer in model.layers:
        layer.track_ties = False
    return GradCheckReport(worst, worst_name, checked, tolerance, resamples, margin)
