"""Counting the multiplications whose operands are both nonzero.

The empirical counter instruments a real forward pass.  The analytic
estimate reads the active-unit count of the previous layer as ``k`` and
multiplies it by the weight density and the number of outputs; for
convolutions the dense product count is scaled by the input density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Conv2d, Linear, Sequential, conv2d_forward
from .configs import NetworkConfig


@dataclass
class LayerOps:
    layer: str
    products: int
    samples: int

    @property
    def per_sample(self) -> float:
        return self.products / self.samples


def _linear_products(x: np.ndarray, weight: np.ndarray) -> int:
    # counts per (sample, unit) never exceed fan-in, so float32 is exact
    active = (x != 0).astype(np.float32)
    conn = (weight != 0).astype(np.float32)
    return int((active @ conn.T).astype(np.int64).sum())


def _conv_products(x: np.ndarray, filters: np.ndarray, stride: int) -> int:
    active = (x != 0).astype(np.float32)
    conn = (filters != 0).astype(np.float32)
    out, _ = conv2d_forward(active, conn, np.zeros(len(filters), dtype=np.float32), stride)
    return int(np.rint(out).astype(np.int64).sum())


def count_nonzero_products(model: Sequential, batch: np.ndarray, training: bool = False) -> list[LayerOps]:
    """Per-layer count of (activation != 0, weight != 0) pairs actually multiplied."""
    counts = []
    x = batch.astype(model.dtype, copy=False)
    linear = [layer for layer in model.layers if isinstance(layer, Linear)]
    convs = 0
    for layer in model.layers:
        if isinstance(layer, Conv2d):
            convs += 1
            counts.append(LayerOps(f"conv{convs}", _conv_products(x, layer.weight.value, layer.stride), len(batch)))
        elif isinstance(layer, Linear):
            name = "output" if layer is linear[-1] else "hidden"
            counts.append(LayerOps(name, _linear_products(x, layer.weight.value), len(batch)))
        x = layer.forward(x, training=training, update_state=False)
    model._graph = None
    return counts


@dataclass
class LayerEstimate:
    layer: str
    sparse: float
    dense: float

    @property
    def ratio(self) -> float:
        return self.dense / self.sparse


def _layer_products(cfg: NetworkConfig) -> list[tuple[str, float]]:
    out = []
    density = 1.0  # fraction of nonzero inputs reaching the current layer
    for i, conv in enumerate(cfg.conv_layers):
        dense = conv.conv_size ** 2 * conv.filters * conv.in_channels * conv.kernel ** 2
        out.append((f"conv{i + 1}", density * dense))
        density = 1.0 if conv.k is None else conv.k / conv.units
    active_in = density * cfg.hidden_in
    out.append(("hidden", active_in * cfg.weight_density * cfg.l3_units))
    active_hidden = cfg.l3_units if cfg.l3_k is None else cfg.l3_k
    out.append(("output", active_hidden * cfg.classes))
    return out


def analytic_op_estimate(config: NetworkConfig, baseline: NetworkConfig | None = None) -> list[LayerEstimate]:
    """Per-layer product estimates and the ratio to a dense baseline.

    ``baseline`` defaults to the same architecture with every layer dense.
    """
    base = baseline if baseline is not None else config.dense_counterpart()
    dense = dict(_layer_products(base))
    return [LayerEstimate(name, sparse, dense[name]) for name, sparse in _layer_products(config)]
