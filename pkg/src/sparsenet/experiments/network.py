"""Assemble a trainable model from a ``NetworkConfig``."""

from __future__ import annotations

import numpy as np

from ..layers import KWinners, KWinners2d, SparseLinear
from ..tensor import Conv2d, Flatten, Linear, LogSoftmax, MaxPool2d, ReLU, Sequential
from .configs import NetworkConfig


def build_network(config: NetworkConfig, rng: np.random.Generator, boost_at_inference: bool = True) -> Sequential:
    """conv -> maxpool -> (k-winners | ReLU) per conv layer, then hidden, then output.

    Convolution filters are always dense.  The hidden layer gets sparse
    weights when the configured weight density is below 1.
    """
    layers = []
    for i, conv in enumerate(config.conv_layers):
        layers.append(Conv2d(conv.in_channels, conv.filters, conv.kernel, rng, input_grad=i > 0))
        layers.append(MaxPool2d(2, 2))
        if conv.k is None:
            layers.append(ReLU())
        else:
            layers.append(KWinners2d(conv.filters, conv.pooled_size, conv.pooled_size, conv.k,
                                     boost_strength=config.boost_strength, duty_alpha=config.duty_alpha,
                                     boost_at_inference=boost_at_inference))
    layers.append(Flatten())
    if config.weight_density < 1:
        layers.append(SparseLinear(config.hidden_in, config.l3_units, config.weight_density, rng))
    else:
        layers.append(Linear(config.hidden_in, config.l3_units, rng))
    if config.l3_k is None:
        layers.append(ReLU())
    else:
        layers.append(KWinners(config.l3_units, config.l3_k, boost_strength=config.boost_strength,
                               duty_alpha=config.duty_alpha, boost_at_inference=boost_at_inference))
    layers.append(Linear(config.l3_units, config.classes, rng))
    layers.append(LogSoftmax())
    return Sequential(layers, name=config.name)
