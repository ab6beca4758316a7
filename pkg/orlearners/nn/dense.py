"""
Fully-connected networks with ReLU hidden layers.
"""
from enum import Enum
from itertools import pairwise
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils import parametrize

from orlearners.errors import ShapeMismatch

DTYPE = torch.float64
PROBABILITY_EPS = 1e-6


class OutputActivation(str, Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"


def as_tensor(values) -> torch.Tensor:
    """float64 CPU tensor view of an array-like (no copy when already float64)."""
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


def to_numpy(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy()


class DenseNet(nn.Module):
    """
    Affine layers with ReLU between them.

    `hidden` lists the hidden widths; an empty list gives a single linear
    layer. He-initialised weights, zero biases. With a sigmoid output the
    values are clamped to [1e-6, 1 - 1e-6] so they are safe as probabilities.
    """

    def __init__(
        self,
        in_features: int,
        hidden: Sequence[int] | int,
        out_features: int = 1,
        output_activation: OutputActivation | str = OutputActivation.IDENTITY,
    ):
        super().__init__()
        hidden = [hidden] if isinstance(hidden, int) else list(hidden)
        self.in_features = in_features
        self.out_features = out_features
        self.output_activation = OutputActivation(output_activation)

        widths = [in_features, *hidden, out_features]
        layers: list[nn.Module] = []
        for i, (fan_in, fan_out) in enumerate(pairwise(widths)):
            linear = nn.Linear(fan_in, fan_out, dtype=DTYPE)
            nn.init.kaiming_normal_(linear.weight, nonlinearity="relu")
            nn.init.zeros_(linear.bias)
            layers.append(linear)
            if i < len(widths) - 2:
                layers.append(nn.ReLU())
        self.layers = nn.Sequential(*layers)

    @property
    def output_layer(self) -> nn.Linear:
        return self.layers[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"Expected input width {self.in_features}, got {x.shape[-1]}")
        out = self.layers(x)
        if self.output_activation == OutputActivation.SIGMOID:
            out = torch.sigmoid(out).clamp(PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)
        return out


class SpectralNormCap(nn.Module):
    """Weight parametrization W -> W / max(1, ||W||_2 / cap)."""

    def __init__(self, cap: float):
        super().__init__()
        self.cap = cap

    def forward(self, weight: torch.Tensor) -> torch.Tensor:
        norm = torch.linalg.matrix_norm(weight, ord=2)
        return weight / (norm / self.cap).clamp_min(1.0)


def bound_lipschitz(net: DenseNet, bound: float) -> DenseNet:
    """
    Cap every layer's spectral norm at bound**(1/k) for k affine layers, so
    the whole net is at most `bound`-Lipschitz (ReLU is 1-Lipschitz).
    """
    linears = [m for m in net.layers if isinstance(m, nn.Linear)]
    cap = bound ** (1.0 / len(linears))
    for linear in linears:
        parametrize.register_parametrization(linear, "weight", SpectralNormCap(cap))
    return net
