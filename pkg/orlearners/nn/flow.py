"""
Analytically invertible representation: a stack of affine coupling blocks.

Each block keeps one partition of the coordinates fixed and transforms the
other one as x_b * exp(s(x_a)) + t(x_a), with s = tanh(raw) bounded. Blocks
alternate which half is conditioned on. The last layer of every subnet is
zero-initialised, so a fresh flow is the identity map.
"""
import torch
from torch import nn

from orlearners.errors import DimensionTooSmall, ShapeMismatch
from orlearners.nn.dense import DenseNet

SUBNET_DEPTH = 3


class AffineCoupling(nn.Module):
    def __init__(self, dim: int, hidden: int, condition_on_first: bool):
        super().__init__()
        split = dim // 2
        first = torch.arange(0, split)
        second = torch.arange(split, dim)
        cond, trans = (first, second) if condition_on_first else (second, first)
        self.register_buffer("cond_index", cond)
        self.register_buffer("trans_index", trans)
        self.register_buffer("inverse_perm", torch.argsort(torch.cat([cond, trans])))

        self.subnet = DenseNet(len(cond), [hidden] * SUBNET_DEPTH, 2 * len(trans))
        nn.init.zeros_(self.subnet.output_layer.weight)
        nn.init.zeros_(self.subnet.output_layer.bias)

    def _scale_shift(self, cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raw_scale, shift = self.subnet(cond).chunk(2, dim=-1)
        return torch.tanh(raw_scale), shift

    def _merge(self, cond: torch.Tensor, trans: torch.Tensor) -> torch.Tensor:
        return torch.cat([cond, trans], dim=-1).index_select(-1, self.inverse_perm)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cond = x.index_select(-1, self.cond_index)
        trans = x.index_select(-1, self.trans_index)
        scale, shift = self._scale_shift(cond)
        return self._merge(cond, trans * torch.exp(scale) + shift)

    def inverse(self, y: torch.Tensor) -> torch.Tensor:
        cond = y.index_select(-1, self.cond_index)
        trans = y.index_select(-1, self.trans_index)
        scale, shift = self._scale_shift(cond)
        return self._merge(cond, (trans - shift) * torch.exp(-scale))


class CouplingFlow(nn.Module):
    """Invertible map R^d -> R^d; d_phi = d_x."""

    def __init__(self, dim: int, blocks: int = 3, hidden: int = 8):
        super().__init__()
        if dim < 2:
            raise DimensionTooSmall(f"Coupling flows need at least 2 dimensions, got {dim}")
        self.in_features = dim
        self.out_features = dim
        self.blocks = nn.ModuleList(
            AffineCoupling(dim, hidden, condition_on_first=(k % 2 == 0)) for k in range(blocks)
        )

    def _check(self, x: torch.Tensor) -> None:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"Expected dimension {self.in_features}, got {x.shape[-1]}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        for block in self.blocks:
            x = block(x)
        return x

    def inverse(self, phi: torch.Tensor) -> torch.Tensor:
        self._check(phi)
        for block in reversed(self.blocks):
            phi = block.inverse(phi)
        return phi


def flow_forward(flow: CouplingFlow, x: torch.Tensor) -> torch.Tensor:
    return flow(x)


def flow_inverse(flow: CouplingFlow, phi: torch.Tensor) -> torch.Tensor:
    return flow.inverse(phi)
