"""
Two-head ("T") wiring: separate outcome heads h_0 and h_1 on top of Phi.
"""
import torch

from orlearners.models.base import Family, RepLearnerSpec, RepresentationNetwork


class TwoHeadNetwork(RepresentationNetwork):
    family = None  # abstract wiring, not registered

    def __init__(self, d_x: int, spec: RepLearnerSpec):
        super().__init__(d_x, spec)
        self.head0 = self.make_head(self.d_phi)
        self.head1 = self.make_head(self.d_phi)

    def heads(self, phi: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.head0(phi), self.head1(phi)], dim=-1)

    def outcome(self, phi: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        both = self.heads(phi)
        return torch.where(a == 1, both[:, 1], both[:, 0])


class TARNet(TwoHeadNetwork):
    """Unconstrained shared representation; the balancing strength is ignored."""

    family = Family.TARNET
    uses_balance = False


class CFR(TwoHeadNetwork):
    family = Family.CFR
