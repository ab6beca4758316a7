"""
Single-head ("S") wiring: one outcome head fed (phi, a).
"""
import torch

from orlearners.models.base import Family, RepLearnerSpec, RepresentationNetwork


class BNN(RepresentationNetwork):
    family = Family.BNN

    def __init__(self, d_x: int, spec: RepLearnerSpec):
        super().__init__(d_x, spec)
        self.head = self.make_head(self.d_phi + 1)

    def outcome(self, phi: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        arm = a.to(phi.dtype).unsqueeze(-1)
        return self.head(torch.cat([phi, arm], dim=-1)).squeeze(-1)

    def heads(self, phi: torch.Tensor) -> torch.Tensor:
        n = phi.shape[0]
        zeros = torch.zeros(n, dtype=torch.long)
        return torch.stack([self.outcome(phi, zeros), self.outcome(phi, zeros + 1)], dim=-1)
