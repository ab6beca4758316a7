"""
CFR variants that re-weight the factual loss and the balancing term.

CFR-ISW learns a representation propensity on detached Phi and weights
by its clipped inverse. BWCFR uses a covariate propensity fitted before
training. RCFR learns the weights directly from detached Phi.
"""
import torch
import torch.nn.functional as F

from orlearners.errors import ConfigurationError
from orlearners.models.base import Family, RepLearnerSpec, TrainingBatch, Weighting
from orlearners.models.tarnet import TwoHeadNetwork
from orlearners.nn.dense import DenseNet, OutputActivation
from orlearners.weighting import factual_inverse_weight


class CFRISW(TwoHeadNetwork):
    family = Family.CFR_ISW

    def __init__(self, d_x: int, spec: RepLearnerSpec):
        super().__init__(d_x, spec)
        self.propensity_head = DenseNet(self.d_phi, [spec.propensity_hidden], 1, OutputActivation.SIGMOID)

    def representation_propensity(self, phi: torch.Tensor) -> torch.Tensor:
        return self.propensity_head(phi.detach()).squeeze(-1)

    def weighting(self, phi: torch.Tensor, batch: TrainingBatch) -> Weighting:
        pi1 = self.representation_propensity(phi)
        bce = F.binary_cross_entropy(pi1, batch.a.to(pi1.dtype))
        return Weighting(weights=factual_inverse_weight(batch.a, pi1).detach(), propensity_loss=bce)

    def parameter_groups(self) -> list[dict]:
        head_ids = {id(p) for p in self.propensity_head.parameters()}
        return [
            {
                "params": [p for p in self.parameters() if id(p) not in head_ids],
                "lr": self.spec.learning_rate,
                "weight_decay": self.spec.weight_decay,
            },
            {
                "params": list(self.propensity_head.parameters()),
                "lr": self.spec.propensity_learning_rate,
                "weight_decay": self.spec.propensity_weight_decay,
            },
        ]


class BWCFR(TwoHeadNetwork):
    family = Family.BWCFR

    def weighting(self, phi: torch.Tensor, batch: TrainingBatch) -> Weighting:
        if batch.pi1_x is None:
            raise ConfigurationError("BWCFR needs covariate propensities in every training batch")
        return Weighting(weights=factual_inverse_weight(batch.a, batch.pi1_x))


class RCFR(TwoHeadNetwork):
    family = Family.RCFR

    def __init__(self, d_x: int, spec: RepLearnerSpec):
        super().__init__(d_x, spec)
        self.weight_head = DenseNet(self.d_phi, [spec.weight_hidden], 1)

    def sample_weights(self, phi: torch.Tensor) -> torch.Tensor:
        """Softplus weights on detached Phi, rescaled to batch mean 1."""
        raw = F.softplus(self.weight_head(phi.detach()).squeeze(-1))
        return raw / raw.mean()

    def weighting(self, phi: torch.Tensor, batch: TrainingBatch) -> Weighting:
        return Weighting(weights=self.sample_weights(phi))
