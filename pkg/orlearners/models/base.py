"""
Abstract base class for Stage-0 representation networks.

Every family shares the same skeleton: a representation Phi (dense net or
coupling flow), outcome heads on Phi, and an optional auxiliary head that
produces per-sample weights for the factual loss and the balancing term.
Subclasses only decide how heads are wired and where the weights come from.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from orlearners.balance import BalancingSpec, balance_loss
from orlearners.errors import AllZeroWeights, ConfigurationError, EmptySample
from orlearners.nn.dense import DenseNet, bound_lipschitz
from orlearners.nn.flow import CouplingFlow


class Family(str, Enum):
    TARNET = "tarnet"
    BNN = "bnn"
    CFR = "cfr"
    RCFR = "rcfr"
    CFR_ISW = "cfr_isw"
    BWCFR = "bwcfr"


_DISPLAY = {
    Family.TARNET: ("TARNet", "TARFlow"),
    Family.BNN: ("BNN", "BNNFlow"),
    Family.CFR: ("CFR", "CFRFlow"),
    Family.RCFR: ("RCFR", "RCFRFlow"),
    Family.CFR_ISW: ("CFR-ISW", "CFRFlow-ISW"),
    Family.BWCFR: ("BWCFR", "BWCFRFlow"),
}


def display_name(family: Family, invertible: bool) -> str:
    return _DISPLAY[Family(family)][int(invertible)]


class RepLearnerSpec(BaseModel):
    """Architecture and optimisation settings of one Stage-0 learner."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Family = Family.TARNET
    invertible: bool = False
    balancing: BalancingSpec = BalancingSpec()
    # None: d_x for flows, 2 otherwise
    rep_dim: int | None = Field(default=None, ge=1)
    rep_hidden: int = Field(default=8, ge=1)
    head_hidden: int = Field(default=4, ge=1)
    # Lipschitz bound of each outcome head; None leaves the heads unconstrained
    head_lipschitz: float | None = Field(default=None, gt=0.0)
    propensity_hidden: int = Field(default=4, ge=1)
    weight_hidden: int = Field(default=4, ge=1)
    flow_blocks: int = Field(default=3, ge=1)
    learning_rate: float = Field(default=0.005, ge=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    propensity_learning_rate: float = Field(default=0.005, ge=0.0)
    propensity_weight_decay: float = Field(default=0.0, ge=0.0)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=200, ge=1)

    @model_validator(mode="after")
    def _flow_keeps_dimension(self) -> "RepLearnerSpec":
        if self.invertible and self.rep_dim is not None and self.rep_dim < 2:
            raise ValueError("invertible representations need rep_dim >= 2")
        return self

    @property
    def alpha(self) -> float:
        return self.balancing.alpha

    @property
    def name(self) -> str:
        return display_name(self.family, self.invertible)

    def resolve_rep_dim(self, d_x: int) -> int:
        if self.invertible:
            if self.rep_dim is not None and self.rep_dim != d_x:
                raise ConfigurationError(f"{self.name} is invertible, so rep_dim must equal d_x={d_x}, got {self.rep_dim}")
            return d_x
        return self.rep_dim if self.rep_dim is not None else 2


@dataclass(frozen=True)
class TrainingBatch:
    x: torch.Tensor
    y: torch.Tensor
    a: torch.Tensor
    # covariate propensity pi_1^x(x), only for weighting by a pre-fitted model
    pi1_x: torch.Tensor | None = None


@dataclass(frozen=True)
class Weighting:
    weights: torch.Tensor | None = None
    propensity_loss: torch.Tensor | None = None


@dataclass(frozen=True)
class LossBreakdown:
    factual: torch.Tensor
    balance: torch.Tensor
    propensity: torch.Tensor
    total: torch.Tensor
    balance_skipped: bool = False


def weighted_mse(residual: torch.Tensor, weights: torch.Tensor | None) -> torch.Tensor:
    """P_b{W r^2} / P_b{W}."""
    squared = residual**2
    if weights is None:
        return squared.mean()
    return (weights * squared).sum() / weights.sum().clamp_min(torch.finfo(weights.dtype).tiny)


class RepresentationNetwork(nn.Module, ABC):
    """
    Base class for the six learner families.

    `family` is the registry key. `uses_balance` is False for families whose
    objective never contains the distance term.
    """

    family: ClassVar[Family]
    uses_balance: ClassVar[bool] = True

    def __init__(self, d_x: int, spec: RepLearnerSpec):
        super().__init__()
        if spec.family != self.family:
            raise ConfigurationError(f"{type(self).__name__} cannot be built from a '{spec.family.value}' spec")
        self.spec = spec
        self.d_x = d_x
        self.d_phi = spec.resolve_rep_dim(d_x)
        if spec.invertible:
            self.phi = CouplingFlow(d_x, blocks=spec.flow_blocks, hidden=spec.rep_hidden)
        else:
            self.phi = DenseNet(d_x, [spec.rep_hidden], self.d_phi)

    @property
    def invertible(self) -> bool:
        return self.spec.invertible

    def make_head(self, in_features: int) -> DenseNet:
        head = DenseNet(in_features, [self.spec.head_hidden], 1)
        if self.spec.head_lipschitz is not None:
            bound_lipschitz(head, self.spec.head_lipschitz)
        return head

    def represent(self, x: torch.Tensor) -> torch.Tensor:
        return self.phi(x)

    @abstractmethod
    def heads(self, phi: torch.Tensor) -> torch.Tensor:
        """n×2 matrix with columns (h_0(phi), h_1(phi))."""

    @abstractmethod
    def outcome(self, phi: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        """h_A(phi) for the given arms, shape (n,)."""

    def weighting(self, phi: torch.Tensor, batch: TrainingBatch) -> Weighting:
        """Per-sample weights W and an optional auxiliary loss; W is 1 by default."""
        return Weighting()

    def parameter_groups(self) -> list[dict]:
        return [{"params": list(self.parameters()), "lr": self.spec.learning_rate, "weight_decay": self.spec.weight_decay}]

    def loss_components(self, batch: TrainingBatch) -> LossBreakdown:
        phi = self.represent(batch.x)
        weighting = self.weighting(phi, batch)
        factual = weighted_mse(batch.y - self.outcome(phi, batch.a), weighting.weights)

        zero = factual.new_zeros(())
        balance, skipped = zero, False
        alpha = self.spec.alpha
        if self.uses_balance and alpha > 0.0:
            try:
                balance = balance_loss(self.spec.balancing, phi, batch.a, weighting.weights)
            except (EmptySample, AllZeroWeights):
                skipped = True

        propensity = weighting.propensity_loss if weighting.propensity_loss is not None else zero
        total = factual + alpha * balance + propensity
        return LossBreakdown(factual, balance, propensity, total, skipped)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__}(name='{self.spec.name}', d_x={self.d_x}, d_phi={self.d_phi})>"
