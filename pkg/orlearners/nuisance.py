"""
Stage 1: the nuisance set (mu_0^x, mu_1^x, pi_1^x) consumed by the
orthogonal losses.

Propensity and outcome networks are fitted on raw covariates; outcome
regressions can instead be bound to the Stage-0 heads, or replaced by
ground truth for oracle checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from orlearners.data import Dataset, DgpKind, OracleDataset, kallus_oracle
from orlearners.errors import OracleUnavailable, ShapeMismatch, SingleArmData
from orlearners.logging_config import get_logger
from orlearners.models.base import Family, RepLearnerSpec
from orlearners.nn import (
    DenseNet,
    OutputActivation,
    as_tensor,
    load_parameters,
    make_optimizer,
    read_metadata,
    run_epochs,
    save_parameters,
    to_numpy,
)
from orlearners.random_streams import derive_seed, seeded
from orlearners.weighting import CLIP_THRESHOLD, clipped_inverse_weight

if TYPE_CHECKING:
    from orlearners.stage0 import TrainedRepresentation

logger = get_logger(__name__)

__all__ = [
    "CLIP_THRESHOLD",
    "NetworkHyper",
    "NuisancePolicy",
    "NuisanceSet",
    "NuisanceValues",
    "OutcomeModel",
    "PropensityModel",
    "Provenance",
    "assemble_nuisances",
    "clipped_inverse_weight",
    "fit_outcome_net",
    "fit_propensity",
    "needs_fresh_outcome",
    "oracle_nuisances",
]


class NetworkHyper(BaseModel):
    """Width and optimisation settings of a one-hidden-layer network."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    hidden: int = Field(default=8, ge=1)
    learning_rate: float = Field(default=0.005, ge=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=200, ge=1)


class PropensityModel:
    """Sigmoid network pi_1^x(x) on covariates."""

    kind = "propensity"

    def __init__(self, network: DenseNet, hyper: NetworkHyper, history: list[float] | None = None):
        self.network = network
        self.hyper = hyper
        self.history = history or []

    @property
    def d_x(self) -> int:
        return self.network.in_features

    def predict(self, X: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return to_numpy(self.network(as_tensor(X)).squeeze(-1))

    def save(self, path: str | Path) -> Path:
        return save_parameters(self.network, path, {"kind": self.kind, "d_x": self.d_x, "hyper": self.hyper.model_dump()})

    @classmethod
    def load(cls, path: str | Path) -> "PropensityModel":
        meta = read_metadata(path)
        hyper = NetworkHyper.model_validate(meta["hyper"])
        network = DenseNet(meta["d_x"], [hyper.hidden], 1, OutputActivation.SIGMOID)
        load_parameters(network, path)
        return cls(network, hyper)


class OutcomeModel:
    """Two outputs (mu_0, mu_1) over one shared hidden layer on raw covariates."""

    kind = "outcome"

    def __init__(self, network: DenseNet, hyper: NetworkHyper, history: list[float] | None = None):
        self.network = network
        self.hyper = hyper
        self.history = history or []

    @property
    def d_x(self) -> int:
        return self.network.in_features

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with torch.no_grad():
            both = to_numpy(self.network(as_tensor(X)))
        return both[:, 0], both[:, 1]

    def save(self, path: str | Path) -> Path:
        return save_parameters(self.network, path, {"kind": self.kind, "d_x": self.d_x, "hyper": self.hyper.model_dump()})

    @classmethod
    def load(cls, path: str | Path) -> "OutcomeModel":
        meta = read_metadata(path)
        hyper = NetworkHyper.model_validate(meta["hyper"])
        network = DenseNet(meta["d_x"], [hyper.hidden], 2)
        load_parameters(network, path)
        return cls(network, hyper)


def _require_both_arms(data: Dataset, what: str) -> None:
    treated = int(data.A.sum())
    if treated == 0 or treated == data.n:
        raise SingleArmData(f"Cannot fit the {what}: all {data.n} rows have A={int(data.A[0])}")


def fit_propensity(data: Dataset, hyper: NetworkHyper = NetworkHyper(), seed: int = 0) -> PropensityModel:
    """FC_{pi,x} trained on factual BCE with AdamW; deterministic given seed."""
    _require_both_arms(data, "propensity network")
    with seeded(derive_seed(seed, "propensity", "init")):
        network = DenseNet(data.d_x, [hyper.hidden], 1, OutputActivation.SIGMOID)
    X, A = as_tensor(data.X), as_tensor(data.A)

    def bce(index: np.ndarray) -> torch.Tensor:
        rows = torch.as_tensor(index)
        return F.binary_cross_entropy(network(X[rows]).squeeze(-1), A[rows])

    optimizer = make_optimizer(network.parameters(), hyper.learning_rate, hyper.weight_decay)
    history = run_epochs(bce, data.n, hyper.batch_size, hyper.epochs, optimizer, seed, ("propensity",), "propensity network")
    logger.info(f"Fitted propensity network: final BCE {history[-1]:.4f}")
    return PropensityModel(network, hyper, history)


def fit_outcome_net(data: Dataset, hyper: NetworkHyper = NetworkHyper(), seed: int = 0) -> OutcomeModel:
    """FC_{mu,x} trained on unweighted factual MSE."""
    with seeded(derive_seed(seed, "outcome", "init")):
        network = DenseNet(data.d_x, [hyper.hidden], 2)
    X, Y = as_tensor(data.X), as_tensor(data.Y)
    A = torch.as_tensor(data.A)

    def mse(index: np.ndarray) -> torch.Tensor:
        rows = torch.as_tensor(index)
        predicted = network(X[rows]).gather(1, A[rows].unsqueeze(-1)).squeeze(-1)
        return ((Y[rows] - predicted) ** 2).mean()

    optimizer = make_optimizer(network.parameters(), hyper.learning_rate, hyper.weight_decay)
    history = run_epochs(mse, data.n, hyper.batch_size, hyper.epochs, optimizer, seed, ("outcome",), "outcome network")
    logger.info(f"Fitted outcome network: final MSE {history[-1]:.4f}")
    return OutcomeModel(network, hyper, history)


class NuisancePolicy(str, Enum):
    AUTO = "auto"
    REUSE_HEADS = "reuse_heads"
    FRESH_OUTCOME_NET = "fresh_outcome_net"
    ORACLE = "oracle"


class Provenance(str, Enum):
    REPRESENTATION_HEADS = "representation_heads"
    FRESH_OUTCOME_NET = "fresh_outcome_net"
    ORACLE = "oracle"


@dataclass(frozen=True)
class NuisanceValues:
    mu0: np.ndarray
    mu1: np.ndarray
    pi1: np.ndarray

    @property
    def mu_x(self) -> np.ndarray:
        """mu^x = pi_0 mu_0 + pi_1 mu_1."""
        return (1.0 - self.pi1) * self.mu0 + self.pi1 * self.mu1

    def mu(self, arm: int) -> np.ndarray:
        return self.mu1 if arm == 1 else self.mu0


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted nuisances, evaluable row-wise on any covariate matrix with d_x columns."""

    outcome: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    propensity: Callable[[np.ndarray], np.ndarray]
    provenance: Provenance
    d_x: int

    def evaluate(self, X: np.ndarray) -> NuisanceValues:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d_x:
            raise ShapeMismatch(f"Nuisances expect {self.d_x} covariates, got shape {X.shape}")
        mu0, mu1 = self.outcome(X)
        return NuisanceValues(np.asarray(mu0, dtype=float), np.asarray(mu1, dtype=float), np.asarray(self.propensity(X), dtype=float))


def needs_fresh_outcome(spec: RepLearnerSpec) -> bool:
    """A balanced, non-invertible representation cannot be trusted for mu^x."""
    return spec.family != Family.TARNET and spec.alpha > 0.0 and not spec.invertible


def oracle_nuisances(data: OracleDataset) -> NuisanceSet:
    """
    Ground truth: the stored columns on the dataset's own rows, closed forms
    on other rows of the synthetic benchmark.
    """
    if not isinstance(data, OracleDataset):
        raise OracleUnavailable("Oracle nuisances need a dataset with ground-truth columns")
    closed_form = data.dgp is not None and data.dgp.kind == DgpKind.KALLUS_SYNTHETIC

    def lookup(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if X.shape == data.X.shape and np.array_equal(X, data.X):
            return data.mu0, data.mu1, data.pi1
        if closed_form:
            return kallus_oracle(X, data.dgp.constant_propensity)
        raise OracleUnavailable("Ground-truth nuisances are only known on the oracle dataset's own rows")

    return NuisanceSet(
        outcome=lambda X: lookup(X)[:2],
        propensity=lambda X: lookup(X)[2],
        provenance=Provenance.ORACLE,
        d_x=data.d_x,
    )


def assemble_nuisances(
    tr: TrainedRepresentation,
    data: Dataset,
    policy: NuisancePolicy | str = NuisancePolicy.AUTO,
    propensity_hyper: NetworkHyper = NetworkHyper(),
    outcome_hyper: NetworkHyper = NetworkHyper(),
    seed: int = 0,
    propensity: PropensityModel | None = None,
) -> NuisanceSet:
    """
    Bind mu_a^x to the Stage-0 heads or to a fresh outcome network, and pi_1^x
    to a covariate propensity network.

    `auto` fits a fresh outcome network iff balancing is active with a
    non-invertible representation. The covariate propensity fitted for BWCFR
    is reused; otherwise `propensity` is used if given, or fitted here.
    """
    policy = NuisancePolicy(policy)
    if policy == NuisancePolicy.ORACLE:
        return oracle_nuisances(data)

    if policy == NuisancePolicy.AUTO:
        policy = NuisancePolicy.FRESH_OUTCOME_NET if needs_fresh_outcome(tr.spec) else NuisancePolicy.REUSE_HEADS

    if tr.covariate_propensity is not None:
        propensity = tr.covariate_propensity
    elif propensity is None:
        propensity = fit_propensity(data, propensity_hyper, seed)

    if policy == NuisancePolicy.REUSE_HEADS:
        def outcome(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            heads = tr.heads(X)
            return heads[:, 0], heads[:, 1]

        provenance = Provenance.REPRESENTATION_HEADS
    else:
        outcome = fit_outcome_net(data, outcome_hyper, seed).predict
        provenance = Provenance.FRESH_OUTCOME_NET

    logger.info(f"Assembled nuisances for {tr.spec.name}: outcome from {provenance.value}")
    return NuisanceSet(outcome=outcome, propensity=propensity.predict, provenance=provenance, d_x=data.d_x)
