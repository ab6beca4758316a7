"""
Stage 0: train a representation network and expose its target-model inputs.

The objective per minibatch is the W-weighted factual MSE plus alpha times
the W-weighted distance between Phi(X)|A=0 and Phi(X)|A=1, plus the BCE
of a representation propensity head where the family has one.
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel, Field

from orlearners.data import Dataset
from orlearners.errors import ConfigurationError, ShapeMismatch
from orlearners.hashing import spec_hash
from orlearners.logging_config import get_logger
from orlearners.models.base import Family, LossBreakdown, RepLearnerSpec, RepresentationNetwork, TrainingBatch
from orlearners.nn import as_tensor, load_parameters, make_optimizer, run_epochs, save_parameters, to_numpy
from orlearners.nuisance import PropensityModel
from orlearners.services.registry import build_learner

logger = get_logger(__name__)

__all__ = [
    "Family",
    "RepLearnerSpec",
    "Selector",
    "TrainedRepresentation",
    "TrainingHistory",
    "rep_inputs",
    "train_representation",
]

MANIFEST = "manifest.json"
PARAMETERS = "representation.json"
COVARIATE_PROPENSITY = "covariate_propensity.json"


class Selector(str, Enum):
    """Which inputs V the Stage-2 target model sees."""

    RAW_X = "RawX"
    RAW_X_DEEP = "RawX*"
    PHI = "Phi"
    HEADS = "Heads"


class TrainingHistory(BaseModel):
    """Per-epoch means of the loss components; one entry per epoch."""

    total: list[float] = Field(default_factory=list)
    factual: list[float] = Field(default_factory=list)
    balance: list[float] = Field(default_factory=list)
    propensity: list[float] = Field(default_factory=list)
    skipped_balance_batches: list[int] = Field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.total)


@dataclass
class TrainedRepresentation:
    network: RepresentationNetwork
    spec: RepLearnerSpec
    seed: int
    history: TrainingHistory = field(default_factory=TrainingHistory)
    covariate_propensity: PropensityModel | None = None

    @property
    def d_x(self) -> int:
        return self.network.d_x

    @property
    def d_phi(self) -> int:
        return self.network.d_phi

    def _check(self, X: np.ndarray) -> torch.Tensor:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d_x:
            raise ShapeMismatch(f"{self.spec.name} expects {self.d_x} covariates, got shape {X.shape}")
        return as_tensor(X)

    def represent(self, X: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return to_numpy(self.network.represent(self._check(X)))

    def heads(self, X: np.ndarray) -> np.ndarray:
        """n×2 plug-in predictions (h_0(Phi(x)), h_1(Phi(x)))."""
        with torch.no_grad():
            return to_numpy(self.network.heads(self.network.represent(self._check(X))))

    def selector_width(self, selector: "Selector | str") -> int:
        selector = Selector(selector)
        if selector in (Selector.RAW_X, Selector.RAW_X_DEEP):
            return self.d_x
        return self.d_phi if selector == Selector.PHI else 2

    def manifest(self) -> dict:
        return {
            "family": self.spec.family.value,
            "name": self.spec.name,
            "invertible": self.spec.invertible,
            "d_x": self.d_x,
            "d_phi": self.d_phi,
            "seed": self.seed,
            "selector_widths": {s.value: self.selector_width(s) for s in Selector},
            "spec": self.spec.model_dump(mode="json"),
            "spec_hash": spec_hash(self.spec),
            "history": self.history.model_dump(),
        }

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_parameters(self.network, directory / PARAMETERS, {"spec_hash": spec_hash(self.spec)})
        if self.covariate_propensity is not None:
            self.covariate_propensity.save(directory / COVARIATE_PROPENSITY)
        (directory / MANIFEST).write_text(json.dumps(self.manifest(), indent=2), encoding="utf-8")
        logger.info(f"Saved {self.spec.name} representation to {directory}")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "TrainedRepresentation":
        directory = Path(directory)
        manifest_path = directory / MANIFEST
        if not manifest_path.exists():
            raise ConfigurationError(f"No representation manifest in {directory}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        spec = RepLearnerSpec.model_validate(manifest["spec"])
        if spec_hash(spec) != manifest["spec_hash"]:
            raise ConfigurationError(f"Spec hash mismatch in {manifest_path}")
        network = build_learner(spec, manifest["d_x"], manifest["seed"])
        load_parameters(network, directory / PARAMETERS)
        propensity = None
        if (directory / COVARIATE_PROPENSITY).exists():
            propensity = PropensityModel.load(directory / COVARIATE_PROPENSITY)
        return cls(
            network=network,
            spec=spec,
            seed=manifest["seed"],
            history=TrainingHistory.model_validate(manifest.get("history", {})),
            covariate_propensity=propensity,
        )


def train_representation(
    spec: RepLearnerSpec,
    data: Dataset,
    seed: int,
    covariate_propensity: PropensityModel | None = None,
) -> TrainedRepresentation:
    """
    Fit one representation network with minibatch AdamW; deterministic given seed.

    BWCFR needs `covariate_propensity`, fitted beforehand on the same data.
    A minibatch missing one arm contributes no balance term; those batches
    are counted in the history.
    """
    if spec.family == Family.BWCFR and covariate_propensity is None:
        raise ConfigurationError("BWCFR requires a pre-fitted covariate propensity model")

    network = build_learner(spec, data.d_x, seed)
    X, Y = as_tensor(data.X), as_tensor(data.Y)
    A = torch.as_tensor(data.A)
    pi1_x = None
    if spec.family == Family.BWCFR:
        pi1_x = as_tensor(covariate_propensity.predict(data.X))

    steps: list[_StepRecord] = []

    def objective(index: np.ndarray) -> torch.Tensor:
        rows = torch.as_tensor(index)
        batch = TrainingBatch(X[rows], Y[rows], A[rows], None if pi1_x is None else pi1_x[rows])
        breakdown = network.loss_components(batch)
        steps.append(_StepRecord.from_breakdown(len(index), breakdown))
        return breakdown.total

    optimizer = make_optimizer(network.parameter_groups(), spec.learning_rate, spec.weight_decay)
    network.train()
    totals = run_epochs(objective, data.n, spec.batch_size, spec.epochs, optimizer, seed, ("stage0",), f"stage 0 ({spec.name})")

    history = _epoch_history(totals, steps, data.n, spec.batch_size)
    network.eval()
    logger.info(
        f"Trained {spec.name} (alpha={spec.alpha}, seed={seed}): "
        f"factual MSE {history.factual[0]:.4f} -> {history.factual[-1]:.4f}, "
        f"skipped balance batches {sum(history.skipped_balance_batches)}"
    )
    return TrainedRepresentation(network, spec, seed, history, covariate_propensity)


@dataclass(frozen=True)
class _StepRecord:
    size: int
    factual: float
    balance: float
    propensity: float
    skipped: bool

    @classmethod
    def from_breakdown(cls, size: int, breakdown: LossBreakdown) -> "_StepRecord":
        return cls(
            size,
            breakdown.factual.item(),
            breakdown.balance.item(),
            breakdown.propensity.item(),
            breakdown.balance_skipped,
        )


def _epoch_history(totals: list[float], steps: list[_StepRecord], n: int, batch_size: int) -> TrainingHistory:
    per_epoch = -(-n // batch_size)
    history = TrainingHistory(total=totals)
    for epoch in range(len(totals)):
        chunk = steps[epoch * per_epoch:(epoch + 1) * per_epoch]
        sizes = [step.size for step in chunk]
        history.factual.append(float(np.average([s.factual for s in chunk], weights=sizes)))
        history.balance.append(float(np.average([s.balance for s in chunk], weights=sizes)))
        history.propensity.append(float(np.average([s.propensity for s in chunk], weights=sizes)))
        history.skipped_balance_batches.append(sum(s.skipped for s in chunk))
    return history


def rep_inputs(tr: TrainedRepresentation, X: np.ndarray, selector: Selector | str) -> np.ndarray:
    """Target-model inputs V: X itself, Phi(X), or the two head outputs."""
    selector = Selector(selector)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != tr.d_x:
        raise ShapeMismatch(f"Expected {tr.d_x} covariates, got shape {X.shape}")
    if selector in (Selector.RAW_X, Selector.RAW_X_DEEP):
        return X
    if selector == Selector.PHI:
        return tr.represent(X)
    return tr.heads(X)
