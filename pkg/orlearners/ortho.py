"""
Stage 2: pseudo-outcomes, the Neyman-orthogonal target losses and target
model fitting with weight averaging.

Pseudo-outcome helpers are elementwise and accept numpy arrays or torch
tensors; the losses take tensors so they can be differentiated.
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from orlearners.data import Dataset
from orlearners.errors import ConfigurationError
from orlearners.hashing import spec_hash
from orlearners.logging_config import get_logger
from orlearners.nn import DenseNet, EmaTracker, as_tensor, load_parameters, make_optimizer, run_epochs, save_parameters, to_numpy
from orlearners.nuisance import NuisanceSet
from orlearners.random_streams import derive_seed, seeded
from orlearners.stage0 import Selector, TrainedRepresentation, rep_inputs
from orlearners.weighting import clipped_inverse_weight

logger = get_logger(__name__)

TARGET_MANIFEST = "target.json"
TARGET_PARAMETERS = "target_parameters.json"
REPRESENTATION_DIR = "representation"


class Quantity(str, Enum):
    CAPO0 = "capo0"
    CAPO1 = "capo1"
    CATE = "cate"

    @property
    def arm(self) -> int | None:
        return {Quantity.CAPO0: 0, Quantity.CAPO1: 1}.get(self)


class LossKind(str, Enum):
    DRK0 = "DRK0"
    DRFS0 = "DRFS0"
    DRK1 = "DRK1"
    DRFS1 = "DRFS1"
    DRK = "DRK"
    R = "R"
    IVW = "IVW"

    @property
    def quantity(self) -> Quantity:
        if self.value.endswith("0"):
            return Quantity.CAPO0
        if self.value.endswith("1"):
            return Quantity.CAPO1
        return Quantity.CATE


def parse_loss_kind(name: str) -> LossKind:
    if name == "DRFS":
        raise ConfigurationError("DRFS is defined for CAPOs only; use DRFS0 or DRFS1")
    try:
        return LossKind(name)
    except ValueError as e:
        valid = ", ".join(kind.value for kind in LossKind)
        raise ConfigurationError(f"Unknown orthogonal loss '{name}'. Valid losses: {valid}") from e


class OrthogonalLossSpec(BaseModel):
    """Stage-2 loss, target inputs and fixed target-network hyperparameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    loss: LossKind
    selector: Selector = Selector.PHI
    # None: as wide as the Stage-0 outcome heads
    hidden: int | None = Field(default=None, ge=1)
    learning_rate: float = Field(default=0.005, ge=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=200, ge=1)
    ema: float = Field(default=0.995, gt=0.0, lt=1.0)

    @property
    def quantity(self) -> Quantity:
        return self.loss.quantity

    @property
    def depth(self) -> int:
        return 2 if self.selector == Selector.RAW_X_DEEP else 1


@dataclass(frozen=True)
class OrthoBatch:
    v: torch.Tensor
    y: torch.Tensor
    a: torch.Tensor
    mu0: torch.Tensor
    mu1: torch.Tensor
    pi1: torch.Tensor

    @property
    def mu_x(self) -> torch.Tensor:
        return (1.0 - self.pi1) * self.mu0 + self.pi1 * self.mu1


def _where(condition, when_true, when_false):
    if isinstance(when_true, torch.Tensor):
        return torch.where(condition, when_true, when_false)
    return np.where(condition, when_true, when_false)


def pseudo_dr_capo(arm: int, y, a, mu0, mu1, pi1):
    """alpha_a (Y - mu_a) + mu_a with clipped inverse weight alpha_a."""
    mu_arm = mu1 if arm == 1 else mu0
    return clipped_inverse_weight(arm, a, pi1) * (y - mu_arm) + mu_arm


def pseudo_dr_cate(y, a, mu0, mu1, pi1):
    """(alpha_1 - alpha_0)(Y - mu_A) + mu_1 - mu_0."""
    mu_observed = _where(a == 1, mu1, mu0)
    correction = clipped_inverse_weight(1, a, pi1) - clipped_inverse_weight(0, a, pi1)
    return correction * (y - mu_observed) + mu1 - mu0


def pseudo_outcome(quantity: Quantity, y, a, mu0, mu1, pi1):
    if quantity == Quantity.CATE:
        return pseudo_dr_cate(y, a, mu0, mu1, pi1)
    return pseudo_dr_capo(quantity.arm, y, a, mu0, mu1, pi1)


def loss_dr_k(g: torch.Tensor, batch: OrthoBatch, quantity: Quantity) -> torch.Tensor:
    pseudo = pseudo_outcome(quantity, batch.y, batch.a, batch.mu0, batch.mu1, batch.pi1)
    return ((pseudo - g) ** 2).mean()


def loss_dr_fs_capo(g: torch.Tensor, batch: OrthoBatch, arm: int) -> torch.Tensor:
    weight = clipped_inverse_weight(arm, batch.a, batch.pi1)
    mu_arm = batch.mu1 if arm == 1 else batch.mu0
    return (weight * (batch.y - g) ** 2 + (1.0 - weight) * (mu_arm - g) ** 2).mean()


def loss_r_cate(g: torch.Tensor, batch: OrthoBatch) -> torch.Tensor:
    """Product form ((Y - mu^x) - (A - pi_1) g)^2; no inverse weights."""
    residual_treatment = batch.a.to(batch.pi1.dtype) - batch.pi1
    return (((batch.y - batch.mu_x) - residual_treatment * g) ** 2).mean()


def loss_ivw_cate(g: torch.Tensor, batch: OrthoBatch) -> torch.Tensor:
    overlap = (batch.a.to(batch.pi1.dtype) - batch.pi1) ** 2
    pseudo = pseudo_dr_cate(batch.y, batch.a, batch.mu0, batch.mu1, batch.pi1)
    return (overlap * (pseudo - g) ** 2).mean()


def orthogonal_loss(kind: LossKind, g: torch.Tensor, batch: OrthoBatch) -> torch.Tensor:
    kind = LossKind(kind)
    if kind in (LossKind.DRK0, LossKind.DRK1, LossKind.DRK):
        return loss_dr_k(g, batch, kind.quantity)
    if kind in (LossKind.DRFS0, LossKind.DRFS1):
        return loss_dr_fs_capo(g, batch, kind.quantity.arm)
    if kind == LossKind.R:
        return loss_r_cate(g, batch)
    return loss_ivw_cate(g, batch)


def degenerate_treatment_residuals(a: np.ndarray, pi1: np.ndarray, tolerance: float = 1e-12) -> bool:
    """True when A - pi_1 vanishes on every row, so R and IVW losses ignore g."""
    return bool(np.all(np.abs(np.asarray(a, dtype=float) - np.asarray(pi1, dtype=float)) <= tolerance))


@dataclass
class TargetModel:
    """Stage-2 target network g over selector inputs; `network` holds the averaged weights."""

    network: DenseNet
    spec: OrthogonalLossSpec
    representation: TrainedRepresentation
    seed: int
    history: list[float] = field(default_factory=list)

    @property
    def quantity(self) -> Quantity:
        return self.spec.quantity

    def predict(self, X_raw: np.ndarray) -> np.ndarray:
        V = rep_inputs(self.representation, X_raw, self.spec.selector)
        with torch.no_grad():
            return to_numpy(self.network(as_tensor(V)).squeeze(-1))

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        self.representation.save(directory / REPRESENTATION_DIR)
        save_parameters(self.network, directory / TARGET_PARAMETERS, {"spec_hash": spec_hash(self.spec)})
        manifest = {
            "spec": self.spec.model_dump(mode="json"),
            "spec_hash": spec_hash(self.spec),
            "quantity": self.quantity.value,
            "input_width": self.network.in_features,
            "hidden": _target_width(self.spec, self.representation),
            "seed": self.seed,
            "history": self.history,
        }
        (directory / TARGET_MANIFEST).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        logger.info(f"Saved {self.spec.loss.value}/{self.spec.selector.value} target model to {directory}")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "TargetModel":
        directory = Path(directory)
        manifest_path = directory / TARGET_MANIFEST
        if not manifest_path.exists():
            raise ConfigurationError(f"No target manifest in {directory}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        spec = OrthogonalLossSpec.model_validate(manifest["spec"])
        if spec_hash(spec) != manifest["spec_hash"]:
            raise ConfigurationError(f"Spec hash mismatch in {manifest_path}")
        representation = TrainedRepresentation.load(directory / REPRESENTATION_DIR)
        network = DenseNet(manifest["input_width"], [manifest["hidden"]] * spec.depth, 1)
        load_parameters(network, directory / TARGET_PARAMETERS)
        return cls(network, spec, representation, manifest["seed"], manifest.get("history", []))


def _target_width(spec: OrthogonalLossSpec, tr: TrainedRepresentation) -> int:
    return spec.hidden if spec.hidden is not None else tr.spec.head_hidden


def fit_target(
    spec: OrthogonalLossSpec,
    tr: TrainedRepresentation,
    nuisances: NuisanceSet,
    data: Dataset,
    seed: int,
) -> TargetModel:
    """
    Minibatch AdamW on the chosen orthogonal loss, tracking an exponential
    moving average of the weights; the returned model predicts with the average.
    """
    V = rep_inputs(tr, data.X, spec.selector)
    values = nuisances.evaluate(data.X)
    if spec.loss in (LossKind.R, LossKind.IVW) and degenerate_treatment_residuals(data.A, values.pi1):
        logger.warning(f"A - pi_1 is zero on every row: the {spec.loss.value} loss does not depend on the target model")

    width = _target_width(spec, tr)
    labels = ("stage2", spec.loss.value, spec.selector.value)
    with seeded(derive_seed(seed, *labels, "init")):
        network = DenseNet(V.shape[1], [width] * spec.depth, 1)

    v, y = as_tensor(V), as_tensor(data.Y)
    a = torch.as_tensor(data.A)
    mu0, mu1, pi1 = as_tensor(values.mu0), as_tensor(values.mu1), as_tensor(values.pi1)

    def objective(index: np.ndarray) -> torch.Tensor:
        rows = torch.as_tensor(index)
        batch = OrthoBatch(v[rows], y[rows], a[rows], mu0[rows], mu1[rows], pi1[rows])
        return orthogonal_loss(spec.loss, network(batch.v).squeeze(-1), batch)

    optimizer = make_optimizer(network.parameters(), spec.learning_rate, spec.weight_decay)
    ema = EmaTracker(network, spec.ema)
    history = run_epochs(
        objective, data.n, spec.batch_size, spec.epochs, optimizer, seed, labels,
        f"stage 2 ({spec.loss.value}, {spec.selector.value})",
        after_step=lambda: ema.update(network),
    )
    logger.info(f"Fitted {spec.loss.value} target on {spec.selector.value} inputs: final loss {history[-1]:.4f}")
    return TargetModel(ema.shadow, spec, tr, seed, history)


def plugin_predictions(tr: TrainedRepresentation, X: np.ndarray, quantity: Quantity | str) -> np.ndarray:
    """Baseline plug-in estimates from the Stage-0 heads: h_a for CAPO a, h_1 - h_0 for CATE."""
    quantity = Quantity(quantity)
    heads = tr.heads(X)
    if quantity == Quantity.CATE:
        return heads[:, 1] - heads[:, 0]
    return heads[:, quantity.arm]

