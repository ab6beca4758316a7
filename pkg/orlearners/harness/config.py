"""
Experiment configuration: a flat, typed TOML document.

Every key is optional except `schema_version`; unknown keys are rejected.
The schema is documented in docs/config_schema.md and printed by the CLI
on usage errors.
"""
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from orlearners.balance import BalancingSpec, IpmKind
from orlearners.data import Dataset, DgpKind, DgpSpec, OracleDataset, generate_split, load_csv
from orlearners.errors import ConfigurationError
from orlearners.hashing import stable_hash
from orlearners.logging_config import get_logger
from orlearners.models.base import Family, RepLearnerSpec
from orlearners.nuisance import NetworkHyper, NuisancePolicy
from orlearners.ortho import OrthogonalLossSpec, parse_loss_kind
from orlearners.random_streams import stream
from orlearners.stage0 import Selector

logger = get_logger(__name__)

SCHEMA_VERSION = 1
DEFAULT_ALPHAS = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
SETTING1_LOSSES = ["DRK0", "DRFS0", "DRK1", "DRFS1", "DRK", "R", "IVW"]
SETTING1_SELECTORS = ["Heads", "RawX", "RawX*", "Phi"]


class ExperimentConfig(BaseModel):
    """Declarative description of one benchmark run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION

    # Data: a synthetic process, or a CSV file with oracle columns
    dgp: DgpKind = DgpKind.KALLUS_SYNTHETIC
    csv_path: Path | None = None
    n_train: int = Field(default=500, ge=2)
    n_test: int = Field(default=2000, ge=1)
    gamma_star: float = Field(default=float(np.e), ge=1.0)
    image_dim: int = Field(default=784, ge=1)
    blob_std: float = Field(default=1.0, gt=0.0)
    constant_propensity: float | None = Field(default=None, gt=0.0, lt=1.0)
    seeds: list[int] = Field(default_factory=lambda: list(range(15)), min_length=1)

    # Stage 0
    families: list[Family] = Field(default_factory=lambda: [Family.TARNET, Family.BNN], min_length=1)
    invertible: list[bool] = Field(default_factory=lambda: [False], min_length=1)
    alphas: list[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS), min_length=1)
    ipms: list[IpmKind] = Field(default_factory=lambda: [IpmKind.MMD, IpmKind.WM], min_length=1)
    rep_dim: int | None = Field(default=2, ge=1)
    rep_hidden: int = Field(default=8, ge=1)
    head_hidden: int = Field(default=4, ge=1)
    head_lipschitz: float | None = Field(default=None, gt=0.0)
    propensity_hidden: int = Field(default=4, ge=1)
    weight_hidden: int = Field(default=4, ge=1)
    flow_blocks: int = Field(default=3, ge=1)
    learning_rate: float = Field(default=0.005, ge=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=200, ge=1)
    mmd_bandwidth: float | None = Field(default=None, gt=0.0)
    wm_epsilon: float = Field(default=0.1, gt=0.0)
    wm_iterations: int = Field(default=100, ge=1)

    # Stage 1
    nuisance_policy: NuisancePolicy = NuisancePolicy.AUTO
    nuisance_hidden: int = Field(default=8, ge=1)
    nuisance_learning_rate: float = Field(default=0.005, ge=0.0)
    nuisance_weight_decay: float = Field(default=0.0, ge=0.0)
    nuisance_batch_size: int = Field(default=64, ge=1)
    nuisance_epochs: int = Field(default=200, ge=1)

    # Stage 2 (fixed, never tuned)
    selectors: list[Selector] = Field(default_factory=lambda: [Selector(s) for s in SETTING1_SELECTORS], min_length=1)
    losses: list[str] = Field(default_factory=lambda: list(SETTING1_LOSSES), min_length=1)
    target_hidden: int | None = Field(default=None, ge=1)
    target_learning_rate: float = Field(default=0.005, ge=0.0)
    target_batch_size: int = Field(default=64, ge=1)
    target_epochs: int = Field(default=200, ge=1)
    ema: float = Field(default=0.995, gt=0.0, lt=1.0)

    # Tuning
    tuning_enabled: bool = False
    tuning_draws: int = Field(default=50, ge=1)
    tuning_folds: int = Field(default=5, ge=2)
    tuning_multiplier: float = Field(default=2.0, gt=0.0)

    # Output
    out_dir: Path | None = None
    results_file: str = "results.csv"

    @field_validator("losses")
    @classmethod
    def _known_losses(cls, losses: list[str]) -> list[str]:
        for name in losses:
            parse_loss_kind(name)
        return losses

    @field_validator("seeds")
    @classmethod
    def _unique_seeds(cls, seeds: list[int]) -> list[int]:
        if len(set(seeds)) != len(seeds) or min(seeds) < 0:
            raise ValueError("seeds must be distinct nonnegative integers")
        return seeds

    # -- derived specs --------------------------------------------------------

    def dgp_spec(self, seed: int) -> DgpSpec:
        return DgpSpec(
            kind=self.dgp,
            n=self.n_train,
            seed=seed,
            gamma_star=self.gamma_star,
            image_dim=self.image_dim,
            blob_std=self.blob_std,
            constant_propensity=self.constant_propensity,
        )

    def balancing(self, alpha: float, ipm: IpmKind | str) -> BalancingSpec:
        return BalancingSpec(
            metric=IpmKind(ipm),
            alpha=alpha,
            bandwidth=self.mmd_bandwidth,
            epsilon=self.wm_epsilon,
            iterations=self.wm_iterations,
        )

    def rep_spec(
        self,
        family: Family | str,
        invertible: bool = False,
        alpha: float = 0.0,
        ipm: IpmKind | str = IpmKind.MMD,
    ) -> RepLearnerSpec:
        return RepLearnerSpec(
            family=Family(family),
            invertible=invertible,
            balancing=self.balancing(alpha, ipm),
            rep_dim=None if invertible else self.rep_dim,
            rep_hidden=self.rep_hidden,
            head_hidden=self.head_hidden,
            head_lipschitz=self.head_lipschitz,
            propensity_hidden=self.propensity_hidden,
            weight_hidden=self.weight_hidden,
            flow_blocks=self.flow_blocks,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            propensity_learning_rate=self.learning_rate,
            propensity_weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
        )

    def nuisance_hyper(self) -> NetworkHyper:
        return NetworkHyper(
            hidden=self.nuisance_hidden,
            learning_rate=self.nuisance_learning_rate,
            weight_decay=self.nuisance_weight_decay,
            batch_size=self.nuisance_batch_size,
            epochs=self.nuisance_epochs,
        )

    def target_specs(self) -> list[OrthogonalLossSpec]:
        """Selector × loss grid in configuration order."""
        return [
            OrthogonalLossSpec(
                loss=parse_loss_kind(loss),
                selector=selector,
                hidden=self.target_hidden,
                learning_rate=self.target_learning_rate,
                batch_size=self.target_batch_size,
                epochs=self.target_epochs,
                ema=self.ema,
            )
            for selector in self.selectors
            for loss in self.losses
        ]

    def load_data(self, seed: int) -> tuple[Dataset, Dataset]:
        """
        (train, test) for one seed: an independent draw of the synthetic
        process, or a seeded split of the CSV file with n_test held-out rows.
        """
        if self.csv_path is None:
            return generate_split(self.dgp_spec(seed), self.n_test)
        data = load_csv(self.csv_path)
        if self.n_test >= data.n:
            raise ConfigurationError(f"n_test={self.n_test} leaves no training rows in {self.csv_path} (n={data.n})")
        order = stream(seed, "csv_split").permutation(data.n)
        return data.subset(np.sort(order[self.n_test:])), data.subset(np.sort(order[:self.n_test]))

    def load_oracle_data(self, seed: int) -> tuple[OracleDataset, OracleDataset]:
        train, test = self.load_data(seed)
        if not isinstance(test, OracleDataset):
            raise ConfigurationError(
                f"{self.csv_path} has no oracle columns (mu0, mu1, pi1, y0, y1); metrics cannot be computed"
            )
        return train, test


def config_hash(config: ExperimentConfig) -> str:
    """
    Hash of the key-sorted config, independent of field order, of the output
    location and of the seed list (seeds are part of every result key).
    """
    payload = config.model_dump(mode="json", exclude={"out_dir", "results_file", "seeds"})
    return stable_hash(payload)[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Invalid TOML in {path}: {e}") from e

    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid config {path}:\n{e}") from e
    logger.info(f"Loaded config {path} (hash {config_hash(config)})")
    return config
