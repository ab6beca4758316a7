"""
Random grid search with k-fold cross-validation for Stage-0 and Stage-1
networks. Stage-2 target networks use fixed hyperparameters.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.model_selection import KFold, ParameterSampler

from orlearners.data import Dataset
from orlearners.errors import ConfigurationError, EmptyGrid
from orlearners.logging_config import get_logger
from orlearners.models.base import Family, RepLearnerSpec
from orlearners.models.weighted import CFRISW
from orlearners.nn import as_tensor
from orlearners.nuisance import NetworkHyper, PropensityModel, fit_outcome_net, fit_propensity
from orlearners.random_streams import derive_seed
from orlearners.stage0 import train_representation

logger = get_logger(__name__)

BATCH_SIZES = [32, 64, 128]
LEARNING_RATES = [0.001, 0.005, 0.01]
WEIGHT_DECAYS = [0.0, 0.001, 0.01, 0.1]


class TuningStage(str, Enum):
    REP = "rep"
    PROPENSITY = "propensity"
    OUTCOME = "outcome"


@dataclass(frozen=True)
class TuningResult:
    best: dict[str, Any]
    best_score: float
    draws: list[dict[str, Any]]
    scores: list[float]


def _widths(multiplier: float, dim: int) -> list[int]:
    return sorted({max(1, round(factor * multiplier * dim)) for factor in (1.0, 1.5, 2.0)})


def search_grid(
    stage: TuningStage | str,
    d_x: int,
    d_phi: int,
    multiplier: float = 2.0,
    family: Family | str | None = None,
) -> dict[str, list]:
    """
    Search space per stage. Hidden widths are R·d, 1.5·R·d and 2·R·d of the
    layer's input dimension, R = 2 for synthetic data.
    """
    stage = TuningStage(stage)
    if stage != TuningStage.REP:
        return {
            "learning_rate": LEARNING_RATES,
            "batch_size": BATCH_SIZES,
            "weight_decay": WEIGHT_DECAYS,
            "hidden": _widths(multiplier, d_x),
        }
    grid = {
        "learning_rate": LEARNING_RATES,
        "batch_size": BATCH_SIZES,
        "weight_decay": WEIGHT_DECAYS,
        "rep_hidden": _widths(multiplier, d_x),
        "head_hidden": _widths(multiplier, d_phi),
    }
    family = Family(family) if family is not None else None
    if family == Family.CFR_ISW:
        grid["propensity_learning_rate"] = LEARNING_RATES
        grid["propensity_weight_decay"] = WEIGHT_DECAYS
        grid["propensity_hidden"] = _widths(multiplier, d_phi)
    elif family == Family.RCFR:
        grid["weight_hidden"] = _widths(multiplier, d_phi)
    return grid


def _validation_rep_loss(spec: RepLearnerSpec, train: Dataset, valid: Dataset, seed: int, propensity: PropensityModel | None) -> float:
    tr = train_representation(spec, train, seed, propensity)
    heads = tr.heads(valid.X)
    predicted = np.where(valid.A == 1, heads[:, 1], heads[:, 0])
    loss = float(np.mean((valid.Y - predicted) ** 2))
    if isinstance(tr.network, CFRISW):
        with torch.no_grad():
            phi = tr.network.represent(as_tensor(valid.X))
            pi1 = tr.network.representation_propensity(phi)
            loss += F.binary_cross_entropy(pi1, as_tensor(valid.A)).item()
    return loss


def _validation_propensity_loss(hyper: NetworkHyper, train: Dataset, valid: Dataset, seed: int) -> float:
    model = fit_propensity(train, hyper, seed)
    with torch.no_grad():
        pi1 = torch.as_tensor(model.predict(valid.X))
        return F.binary_cross_entropy(pi1, as_tensor(valid.A)).item()


def _validation_outcome_loss(hyper: NetworkHyper, train: Dataset, valid: Dataset, seed: int) -> float:
    mu0, mu1 = fit_outcome_net(train, hyper, seed).predict(valid.X)
    return float(np.mean((valid.Y - np.where(valid.A == 1, mu1, mu0)) ** 2))


def tune(
    stage: TuningStage | str,
    grid: dict[str, list],
    data: Dataset,
    seed: int,
    base_rep: RepLearnerSpec | None = None,
    base_hyper: NetworkHyper = NetworkHyper(),
    n_draws: int = 50,
    folds: int = 5,
    propensity: PropensityModel | None = None,
) -> TuningResult:
    """
    Score `n_draws` random configurations by k-fold CV factual loss (MSE, or
    BCE for the propensity; MSE + BCE for CFR-ISW) and return the best one.

    Ties go to the earliest draw.
    """
    stage = TuningStage(stage)
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise EmptyGrid(f"Tuning grid for stage '{stage.value}' is empty")
    if stage == TuningStage.REP and base_rep is None:
        raise ConfigurationError("Tuning the representation network needs a base RepLearnerSpec")
    if folds > data.n:
        raise ConfigurationError(f"Cannot split {data.n} rows into {folds} folds")

    size = math.prod(len(values) for values in grid.values())
    if size < n_draws:
        logger.warning(f"Grid for '{stage.value}' has {size} points; using all instead of {n_draws} draws")
        n_draws = size
    draws = list(ParameterSampler(grid, n_iter=n_draws, random_state=derive_seed(seed, "tuning", stage.value, bits=32)))
    splitter = KFold(n_splits=folds, shuffle=True, random_state=derive_seed(seed, "tuning_folds", bits=32))
    splits = list(splitter.split(data.X))

    scores = []
    for k, draw in enumerate(draws):
        fold_losses = []
        for fold, (train_index, valid_index) in enumerate(splits):
            train, valid = data.subset(train_index), data.subset(valid_index)
            fold_seed = derive_seed(seed, "tuning", stage.value, k, fold)
            if stage == TuningStage.REP:
                spec = base_rep.model_copy(update=draw)
                fold_losses.append(_validation_rep_loss(spec, train, valid, fold_seed, propensity))
            elif stage == TuningStage.PROPENSITY:
                hyper = base_hyper.model_copy(update=draw)
                fold_losses.append(_validation_propensity_loss(hyper, train, valid, fold_seed))
            else:
                hyper = base_hyper.model_copy(update=draw)
                fold_losses.append(_validation_outcome_loss(hyper, train, valid, fold_seed))
        scores.append(float(np.mean(fold_losses)))
        logger.debug(f"Tuning {stage.value} draw {k + 1}/{len(draws)}: {draw} -> {scores[-1]:.5f}")

    best = int(np.argmin(scores))
    logger.info(f"Tuned {stage.value}: best draw {best + 1} with CV loss {scores[best]:.5f}: {draws[best]}")
    return TuningResult(draws[best], scores[best], draws, scores)
