"""
Oracle metrics, improvement deltas and diagnostic probes.

Metrics compare estimates with ground-truth columns of an OracleDataset.
The probes measure how a trained representation stretches or shrinks
covariate space, and how far arm-wise outcome means are from average
potential outcomes on a confounded benchmark.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from orlearners.data import DgpSpec, OracleDataset, generate
from orlearners.errors import DegenerateSample, LengthMismatch, MismatchedQuantity
from orlearners.logging_config import get_logger
from orlearners.ortho import Quantity
from orlearners.random_streams import stream
from orlearners.stage0 import TrainedRepresentation

logger = get_logger(__name__)

PAIR_CAP = 10_000
MIN_PAIR_DISTANCE = 1e-9
GAP_SE_MULTIPLIER = 3.0


def _root_mean_squared(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if estimate.shape != truth.shape or estimate.size == 0:
        raise LengthMismatch(f"Cannot compare {estimate.size} estimates with {truth.size} true values")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def rpehe(tau_hat, tau_true) -> float:
    """Root precision in estimating heterogeneous effects."""
    return _root_mean_squared(tau_hat, tau_true)


def rmse_capo(xi_hat, mu_true) -> float:
    return _root_mean_squared(xi_hat, mu_true)


def oracle_metric(data: OracleDataset, quantity: Quantity | str, estimate) -> float:
    """rMSE against mu_a for CAPOs, rPEHE against tau for CATE."""
    quantity = Quantity(quantity)
    if quantity == Quantity.CATE:
        return rpehe(estimate, data.tau)
    return rmse_capo(estimate, data.mu1 if quantity.arm == 1 else data.mu0)


class MetricReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    quantity: Quantity
    value: float = Field(ge=0.0)
    n_eval: int = Field(ge=1)
    method: str
    seed: int

    @field_validator("value")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("metric value must be finite")
        return value


def delta_vs_baseline(or_report: MetricReport, baseline_report: MetricReport) -> float:
    """OR-learner metric minus plug-in metric; negative means improvement."""
    if or_report.quantity != baseline_report.quantity:
        raise MismatchedQuantity(
            f"Cannot compare {or_report.quantity.value} with {baseline_report.quantity.value}"
        )
    if or_report.n_eval != baseline_report.n_eval:
        raise MismatchedQuantity(
            f"Reports were evaluated on {or_report.n_eval} and {baseline_report.n_eval} rows"
        )
    return or_report.value - baseline_report.value


def summarize(rows: pd.DataFrame | Iterable[MetricReport], value: str = "value", by: Sequence[str] = ("method", "quantity")) -> pd.DataFrame:
    """Mean, std and count per group, plus a 'mean ± std' display column."""
    if not isinstance(rows, pd.DataFrame):
        rows = pd.DataFrame([report.model_dump(mode="json") for report in rows])
    grouped = rows.groupby(list(by), sort=True)[value].agg(["mean", "std", "count"]).reset_index()
    grouped["std"] = grouped["std"].fillna(0.0)
    grouped["display"] = [f"{m:.3f} ± {s:.3f}" for m, s in zip(grouped["mean"], grouped["std"])]
    return grouped


# ---------------------------------------------------------------------------
# Representation geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionStats:
    median: float
    q1: float
    q3: float
    n_pairs: int


def _as_map(representation: TrainedRepresentation | Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(representation, TrainedRepresentation):
        return representation.represent
    return representation


def expansion_ratio(
    representation: TrainedRepresentation | Callable[[np.ndarray], np.ndarray],
    X: np.ndarray,
    max_pairs: int = PAIR_CAP,
    seed: int = 0,
) -> ExpansionStats:
    """
    Quartiles of |Phi(x) - Phi(x')| / |x - x'| over row pairs.

    All pairs are used when there are at most `max_pairs` of them, otherwise
    `max_pairs` random pairs of distinct rows; pairs closer than 1e-9 are ignored.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise DegenerateSample(f"Expansion ratio needs at least 2 rows, got {n}")

    if n * (n - 1) // 2 <= max_pairs:
        first, second = np.triu_indices(n, k=1)
    else:
        rng = stream(seed, "expansion_pairs")
        first = rng.integers(0, n, size=max_pairs)
        second = (first + rng.integers(1, n, size=max_pairs)) % n

    input_distance = np.linalg.norm(X[first] - X[second], axis=1)
    keep = input_distance > MIN_PAIR_DISTANCE
    if not keep.any():
        raise DegenerateSample("All row pairs coincide")

    phi = np.asarray(_as_map(representation)(X), dtype=float)
    phi = phi[:, None] if phi.ndim == 1 else phi
    ratios = np.linalg.norm(phi[first[keep]] - phi[second[keep]], axis=1) / input_distance[keep]
    q1, median, q3 = np.quantile(ratios, [0.25, 0.5, 0.75])
    return ExpansionStats(float(median), float(q1), float(q3), int(keep.sum()))


def representation_variance_ratio(tr: TrainedRepresentation, X: np.ndarray) -> float:
    """Total variance of Phi(X) over total variance of X; near 0 means collapse."""
    X = np.asarray(X, dtype=float)
    input_variance = float(np.var(X, axis=0).sum())
    if input_variance == 0.0:
        raise DegenerateSample("Covariates have zero variance")
    return float(np.var(tr.represent(X), axis=0).sum()) / input_variance


def grid_transform_export(
    representation: TrainedRepresentation | Callable[[np.ndarray], np.ndarray],
    bounds: Sequence[tuple[float, float]] = ((-2.0, 2.0), (-2.0, 2.0)),
    resolution: int | Sequence[int] = 11,
    path: str | Path | None = None,
) -> pd.DataFrame:
    """
    Image of a regular grid under Phi, one row per grid point.

    Columns x1..xd then phi1..phid, rows in C order of the grid; written as
    CSV when `path` is given.
    """
    dims = len(bounds)
    resolution = [resolution] * dims if isinstance(resolution, int) else list(resolution)
    if len(resolution) != dims or min(resolution) < 1:
        raise LengthMismatch(f"Need one positive resolution per dimension, got {resolution} for {dims} bounds")
    axes = [np.linspace(low, high, steps) for (low, high), steps in zip(bounds, resolution)]
    points = np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    image = np.asarray(_as_map(representation)(points), dtype=float)
    image = image[:, None] if image.ndim == 1 else image

    frame = pd.DataFrame(points, columns=[f"x{j + 1}" for j in range(dims)])
    for j in range(image.shape[1]):
        frame[f"phi{j + 1}"] = image[:, j]
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
        logger.info(f"Wrote {len(frame)} grid points to {path}")
    return frame


# ---------------------------------------------------------------------------
# Confounding probe
# ---------------------------------------------------------------------------

class RicbReport(BaseModel):
    """Average potential outcomes against arm-wise means on one oracle sample."""

    model_config = ConfigDict(frozen=True)

    n: int
    apo0: float
    apo1: float
    apo0_se: float
    apo1_se: float
    arm_mean0: float
    arm_mean1: float
    arm_mean0_se: float
    arm_mean1_se: float
    ate: float
    ate_se: float
    tau_mean: float
    diff_in_means: float
    diff_in_means_se: float
    gap0: bool
    gap1: bool
    ate_gap: bool


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    if values.size < 2:
        raise DegenerateSample(f"Need at least 2 values for a standard error, got {values.size}")
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def _gap(first: float, first_se: float, second: float, second_se: float) -> bool:
    return abs(first - second) > GAP_SE_MULTIPLIER * math.hypot(first_se, second_se)


def confounding_summary(data: OracleDataset) -> RicbReport:
    """
    What a constant representation can recover: the adjusted means E[Y[a]]
    against the unadjusted E[Y | A=a], with a flag when they differ by
    more than 3 standard errors.
    """
    apo0, apo0_se = _mean_se(data.y0)
    apo1, apo1_se = _mean_se(data.y1)
    arm0, arm0_se = _mean_se(data.Y[data.A == 0])
    arm1, arm1_se = _mean_se(data.Y[data.A == 1])
    ate, ate_se = _mean_se(data.y1 - data.y0)
    dim = arm1 - arm0
    dim_se = math.hypot(arm0_se, arm1_se)
    report = RicbReport(
        n=data.n,
        apo0=apo0, apo1=apo1, apo0_se=apo0_se, apo1_se=apo1_se,
        arm_mean0=arm0, arm_mean1=arm1, arm_mean0_se=arm0_se, arm_mean1_se=arm1_se,
        ate=ate, ate_se=ate_se, tau_mean=float(data.tau.mean()),
        diff_in_means=dim, diff_in_means_se=dim_se,
        gap0=_gap(apo0, apo0_se, arm0, arm0_se),
        gap1=_gap(apo1, apo1_se, arm1, arm1_se),
        ate_gap=_gap(ate, ate_se, dim, dim_se),
    )
    logger.info(f"Confounding probe (n={data.n}): ATE {ate:.4f} vs difference in means {dim:.4f}")
    return report


def ricb_probe(spec: DgpSpec) -> RicbReport:
    return confounding_summary(generate(spec, "ricb_probe"))
