"""
Integral probability metrics between treated and untreated representation
samples, differentiable with respect to the samples (and the weights).

MMD is the biased V-statistic with an RBF kernel. WM is a debiased
log-domain Sinkhorn transport cost with Euclidean ground cost; the entropic
strength is relative to the independent-coupling cost, which keeps the
value positively homogeneous under scaling of both samples.

Weighted variants take nonnegative weights per point, normalised per sample
to sum to one; points with zero weight are dropped.
"""
from enum import Enum

import ot
import torch
from pydantic import BaseModel, ConfigDict, Field

from orlearners.errors import AllZeroWeights, DimensionMismatch, EmptySample, NumericalUnderflow, ValidationFailure
from orlearners.nn.dense import as_tensor


class IpmKind(str, Enum):
    MMD = "mmd"
    WM = "wm"


class BalancingSpec(BaseModel):
    """Distance used by the balancing term and its strength alpha."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    metric: IpmKind = IpmKind.MMD
    alpha: float = Field(default=0.0, ge=0.0)
    # None selects the median heuristic, recomputed per minibatch
    bandwidth: float | None = Field(default=None, gt=0.0)
    epsilon: float = Field(default=0.1, gt=0.0)
    iterations: int = Field(default=100, ge=1)


def _as_samples(samples) -> torch.Tensor:
    samples = samples if isinstance(samples, torch.Tensor) else as_tensor(samples)
    return samples[:, None] if samples.ndim == 1 else samples


def _prepare(
    S0, w0, S1, w1
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    S0, S1 = _as_samples(S0), _as_samples(S1)
    if S0.shape[-1] != S1.shape[-1]:
        raise DimensionMismatch(f"Samples have dimensions {S0.shape[-1]} and {S1.shape[-1]}")
    S0, w0 = _with_weights(S0, w0, "first")
    S1, w1 = _with_weights(S1, w1, "second")
    return S0, w0, S1, w1


def _with_weights(samples: torch.Tensor, weights, which: str) -> tuple[torch.Tensor, torch.Tensor]:
    n = samples.shape[0]
    if n == 0:
        raise EmptySample(f"The {which} sample is empty")
    if weights is None:
        return samples, torch.full((n,), 1.0 / n, dtype=samples.dtype)

    weights = weights if isinstance(weights, torch.Tensor) else as_tensor(weights)
    weights = weights.reshape(-1).to(samples.dtype)
    if weights.shape[0] != n:
        raise DimensionMismatch(f"The {which} sample has {n} points but {weights.shape[0]} weights")
    if bool((weights < 0).any()):
        raise ValidationFailure(f"The {which} sample has negative weights")
    keep = weights > 0
    if not bool(keep.any()):
        raise AllZeroWeights(f"All weights of the {which} sample are zero")
    if not bool(keep.all()):
        samples, weights = samples[keep], weights[keep]
    return samples, weights / weights.sum()


def _squared_distances(S0: torch.Tensor, S1: torch.Tensor) -> torch.Tensor:
    return ((S0[:, None, :] - S1[None, :, :]) ** 2).sum(dim=-1)


def median_bandwidth(S0: torch.Tensor, S1: torch.Tensor) -> float:
    """Median pairwise distance over the pooled samples; 1.0 if that is degenerate."""
    pooled = torch.cat([_as_samples(S0), _as_samples(S1)]).detach()
    if pooled.shape[0] < 2:
        return 1.0
    median = torch.median(torch.pdist(pooled)).item()
    return median if median > 0.0 else 1.0


def mmd2_w(S0, w0, S1, w1, bandwidth: float | None = None) -> torch.Tensor:
    """Squared MMD between weighted empirical measures, RBF kernel exp(-|u-v|^2 / (2 sigma^2))."""
    S0, w0, S1, w1 = _prepare(S0, w0, S1, w1)
    sigma = median_bandwidth(S0, S1) if bandwidth is None else bandwidth
    gamma = 1.0 / (2.0 * sigma**2)

    within0 = w0 @ (torch.exp(-gamma * _squared_distances(S0, S0)) @ w0)
    within1 = w1 @ (torch.exp(-gamma * _squared_distances(S1, S1)) @ w1)
    # both cross orders, so swapping the arguments gives bitwise the same value
    cross01 = w0 @ (torch.exp(-gamma * _squared_distances(S0, S1)) @ w1)
    cross10 = w1 @ (torch.exp(-gamma * _squared_distances(S1, S0)) @ w0)
    value = within0 + within1 - (cross01 + cross10)
    return value.clamp_min(0.0)


def mmd2(S0, S1, bandwidth: float | None = None) -> torch.Tensor:
    return mmd2_w(S0, None, S1, None, bandwidth)


def _transport_cost(
    S0: torch.Tensor, w0: torch.Tensor, S1: torch.Tensor, w1: torch.Tensor, epsilon: float, iterations: int
) -> torch.Tensor:
    cost = torch.cdist(S0, S1, p=2.0, compute_mode="donot_use_mm_for_euclid_dist")
    scale = w0 @ (cost @ w1)
    if scale.item() == 0.0:
        return (cost * 0.0).sum()
    plan = ot.sinkhorn(
        w0, w1, cost / scale, reg=epsilon,
        method="sinkhorn_log", numItermax=iterations, stopThr=0.0, warn=False,
    )
    value = (plan * cost).sum()
    if not torch.isfinite(value):
        raise NumericalUnderflow(f"Sinkhorn produced {value.item()} with epsilon={epsilon}")
    return value


def wm_w(S0, w0, S1, w1, epsilon: float = 0.1, iterations: int = 100) -> torch.Tensor:
    """Entropic Wasserstein cost between weighted empirical measures, debiased and symmetrised."""
    S0, w0, S1, w1 = _prepare(S0, w0, S1, w1)
    cross = _transport_cost(S0, w0, S1, w1, epsilon, iterations) + _transport_cost(S1, w1, S0, w0, epsilon, iterations)
    within = _transport_cost(S0, w0, S0, w0, epsilon, iterations) + _transport_cost(S1, w1, S1, w1, epsilon, iterations)
    return (0.5 * cross - 0.5 * within).clamp_min(0.0)


def wasserstein_sinkhorn(S0, S1, epsilon: float = 0.1, iterations: int = 100) -> torch.Tensor:
    return wm_w(S0, None, S1, None, epsilon, iterations)


def balance_loss(
    spec: BalancingSpec,
    phi: torch.Tensor,
    treatment: torch.Tensor,
    weights: torch.Tensor | None = None,
) -> torch.Tensor:
    """Distance between Phi(X)|A=0 and Phi(X)|A=1; raises EmptySample if an arm is missing."""
    treated = treatment == 1
    w0 = None if weights is None else weights[~treated]
    w1 = None if weights is None else weights[treated]
    if spec.metric == IpmKind.MMD:
        return mmd2_w(phi[~treated], w0, phi[treated], w1, spec.bandwidth)
    return wm_w(phi[~treated], w0, phi[treated], w1, spec.epsilon, spec.iterations)
