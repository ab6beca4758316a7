"""
Optimisation helpers shared by every training loop: AdamW, a checked
gradient step, weight averaging and minibatch iteration.
"""
from typing import Callable, Iterable, Iterator, TypeVar

import numpy as np
import torch
from torch import nn
from torch.optim.swa_utils import AveragedModel, get_ema_multi_avg_fn

from orlearners.errors import ConfigurationError, NonFiniteLoss
from orlearners.random_streams import stream

Batch = TypeVar("Batch")


def make_optimizer(
    params: Iterable[torch.nn.Parameter] | Iterable[dict],
    learning_rate: float,
    weight_decay: float = 0.0,
) -> torch.optim.AdamW:
    """AdamW with decoupled weight decay, betas (0.9, 0.999), eps 1e-8."""
    return torch.optim.AdamW(params, lr=learning_rate, weight_decay=weight_decay, betas=(0.9, 0.999), eps=1e-8)


def grad_step(
    loss_fn: Callable[[Batch], torch.Tensor],
    batch: Batch,
    optimizer: torch.optim.Optimizer,
    where: str = "training",
) -> float:
    """
    One AdamW update on `loss_fn(batch)`; the parameters are updated in place.

    Returns the pre-step loss. Raises NonFiniteLoss before touching the
    parameters if the loss diverged.
    """
    optimizer.zero_grad(set_to_none=True)
    loss = loss_fn(batch)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLoss(where, value)
    loss.backward()
    optimizer.step()
    return value


class EmaTracker:
    """
    Exponential moving average of model weights.

    The shadow starts at the model's current parameters; every `update`
    applies shadow <- decay * shadow + (1 - decay) * current.
    """

    def __init__(self, model: nn.Module, decay: float = 0.995):
        if not 0.0 < decay < 1.0:
            raise ConfigurationError(f"EMA smoothing must lie in (0, 1), got {decay}")
        self.decay = decay
        self._averaged = AveragedModel(model, multi_avg_fn=get_ema_multi_avg_fn(decay), use_buffers=False)
        # first update copies, so later ones are pure EMA steps
        self._averaged.update_parameters(model)

    def update(self, model: nn.Module) -> None:
        self._averaged.update_parameters(model)

    @property
    def shadow(self) -> nn.Module:
        return self._averaged.module


def minibatches(n: int, batch_size: int, seed: int, *labels: str | int) -> Iterator[np.ndarray]:
    """Row indices of one shuffled epoch; the permutation comes from its own seed stream."""
    order = stream(seed, *labels).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def run_epochs(
    loss_fn: Callable[[np.ndarray], torch.Tensor],
    n: int,
    batch_size: int,
    epochs: int,
    optimizer: torch.optim.Optimizer,
    seed: int,
    labels: tuple[str | int, ...],
    where: str,
    after_step: Callable[[], None] | None = None,
) -> list[float]:
    """
    Minibatch AdamW over `epochs` shuffled passes; `loss_fn` receives row indices.

    Returns the size-weighted mean pre-step loss of every epoch.
    """
    history = []
    for epoch in range(epochs):
        total, count = 0.0, 0
        for index in minibatches(n, batch_size, seed, *labels, epoch):
            value = grad_step(loss_fn, index, optimizer, where=f"{where}, epoch {epoch + 1}")
            if after_step is not None:
                after_step()
            total += value * len(index)
            count += len(index)
        history.append(total / count)
    return history
