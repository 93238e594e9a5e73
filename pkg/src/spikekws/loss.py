"""Classification loss and the squared-spike activity regularizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError
from .tensor import DTYPE, Tensor, log_softmax, mul, tsum


@dataclass
class LossConfig:
    reg_weight: float = 0.1
    reg_enabled: bool = True
    # optional per-layer weights; None means reg_weight for every layer
    layer_weights: Optional[List[float]] = field(default=None)

    def __post_init__(self):
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be nonnegative")
        if self.layer_weights is not None and any(w < 0 for w in self.layer_weights):
            raise ValueError("layer_weights must be nonnegative")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B, K = logits.shape
    if labels.shape[0] != B:
        raise DataError(f"{labels.shape[0]} labels for a batch of {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"label out of range [0, {K}): {labels.min()}..{labels.max()}")
    onehot = np.zeros((B, K), dtype=DTYPE)
    onehot[np.arange(B), labels] = -1.0 / B
    return tsum(mul(log_softmax(logits, axis=1), onehot))


def spike_regularizer(spikes: Tensor) -> Tensor:
    """``sum(S**2) / (2 * size)`` for one layer's spike train.

    The square is taken on the tape, so the gradient reaching the threshold
    node is ``2 S`` times the surrogate: exactly zero for silent neurons.
    """
    return tsum(mul(spikes, spikes)) * (0.5 / spikes.size)


def total_loss(ce: Tensor, regs: Sequence[Tensor], cfg: LossConfig) -> Tensor:
    if not cfg.reg_enabled or not regs:
        return ce
    weights = cfg.layer_weights or [cfg.reg_weight] * len(regs)
    if len(weights) != len(regs):
        raise ValueError(f"{len(weights)} layer weights for {len(regs)} spiking layers")
    loss = ce
    for w, r in zip(weights, regs):
        if w:
            loss = loss + r * float(w)
    return loss
