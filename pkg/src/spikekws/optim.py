"""Rectified Adam, learning-rate schedule, clipping and parameter clamping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, NumericError
from .tensor import DTYPE, Tensor


@dataclass
class OptimConfig:
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-5
    decoupled_decay: bool = False
    grad_clip: float = 5.0
    lr_gamma: float = 0.85
    warmup_epochs: int = 1

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.lr > 0 or not self.eps > 0:
            raise ValueError("lr and eps must be positive")
        if self.weight_decay < 0 or self.grad_clip <= 0:
            raise ValueError("weight_decay must be >= 0 and grad_clip > 0")
        if not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_gamma must lie in (0, 1]")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def param_kind(name: str) -> str:
    """``weight``, ``bias``, ``beta`` or ``threshold`` from a parameter name."""
    return name.rsplit(".", 1)[-1] if name else "weight"


def lr_at(epoch: int, cfg: OptimConfig, step: int = 0, steps_per_epoch: int = 1) -> float:
    """Learning rate at ``step`` (0-based) within ``epoch`` (0-based).

    Linear ramp from 0 over the warmup epochs, then ``lr * gamma**k`` where
    ``k`` counts epochs after warmup.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    w = cfg.warmup_epochs
    if epoch < w:
        done = epoch * steps_per_epoch + step
        return cfg.lr * done / (w * steps_per_epoch)
    return cfg.lr * cfg.lr_gamma ** (epoch - w)


def clip_gradients(params: Sequence[Tensor], limit: float = 5.0) -> None:
    """Clamp every gradient component into ``[-limit, limit]`` in place."""
    for p in params:
        if p.grad is not None:
            np.clip(p.grad, -limit, limit, out=p.grad)


def clamp_parameters(named: Sequence[Tuple[str, Tensor]]) -> None:
    """Keep leak factors in [0, 1] and thresholds nonnegative."""
    for name, p in named:
        kind = param_kind(name)
        if kind == "beta":
            np.clip(p.data, 0.0, 1.0, out=p.data)
        elif kind == "threshold":
            np.maximum(p.data, 0.0, out=p.data)


class RAdam:
    """Rectified Adam over named parameters.

    Leak factors and thresholds are exempt from weight decay and are clamped
    to their valid range after each step. Frozen parameters (``requires_grad``
    false) are never touched.
    """

    def __init__(self, named_params: Sequence[Tuple[str, Tensor]], cfg: OptimConfig = None):
        self.cfg = cfg or OptimConfig()
        self.params: List[Tuple[str, Tensor]] = [(n, p) for n, p in named_params if p.requires_grad]
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def rectification(self, t: int):
        """Return ``r_t`` or ``None`` when the variance is not yet tractable."""
        b2 = self.cfg.betas[1]
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        b2t = b2 ** t
        rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        if rho_t <= 4.0:
            return None
        return math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf
                         / ((rho_inf - 4) * (rho_inf - 2) * rho_t))

    def step(self, lr_t: float) -> None:
        cfg = self.cfg
        b1, b2 = cfg.betas
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in {name!r}")
        self.t += 1
        t = self.t
        r = self.rectification(t)
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for name, p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad.astype(np.float64)
            decays = param_kind(name) in ("weight", "bias") and cfg.weight_decay > 0
            if decays and not cfg.decoupled_decay:
                g = g + cfg.weight_decay * p.data
            m = self.m[name] = (b1 * self.m[name] + (1 - b1) * g).astype(DTYPE)
            v = self.v[name] = (b2 * self.v[name] + (1 - b2) * g * g).astype(DTYPE)
            m_hat = m.astype(np.float64) / bc1
            if r is None:
                delta = lr_t * m_hat
            else:
                v_hat = v.astype(np.float64) / bc2
                delta = lr_t * r * m_hat / (np.sqrt(v_hat) + cfg.eps)
            new = p.data.astype(np.float64) - delta
            if decays and cfg.decoupled_decay:
                new -= lr_t * cfg.weight_decay * p.data
            p.data = new.astype(DTYPE)
        clamp_parameters(self.params)

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, _ in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state_dict(self, tensors: Dict[str, np.ndarray], step: int) -> None:
        for name, p in self.params:
            for key, store in (("m", self.m), ("v", self.v)):
                full = f"optim.{key}.{name}"
                if full not in tensors:
                    raise CheckpointError(f"missing optimizer tensor {full!r}")
                arr = np.asarray(tensors[full], dtype=DTYPE)
                if arr.shape != p.shape:
                    raise CheckpointError(f"tensor {full!r}: shape {arr.shape} != {p.shape}")
                store[name] = arr.copy()
        self.t = int(step)
