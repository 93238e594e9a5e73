"""Discrete-time LIF / NLIF membrane recurrences.

One step of the leaky neuron, for a neuron with squared weight norm ``w``
and threshold ``b``::

    U[n] = beta * (U[n-1] - b * w * S[n-1]) + I[n]
    S[n] = H(U[n] / (w + eps) - b)

The non-leaky variant is the same recurrence with ``beta = 1``; both
subtract the reset computed from the previous step's spikes. The resting
potential is 0 and the membrane resistance 1.

Two interchangeable routes are provided: :func:`lif_step` composes tape
operations one timestep at a time (fully unrolled BPTT), and :func:`lif_scan`
runs a whole sequence as a single tape node backed by the scan kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError
from .tensor import DTYPE, Tensor, as_tensor, spike_threshold

LIF = "LIF"
NLIF = "NLIF"


def beta_from_tau(tau_mem: float, dt: float) -> float:
    """Leak factor ``exp(-dt / tau_mem)`` for a membrane time constant."""
    if not (tau_mem > 0 and dt > 0):
        raise ValueError(f"tau_mem and dt must be positive, got tau_mem={tau_mem}, dt={dt}")
    return math.exp(-dt / tau_mem)


@dataclass
class NeuronConfig:
    """Neuron parameters of one layer.

    ``beta`` is a scalar and ``thresholds`` one value per output channel;
    either may be a trainable :class:`Tensor`. ``beta`` is ignored in NLIF
    mode.
    """

    beta: Union[Tensor, float] = 0.7
    thresholds: Union[Tensor, np.ndarray, float] = 1.0
    eps: float = 1e-8
    mode: str = LIF
    surrogate_a: float = 10.0
    reset_detach: bool = False

    def __post_init__(self):
        if self.mode not in (LIF, NLIF):
            raise ValueError(f"mode must be LIF or NLIF, got {self.mode!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.surrogate_a > 0:
            raise ValueError("surrogate_a must be positive")

    def effective_beta(self):
        return 1.0 if self.mode == NLIF else self.beta


@dataclass
class MembraneState:
    U: Tensor
    S_prev: Tensor

    @classmethod
    def zeros(cls, shape) -> "MembraneState":
        return cls(Tensor.zeros(shape), Tensor.zeros(shape))


def _channel_view(x, ndim: int) -> Tensor:
    """Reshape a per-channel vector to broadcast over ``[B, C, F]`` states."""
    x = as_tensor(x)
    if x.ndim <= 1 and ndim == 3 and x.size > 1:
        return x.reshape(x.size, 1)
    return x


def lif_step(state: MembraneState, I_n: Tensor, w_norm_sq, cfg: NeuronConfig):
    """Advance the membrane by one timestep on the tape.

    ``w_norm_sq`` and ``cfg.thresholds`` are per-channel; for states of shape
    ``[B, C, F]`` they broadcast over batch and frequency.
    """
    I_n = as_tensor(I_n)
    if I_n.shape != state.U.shape:
        raise ShapeError(f"input current shape {I_n.shape} != membrane shape {state.U.shape}")
    if not np.all(np.isfinite(I_n.data)):
        raise NumericError("non-finite input current")
    nd = state.U.ndim
    wn = _channel_view(w_norm_sq, nd)
    b = _channel_view(cfg.thresholds, nd)
    beta = as_tensor(cfg.effective_beta())

    s_prev = state.S_prev
    if cfg.reset_detach:
        s_prev = s_prev.detach()
    reset = (b * wn) * s_prev
    U = beta * (state.U - reset) + I_n
    S = spike_threshold(U / (wn + cfg.eps) - b, cfg.surrogate_a)
    return MembraneState(U, S), S


def nlif_step(state: MembraneState, I_n: Tensor, w_norm_sq, cfg: NeuronConfig):
    """Non-leaky step: :func:`lif_step` with the leak factor pinned to 1."""
    if cfg.mode != NLIF:
        cfg = NeuronConfig(beta=cfg.beta, thresholds=cfg.thresholds, eps=cfg.eps, mode=NLIF,
                           surrogate_a=cfg.surrogate_a, reset_detach=cfg.reset_detach)
    return lif_step(state, I_n, w_norm_sq, cfg)


def step(state, I_n, w_norm_sq, cfg: NeuronConfig):
    return (nlif_step if cfg.mode == NLIF else lif_step)(state, I_n, w_norm_sq, cfg)


def run_unrolled(I: Tensor, w_norm_sq, cfg: NeuronConfig) -> Tensor:
    """Run a ``[B, C, T, F]`` current through :func:`step`, one tape node per op."""
    B, C, T, F = I.shape
    state = MembraneState.zeros((B, C, F))
    spikes = []
    for n in range(T):
        I_n = _time_slice(I, n)
        state, S = step(state, I_n, w_norm_sq, cfg)
        spikes.append(S)
    return _stack_time(spikes)


def _time_slice(x: Tensor, n: int) -> Tensor:
    shape = x.shape

    def backward_fn(g):
        gx = np.zeros(shape, dtype=DTYPE)
        gx[:, :, n, :] = g
        return (gx,)

    return Tensor.from_op(np.ascontiguousarray(x.data[:, :, n, :]), (x,), backward_fn, "time_slice")


def _stack_time(xs) -> Tensor:
    return Tensor.from_op(np.stack([x.data for x in xs], axis=2), tuple(xs),
                          lambda g: tuple(np.ascontiguousarray(g[:, :, n, :])
                                          for n in range(len(xs))), "stack_time")


def lif_scan(I: Tensor, w_norm_sq, cfg: NeuronConfig, backend=None, return_potential=False):
    """Whole-sequence LIF/NLIF recurrence as one tape node.

    ``I`` is ``[B, C, T, F]``; returns the spike train with the same shape
    (and the potentials, if ``return_potential``). Gradients flow to ``I``,
    ``w_norm_sq``, the thresholds and (in LIF mode) ``beta`` when those are
    tensors requiring grad.
    """
    if I.ndim != 4:
        raise ShapeError(f"expected a [B, C, T, F] current, got {I.shape}")
    if not np.all(np.isfinite(I.data)):
        raise NumericError("non-finite input current")
    C = I.shape[1]
    impl = kernels.get_backend(backend)
    wn = as_tensor(w_norm_sq)
    th = as_tensor(cfg.thresholds)
    if th.size == 1 and C > 1:
        th_vals = np.full(C, th.data.reshape(-1)[0], dtype=DTYPE)
    else:
        th_vals = th.data.reshape(C)
    wn_vals = np.broadcast_to(wn.data.reshape(-1), (C,)) if wn.size == 1 else wn.data.reshape(C)
    leaky = cfg.mode == LIF
    beta = as_tensor(cfg.beta) if leaky else Tensor(1.0)
    beta_val = float(beta.data.reshape(-1)[0])

    S, U = impl.lif_scan_forward(I.data, beta_val, th_vals, wn_vals, cfg.eps)

    def backward_fn(g):
        gI, g_beta, g_th, g_wn = impl.lif_scan_backward(
            g, U, S, beta_val, th_vals, wn_vals, cfg.eps, cfg.surrogate_a, cfg.reset_detach)
        gb = np.full(beta.shape, g_beta, dtype=DTYPE) if leaky else None
        gt = g_th.astype(DTYPE)
        gt = np.asarray(gt.sum(), dtype=DTYPE).reshape(th.shape) if th.size == 1 else gt.reshape(th.shape)
        gw = g_wn.astype(DTYPE)
        gw = np.asarray(gw.sum(), dtype=DTYPE).reshape(wn.shape) if wn.size == 1 else gw.reshape(wn.shape)
        return gI, gb, gt, gw

    out = Tensor.from_op(S, (I, beta, th, wn), backward_fn, "lif_scan")
    if return_potential:
        return out, U
    return out
