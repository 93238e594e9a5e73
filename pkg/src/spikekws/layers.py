"""Spiking convolution, time-distributed readout, and the stacked network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, GeometryError, ShapeError
from .neuron import LIF, NLIF, NeuronConfig, lif_scan, run_unrolled
from .tensor import DTYPE, Tensor, matmul, square, tsum


# ---------------------------------------------------------------------------
# dilated convolution


def kernel_extent(k: int, d: int) -> int:
    return (k - 1) * d + 1


def _pads(k: int, d: int, causal: bool) -> Tuple[int, int]:
    total = (k - 1) * d
    if causal:
        return total, 0
    lo = total // 2
    return lo, total - lo


def conv2d(x: Tensor, w: Tensor, dilation=(1, 1), causal_time: bool = False) -> Tensor:
    """Stride-1 dilated 2-D convolution preserving the (time, freq) size.

    ``x`` is ``[B, C_in, T, F]`` and ``w`` is ``[C_out, C_in, H, W]``. Zero
    padding is split evenly (extra row at the end) unless ``causal_time``,
    which pads only the past along time.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} incompatible with kernel {w.shape}")
    B, Cin, T, F = x.shape
    Cout, _, H, W = w.shape
    dh, dw = dilation
    pt = _pads(H, dh, causal_time)
    pf = _pads(W, dw, False)
    # channel-major layout so each tap is one (C_out x C_in) @ (C_in x BTF) product
    xp = np.pad(x.data.transpose(1, 0, 2, 3), ((0, 0), (0, 0), pt, pf))
    # contiguous per-tap weights; strided slices fall off the BLAS path
    wt = np.ascontiguousarray(w.data.transpose(2, 3, 0, 1))
    taps = [(i, j) for i in range(H) for j in range(W)]

    def tap_view(i, j):
        return xp[:, :, i * dh:i * dh + T, j * dw:j * dw + F].reshape(Cin, -1)

    out = np.zeros((Cout, B * T * F), dtype=DTYPE)
    for i, j in taps:
        out += wt[i, j] @ tap_view(i, j)
    out = np.ascontiguousarray(out.reshape(Cout, B, T, F).transpose(1, 0, 2, 3))

    def backward_fn(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(Cout, -1)
        gw = gx = None
        if w.requires_grad:
            gwt = np.empty_like(wt)
            for i, j in taps:
                gwt[i, j] = gt @ tap_view(i, j).T
            gw = np.ascontiguousarray(gwt.transpose(2, 3, 0, 1))
        if x.requires_grad:
            wtt = np.ascontiguousarray(wt.transpose(0, 1, 3, 2))
            gxp = np.zeros_like(xp)
            for i, j in taps:
                gxp[:, :, i * dh:i * dh + T, j * dw:j * dw + F] += (
                    wtt[i, j] @ gt).reshape(Cin, B, T, F)
            gx = np.ascontiguousarray(
                gxp[:, :, pt[0]:pt[0] + T, pf[0]:pf[0] + F].transpose(1, 0, 2, 3))
        return gx, gw

    return Tensor.from_op(out, (x, w), backward_fn, "conv2d")


def receptive_field(layers: Sequence[Tuple[int, int, int, int]]) -> Tuple[int, int]:
    """Receptive field (time, freq) of a stack of ``(H, W, d_H, d_W)`` convolutions."""
    if not layers:
        raise ValueError("receptive_field needs at least one layer")
    rt = rf = 1
    for h, w, dh, dw in layers:
        rt += (h - 1) * dh
        rf += (w - 1) * dw
    return rt, rf


# ---------------------------------------------------------------------------
# layers


@dataclass
class NeuronInit:
    threshold_mean: float = 1.0
    threshold_std: float = 0.01
    beta_mean: float = 0.7
    beta_std: float = 0.01


class SpikingConv2d:
    """Dilated convolution feeding a layer of LIF (or NLIF) neurons.

    The convolution is applied once to the whole input sequence; the
    membrane recurrence then runs over time. One leak factor per layer,
    one threshold per output channel. The spike rule compares
    ``U / (||W_c||^2 + eps)`` against the channel threshold.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel=(4, 3), dilation=(1, 1), *,
                 mode: str = LIF, surrogate_a: float = 10.0, eps: float = 1e-8,
                 causal: bool = False, reset_detach: bool = False, stop_grad_norm: bool = False,
                 freeze_beta: bool = False, freeze_threshold: bool = False,
                 init: Optional[NeuronInit] = None, rng=None, scan: str = "fused",
                 input_shape: Optional[Tuple[int, int]] = None, name: str = "conv"):
        rng = np.random.default_rng() if rng is None else rng
        init = init or NeuronInit()
        self.name = name
        self.kernel = tuple(kernel)
        self.dilation = tuple(dilation)
        self.causal = causal
        self.scan = scan
        self.stop_grad_norm = stop_grad_norm
        if input_shape is not None:
            self.check_geometry(input_shape)

        fan_in = in_channels * self.kernel[0] * self.kernel[1]
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (out_channels, in_channels) + self.kernel),
                             requires_grad=True, name=f"{name}.weight")
        th = np.maximum(rng.normal(init.threshold_mean, init.threshold_std, out_channels), 0.0)
        self.threshold = Tensor(th, requires_grad=not freeze_threshold, name=f"{name}.threshold")
        if mode == NLIF:
            self.beta = None
        else:
            beta = np.clip(rng.normal(init.beta_mean, init.beta_std, 1), 0.0, 1.0)
            self.beta = Tensor(beta, requires_grad=not freeze_beta, name=f"{name}.beta")
        self.neuron = NeuronConfig(beta=self.beta if self.beta is not None else 1.0,
                                   thresholds=self.threshold, eps=eps, mode=mode,
                                   surrogate_a=surrogate_a, reset_detach=reset_detach)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def check_geometry(self, input_shape) -> None:
        T, F = input_shape
        et = kernel_extent(self.kernel[0], self.dilation[0])
        ef = kernel_extent(self.kernel[1], self.dilation[1])
        if et > T or ef > F:
            raise GeometryError(f"{self.name}: dilated kernel extent {et}x{ef} exceeds "
                                f"input {T}x{F}")

    def parameters(self) -> List[Tensor]:
        return [p for p in (self.weight, self.beta, self.threshold) if p is not None]

    def w_norm_sq(self) -> Tensor:
        wn = tsum(square(self.weight), axis=(1, 2, 3))
        return wn.detach() if self.stop_grad_norm else wn

    def __call__(self, x: Tensor) -> Tensor:
        current = conv2d(x, self.weight, self.dilation, self.causal)
        wn = self.w_norm_sq()
        if self.scan == "unrolled":
            return run_unrolled(current, wn, self.neuron)
        return lif_scan(current, wn, self.neuron)


class SpikingDense:
    """Fully-connected spiking layer over ``[B, T, N_in]`` inputs.

    Implemented as a 1x1 convolution over a singleton frequency axis.
    """

    def __init__(self, in_features: int, out_features: int, **kwargs):
        self.conv = SpikingConv2d(in_features, out_features, kernel=(1, 1), **kwargs)

    def parameters(self):
        return self.conv.parameters()

    def __call__(self, x: Tensor) -> Tensor:
        B, T, N = x.shape
        s = self.conv(x.transpose(0, 2, 1).reshape(B, N, T, 1))
        return s.reshape(B, self.conv.out_channels, T).transpose(0, 2, 1)


def leaky_integrate(drive: Tensor, beta: Tensor) -> Tensor:
    """Non-firing integration ``u[t] = beta * u[t-1] + drive[t]`` along axis 1."""
    d = drive.data
    b = float(beta.data.reshape(-1)[0])
    u = np.empty_like(d)
    acc = np.zeros(d.shape[:1] + d.shape[2:], dtype=DTYPE)
    for t in range(d.shape[1]):
        acc = DTYPE(b) * acc + d[:, t]
        u[:, t] = acc

    def backward_fn(g):
        gd = np.empty_like(g)
        nxt = np.zeros(acc.shape, dtype=np.float64)
        gb = 0.0
        for t in range(d.shape[1] - 1, -1, -1):
            nxt = g[:, t] + b * nxt
            gd[:, t] = nxt
            if t > 0:
                gb += float(np.sum(nxt * u[:, t - 1]))
        return gd, np.full(beta.shape, gb, dtype=DTYPE)

    return Tensor.from_op(u, (drive, beta), backward_fn, "leaky_integrate")


class Readout:
    """Time-distributed affine readout with non-firing neurons.

    ``variant="mean"`` averages the per-step logits over time;
    ``variant="maxpot"`` leaky-integrates them and takes the maximum
    potential over time.
    """

    def __init__(self, in_features: int, n_classes: int = 12, *, variant: str = "mean",
                 rng=None, init: Optional[NeuronInit] = None, freeze_beta: bool = False,
                 name: str = "readout"):
        if variant not in ("mean", "maxpot"):
            raise ValueError(f"unknown readout variant {variant!r}")
        rng = np.random.default_rng() if rng is None else rng
        init = init or NeuronInit()
        bound = 1.0 / np.sqrt(in_features)
        self.variant = variant
        self.weight = Tensor(rng.uniform(-bound, bound, (n_classes, in_features)),
                             requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(n_classes), requires_grad=True, name=f"{name}.bias")
        self.beta = None
        if variant == "maxpot":
            beta = np.clip(rng.normal(init.beta_mean, init.beta_std, 1), 0.0, 1.0)
            self.beta = Tensor(beta, requires_grad=not freeze_beta, name=f"{name}.beta")

    def parameters(self) -> List[Tensor]:
        return [p for p in (self.weight, self.bias, self.beta) if p is not None]

    def step_logits(self, s: Tensor) -> Tensor:
        B, C, T, F = s.shape
        if C * F != self.weight.shape[1]:
            raise ShapeError(f"readout expects {self.weight.shape[1]} features per step, "
                             f"got {C}x{F}")
        flat = s.transpose(0, 2, 1, 3).reshape(B, T, C * F)
        return matmul(flat, self.weight.transpose()) + self.bias

    def __call__(self, s: Tensor) -> Tuple[Tensor, Tensor]:
        """Return ``(logits [B, K], per-step logits [B, T, K])``."""
        steps = self.step_logits(s)
        if self.variant == "maxpot":
            return leaky_integrate(steps, self.beta).max(axis=1), steps
        return steps.mean(axis=1), steps


# ---------------------------------------------------------------------------
# network


@dataclass
class ForwardResult:
    logits: Tensor
    spikes: List[Tensor]
    step_logits: Tensor

    def spike_rates(self) -> List[float]:
        return [float(np.mean(s.data, dtype=np.float64)) for s in self.spikes]


class SpikingNet:
    """Stacked spiking convolutions followed by a readout."""

    def __init__(self, convs: List[SpikingConv2d], readout: Readout):
        self.convs = convs
        self.readout = readout

    def __call__(self, x) -> ForwardResult:
        h = x if isinstance(x, Tensor) else Tensor(x)
        spikes = []
        for conv in self.convs:
            h = conv(h)
            spikes.append(h)
        logits, steps = self.readout(h)
        return ForwardResult(logits, spikes, steps)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for layer in self.convs + [self.readout]:
            out.extend((p.name, p) for p in layer.parameters())
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> List[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise CheckpointError(f"parameter set disagrees with model: missing={missing} "
                                  f"unexpected={extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=DTYPE)
            if arr.shape != p.shape:
                raise CheckpointError(f"tensor {name!r}: shape {arr.shape} != model {p.shape}")
            p.data = arr.copy()


def count_parameters(model) -> int:
    """Number of trainable scalars (weights, biases, thresholds, leak factors)."""
    params = model.trainable() if hasattr(model, "trainable") else [
        p for p in model.parameters() if p.requires_grad]
    return int(sum(p.size for p in params))
