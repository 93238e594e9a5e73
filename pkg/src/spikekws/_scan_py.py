"""Pure-NumPy LIF scan kernels (fallback for the compiled ``_scan`` module).

Layout is ``[batch, channel, time, freq]``. The forward pass performs the
same float32 operations, in the same order, as the tape-level ``lif_step``,
so both routes produce bit-identical spikes and potentials.
"""

import numpy as np

from .tensor import surrogate_factor


def lif_scan_forward(I, beta, thresh, wnorm, eps):
    I = np.ascontiguousarray(I, dtype=np.float32)
    B, C, T, F = I.shape
    beta = np.float32(beta)
    th = np.asarray(thresh, dtype=np.float32).reshape(1, C, 1)
    wn = np.asarray(wnorm, dtype=np.float32).reshape(1, C, 1)
    reset_amp = th * wn
    den = wn + np.float32(eps)

    S = np.empty_like(I)
    U = np.empty_like(I)
    u = np.zeros((B, C, F), dtype=np.float32)
    s = np.zeros((B, C, F), dtype=np.float32)
    for n in range(T):
        u = beta * (u - reset_amp * s) + I[:, :, n, :]
        s = (u / den - th > 0).astype(np.float32)
        U[:, :, n, :] = u
        S[:, :, n, :] = s
    return S, U


def lif_scan_backward(gS, U, S, beta, thresh, wnorm, eps, scale_a, reset_detach):
    """Backpropagation through time for :func:`lif_scan_forward`.

    Returns ``(gI, g_beta, g_thresh, g_wnorm)``; the chain runs in float64.
    """
    B, C, T, F = U.shape
    beta32 = np.float32(beta)
    beta64 = float(beta32)
    th32 = np.asarray(thresh, dtype=np.float32).reshape(1, C, 1)
    wn32 = np.asarray(wnorm, dtype=np.float32).reshape(1, C, 1)
    reset_amp32 = th32 * wn32
    den32 = wn32 + np.float32(eps)
    th = th32.astype(np.float64)
    wn = wn32.astype(np.float64)
    reset_amp = reset_amp32.astype(np.float64)
    den = den32.astype(np.float64)

    gI = np.empty(U.shape, dtype=np.float32)
    g_beta = 0.0
    g_th = np.zeros((1, C, 1))
    g_wn = np.zeros((1, C, 1))
    gU_next = np.zeros((B, C, F))
    zeros = np.zeros((B, C, F), dtype=np.float32)

    for n in range(T - 1, -1, -1):
        u = U[:, :, n, :]
        g_s = gS[:, :, n, :].astype(np.float64)
        if not reset_detach:
            g_s = g_s - beta64 * reset_amp * gU_next
        v = u / den32 - th32
        g_v = g_s * surrogate_factor(v, scale_a)
        g_u = beta64 * gU_next + g_v / den
        gI[:, :, n, :] = g_u

        u_prev = U[:, :, n - 1, :] if n > 0 else zeros
        s_prev = S[:, :, n - 1, :] if n > 0 else zeros
        pre = u_prev - reset_amp32 * s_prev
        g_beta += float(np.sum(g_u * pre))
        g_reset = -beta64 * g_u * s_prev
        g_th += np.sum(-g_v + g_reset * wn, axis=(0, 2), keepdims=True)
        g_wn += np.sum(g_reset * th - g_v * u / (den * den), axis=(0, 2), keepdims=True)
        gU_next = g_u

    return gI, g_beta, g_th.reshape(C), g_wn.reshape(C)
