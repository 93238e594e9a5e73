# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LIF scan kernels.

Mirrors ``_scan_py`` operation for operation. Forward arithmetic stays in
float32 (compiled without FMA contraction) so spikes are bit-identical to
the NumPy route; the backward chain runs in double.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()

cdef double CLAMP = 30.0


cdef inline double surrogate(float v, double a) nogil:
    cdef double z = a * <double>v
    if z > CLAMP:
        z = CLAMP
    elif z < -CLAMP:
        z = -CLAMP
    cdef double e = exp(-fabs(z))
    return a * e / ((1.0 + e) * (1.0 + e))


def lif_scan_forward(I, beta, thresh, wnorm, eps):
    cdef const float[:, :, :, ::1] Iv = np.ascontiguousarray(I, dtype=np.float32)
    cdef Py_ssize_t B = Iv.shape[0], C = Iv.shape[1], T = Iv.shape[2], F = Iv.shape[3]
    S_arr = np.empty((B, C, T, F), dtype=np.float32)
    U_arr = np.empty((B, C, T, F), dtype=np.float32)
    cdef float[:, :, :, ::1] Sv = S_arr
    cdef float[:, :, :, ::1] Uv = U_arr
    cdef const float[::1] th = np.ascontiguousarray(thresh, dtype=np.float32).reshape(C)
    cdef const float[::1] wn = np.ascontiguousarray(wnorm, dtype=np.float32).reshape(C)
    cdef float b = <float>beta
    cdef float e32 = <float>eps
    cdef float[::1] u = np.zeros(F, dtype=np.float32)
    cdef float[::1] s = np.zeros(F, dtype=np.float32)
    cdef Py_ssize_t i, c, n, f
    cdef float reset_amp, den, thc, x

    with nogil:
        for i in range(B):
            for c in range(C):
                thc = th[c]
                reset_amp = thc * wn[c]
                den = wn[c] + e32
                for f in range(F):
                    u[f] = 0.0
                    s[f] = 0.0
                for n in range(T):
                    for f in range(F):
                        x = u[f] - reset_amp * s[f]
                        x = b * x
                        x = x + Iv[i, c, n, f]
                        u[f] = x
                        s[f] = 1.0 if (x / den - thc) > 0 else 0.0
                        Uv[i, c, n, f] = x
                        Sv[i, c, n, f] = s[f]
    return S_arr, U_arr


def lif_scan_backward(gS, U, S, beta, thresh, wnorm, eps, double scale_a, bint reset_detach):
    cdef const float[:, :, :, ::1] gSv = np.ascontiguousarray(gS, dtype=np.float32)
    cdef const float[:, :, :, ::1] Uv = np.ascontiguousarray(U, dtype=np.float32)
    cdef const float[:, :, :, ::1] Sv = np.ascontiguousarray(S, dtype=np.float32)
    cdef Py_ssize_t B = Uv.shape[0], C = Uv.shape[1], T = Uv.shape[2], F = Uv.shape[3]
    gI_arr = np.empty((B, C, T, F), dtype=np.float32)
    cdef float[:, :, :, ::1] gIv = gI_arr
    cdef const float[::1] th = np.ascontiguousarray(thresh, dtype=np.float32).reshape(C)
    cdef const float[::1] wn = np.ascontiguousarray(wnorm, dtype=np.float32).reshape(C)
    g_th_arr = np.zeros(C, dtype=np.float64)
    g_wn_arr = np.zeros(C, dtype=np.float64)
    cdef double[::1] g_th = g_th_arr
    cdef double[::1] g_wn = g_wn_arr
    cdef double[::1] gnext = np.zeros(F, dtype=np.float64)

    cdef float b32 = <float>beta
    cdef double b64 = <double>b32
    cdef float e32 = <float>eps
    cdef float reset32, den32, thc32, v, pre32, uprev, sprev
    cdef double reset64, den64, th64, wn64, gs, gv, gu, greset
    cdef double g_beta = 0.0
    cdef Py_ssize_t i, c, n, f

    with nogil:
        for i in range(B):
            for c in range(C):
                thc32 = th[c]
                reset32 = thc32 * wn[c]
                den32 = wn[c] + e32
                th64 = <double>thc32
                wn64 = <double>wn[c]
                reset64 = <double>reset32
                den64 = <double>den32
                for f in range(F):
                    gnext[f] = 0.0
                for n in range(T - 1, -1, -1):
                    for f in range(F):
                        gs = <double>gSv[i, c, n, f]
                        if not reset_detach:
                            gs = gs - b64 * reset64 * gnext[f]
                        v = Uv[i, c, n, f] / den32 - thc32
                        gv = gs * surrogate(v, scale_a)
                        gu = b64 * gnext[f] + gv / den64
                        gIv[i, c, n, f] = <float>gu
                        if n > 0:
                            uprev = Uv[i, c, n - 1, f]
                            sprev = Sv[i, c, n - 1, f]
                        else:
                            uprev = 0.0
                            sprev = 0.0
                        pre32 = uprev - reset32 * sprev
                        g_beta += gu * <double>pre32
                        greset = -b64 * gu * <double>sprev
                        g_th[c] += -gv + greset * wn64
                        g_wn[c] += greset * th64 - gv * <double>Uv[i, c, n, f] / (den64 * den64)
                        gnext[f] = gu
    return gI_arr, g_beta, g_th_arr, g_wn_arr
