"""Pure-Python/numpy twins of the compiled routines in ``_kernels.pyx``."""

from __future__ import annotations

import math

import numpy as np

TRIWEIGHT = 0
GAUSSIAN = 1

_TRI_C = 35.0 / 32.0
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# rows of the query x sample matrix evaluated per chunk
_CHUNK = 256


def kernel_sums(sample, y, sigma, kind):
    """Density and its first two derivatives at ``y`` (sample sorted, as the compiled twin requires)."""
    sample = np.ascontiguousarray(sample, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    m = sample.shape[0]
    f = np.empty(y.shape[0])
    f1 = np.empty(y.shape[0])
    f2 = np.empty(y.shape[0])
    for start in range(0, y.shape[0], _CHUNK):
        stop = start + _CHUNK
        u = (y[start:stop, None] - sample[None, :]) / sigma
        if kind == TRIWEIGHT:
            w = np.where(np.abs(u) < 1.0, 1.0 - u * u, 0.0)
            k0 = _TRI_C * w**3
            k1 = -6.0 * _TRI_C * u * w * w
            k2 = -6.0 * _TRI_C * w * (1.0 - 5.0 * u * u)
        else:
            k0 = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
            k1 = -u * k0
            k2 = (u * u - 1.0) * k0
        f[start:stop] = k0.sum(axis=1)
        f1[start:stop] = k1.sum(axis=1)
        f2[start:stop] = k2.sum(axis=1)
    norm = 1.0 / (m * sigma)
    return f * norm, f1 * (norm / sigma), f2 * (norm / sigma / sigma)


def efron_sequence(u, pi, coin_p):
    out = np.zeros(len(u), dtype=np.int8)
    n_treated = 0
    for i, draw in enumerate(u):
        d = n_treated - pi * i
        if abs(d) < 1e-9:
            p = pi
        elif d > 0:
            p = 1.0 - coin_p
        else:
            p = coin_p
        if draw < p:
            out[i] = 1
            n_treated += 1
    return out


def minimization_sequence(codes, n_levels, weights, u, pi, coin_p):
    codes = np.asarray(codes)
    n, n_cov = codes.shape
    counts = [np.zeros((int(levels), 2)) for levels in n_levels]
    out = np.zeros(n, dtype=np.int8)
    for i in range(n):
        imb_t = 0.0
        imb_c = 0.0
        for j in range(n_cov):
            t, ctl = counts[j][codes[i, j], 1], counts[j][codes[i, j], 0]
            imb_t += weights[j] * abs((t + 1.0) / pi - ctl / (1.0 - pi))
            imb_c += weights[j] * abs(t / pi - (ctl + 1.0) / (1.0 - pi))
        if abs(imb_t - imb_c) < 1e-12:
            p = pi
        elif imb_t < imb_c:
            p = coin_p
        else:
            p = 1.0 - coin_p
        if u[i] < p:
            out[i] = 1
        for j in range(n_cov):
            counts[j][codes[i, j], out[i]] += 1.0
    return out
