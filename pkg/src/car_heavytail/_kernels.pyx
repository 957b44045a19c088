# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: kernel sums and sequential allocation rules.

Every function here has a drop-in twin in ``_kernels_py``; the two must agree
to floating-point rounding (kernel sums) or exactly (allocation sequences).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, M_PI

cnp.import_array()

cdef enum:
    TRIWEIGHT = 0
    GAUSSIAN = 1

cdef double TRI_C = 35.0 / 32.0
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * M_PI)


cdef inline Py_ssize_t _lower_bound(const double[::1] xs, double v) nogil:
    cdef Py_ssize_t lo = 0, hi = xs.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if xs[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def kernel_sums(const double[::1] sample, const double[::1] y, double sigma, int kind):
    """Density and its first two derivatives at ``y``; ``sample`` must be sorted ascending."""
    cdef Py_ssize_t m = sample.shape[0], q = y.shape[0]
    cdef Py_ssize_t i, j, lo
    cdef double yi, u, w, k, s0, s1, s2
    cdef double inv_s = 1.0 / sigma
    f_arr = np.empty(q, dtype=np.float64)
    f1_arr = np.empty(q, dtype=np.float64)
    f2_arr = np.empty(q, dtype=np.float64)
    cdef double[::1] f = f_arr
    cdef double[::1] f1 = f1_arr
    cdef double[::1] f2 = f2_arr
    cdef double n0 = 1.0 / (m * sigma)
    cdef double n1 = n0 * inv_s
    cdef double n2 = n1 * inv_s
    with nogil:
        for i in range(q):
            yi = y[i]
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            if kind == TRIWEIGHT:
                # sample is sorted: only points with |y - x| < sigma contribute
                lo = _lower_bound(sample, yi - sigma)
                j = lo
                while j < m and sample[j] <= yi + sigma:
                    u = (yi - sample[j]) * inv_s
                    w = 1.0 - u * u
                    if w > 0.0:
                        s0 += TRI_C * w * w * w
                        s1 += -6.0 * TRI_C * u * w * w
                        s2 += -6.0 * TRI_C * w * (1.0 - 5.0 * u * u)
                    j += 1
            else:
                for j in range(m):
                    u = (yi - sample[j]) * inv_s
                    k = INV_SQRT_2PI * exp(-0.5 * u * u)
                    s0 += k
                    s1 += -u * k
                    s2 += (u * u - 1.0) * k
            f[i] = s0 * n0
            f1[i] = s1 * n1
            f2[i] = s2 * n2
    return f_arr, f1_arr, f2_arr


def efron_sequence(const double[::1] u, double pi, double coin_p):
    cdef Py_ssize_t n = u.shape[0], i
    cdef double n_treated = 0.0, d, p
    out_arr = np.zeros(n, dtype=np.int8)
    cdef cnp.int8_t[::1] out = out_arr
    for i in range(n):
        d = n_treated - pi * i
        if fabs(d) < 1e-9:
            p = pi
        elif d > 0.0:
            p = 1.0 - coin_p
        else:
            p = coin_p
        if u[i] < p:
            out[i] = 1
            n_treated += 1.0
    return out_arr


def minimization_sequence(const cnp.int64_t[:, ::1] codes, const cnp.int64_t[::1] n_levels,
                          const double[::1] weights, const double[::1] u,
                          double pi, double coin_p):
    cdef Py_ssize_t n = codes.shape[0], n_cov = codes.shape[1]
    cdef Py_ssize_t i, j, c, max_levels = 0
    cdef double imb_t, imb_c, t, ctl, p
    for j in range(n_cov):
        if n_levels[j] > max_levels:
            max_levels = n_levels[j]
    counts_arr = np.zeros((n_cov, max_levels, 2), dtype=np.float64)
    cdef double[:, :, ::1] counts = counts_arr
    out_arr = np.zeros(n, dtype=np.int8)
    cdef cnp.int8_t[::1] out = out_arr
    cdef double inv_pi = 1.0 / pi, inv_qi = 1.0 / (1.0 - pi)
    for i in range(n):
        imb_t = 0.0
        imb_c = 0.0
        for j in range(n_cov):
            c = codes[i, j]
            t = counts[j, c, 1]
            ctl = counts[j, c, 0]
            imb_t += weights[j] * fabs((t + 1.0) * inv_pi - ctl * inv_qi)
            imb_c += weights[j] * fabs(t * inv_pi - (ctl + 1.0) * inv_qi)
        if fabs(imb_t - imb_c) < 1e-12:
            p = pi
        elif imb_t < imb_c:
            p = coin_p
        else:
            p = 1.0 - coin_p
        if u[i] < p:
            out[i] = 1
        for j in range(n_cov):
            counts[j, codes[i, j], out[i]] += 1.0
    return out_arr
