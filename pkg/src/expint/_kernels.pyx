# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Mirrors ``_kernels_py`` operation for operation."""
from libc.math cimport exp, log, fabs, M_PI

import numpy as np

MAX_ORDER = 12

EXPEULER, RES2, DPMPP2, RES3, DPMPP3 = range(5)

cdef double _INV_FACT[14]
cdef int _i
cdef double _f = 1.0
for _i in range(14):
    if _i > 0:
        _f *= _i
    _INV_FACT[_i] = 1.0 / _f


cdef inline double _radius(int k) nogil:
    if k <= 3:
        return 0.5
    return 0.75 * k


def taylor_radius(int k):
    return _radius(k)


cdef double _series(int k, double z) nogil:
    cdef double term = _INV_FACT[k]
    cdef double total = term
    cdef int j = 0
    while j < 80:
        j += 1
        term *= z / (k + j)
        total += term
        if fabs(term) <= 1e-17 * fabs(total):
            break
    return total


cdef double _phi(int k, double z) nogil:
    cdef double p
    cdef int j
    if k == 0:
        return exp(z)
    if fabs(z) < _radius(k):
        return _series(k, z)
    p = exp(z)
    for j in range(k):
        p = (p - _INV_FACT[j]) / z
    return p


cdef void _phi_fill(int q, double z, double* out) nogil:
    cdef double az = fabs(z)
    cdef double p = exp(z)
    cdef bint chain = True
    cdef int k
    out[0] = p
    for k in range(1, q + 1):
        if chain and az >= _radius(k):
            p = (p - _INV_FACT[k - 1]) / z
            out[k] = p
        else:
            chain = False
            out[k] = _series(k, z)


def phi(int k, double z):
    return _phi(k, z)


def phi_table(int q, double z):
    cdef double buf[13]
    _phi_fill(q, z, buf)
    return [buf[k] for k in range(q + 1)]


def exp_coefficients(int code, double c2, double c3, double gamma, double h):
    """Return ``(a21, a31, a32, b1, b2, b3)`` for an exponential scheme at step ``h``."""
    cdef double ph[3]
    cdef double p2s[3]
    cdef double p3s[3]
    cdef double a21, a31, a32, b1, b2, b3, denom
    _phi_fill(2, -h, ph)
    if code == 0:
        return 0.0, 0.0, 0.0, ph[1], 0.0, 0.0
    _phi_fill(2, -c2 * h, p2s)
    a21 = c2 * p2s[1]
    if code == 1:
        b2 = ph[2] / c2
        return a21, 0.0, 0.0, ph[1] - b2, b2, 0.0
    if code == 2:
        b2 = ph[1] / (2.0 * c2)
        return a21, 0.0, 0.0, (1.0 - 1.0 / (2.0 * c2)) * ph[1], b2, 0.0
    _phi_fill(2, -c3 * h, p3s)
    if code == 3:
        a32 = gamma * c2 * p2s[2] + (c3 * c3 / c2) * p3s[2]
        denom = gamma * c2 + c3
        b2 = gamma * ph[2] / denom
        b3 = ph[2] / denom
    else:
        a32 = (c3 * c3 / c2) * p3s[2]
        b2 = 0.0
        b3 = ph[2] / c3
    a31 = c3 * p3s[1] - a32
    return a21, a31, a32, ph[1] - b2 - b3, b2, b3


def mixture_denoise(const double[:, ::1] x, double sigma, const double[::1] log_weights,
                    const double[:, ::1] means, const double[::1] scales_sq):
    """Posterior-mean denoiser of an isotropic Gaussian mixture for a batch ``x`` of shape (B, d)."""
    cdef Py_ssize_t B = x.shape[0], d = x.shape[1], K = means.shape[0]
    cdef Py_ssize_t b, k, j
    cdef double s2 = sigma * sigma
    cdef double shrink, acc, diff, top, norm, w
    out_arr = np.empty((B, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    var_arr = np.empty(K, dtype=np.float64)
    logp_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] var = var_arr
    cdef double[::1] logp = logp_arr
    with nogil:
        for k in range(K):
            var[k] = scales_sq[k] + s2
        for b in range(B):
            top = -1e308
            for k in range(K):
                acc = 0.0
                for j in range(d):
                    diff = x[b, j] - means[k, j]
                    acc += diff * diff
                logp[k] = log_weights[k] - 0.5 * d * log(2.0 * M_PI * var[k]) - 0.5 * acc / var[k]
                if logp[k] > top:
                    top = logp[k]
            norm = 0.0
            for k in range(K):
                logp[k] = exp(logp[k] - top)
                norm += logp[k]
            shrink = 0.0
            for k in range(K):
                logp[k] /= norm
                shrink += logp[k] * scales_sq[k] / var[k]
            for j in range(d):
                acc = 0.0
                for k in range(K):
                    acc += logp[k] * means[k, j] / var[k]
                out[b, j] = shrink * x[b, j] + s2 * acc
    return out_arr
