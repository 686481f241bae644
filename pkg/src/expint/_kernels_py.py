"""Pure-Python kernels. Same interface as the compiled ``_kernels`` module.

No argument validation happens here; callers in ``phi``, ``tableaus`` and
``denoisers`` check inputs before dispatching.
"""
import math

import numpy as np

MAX_ORDER = 12
_MAX_TERMS = 80
_INV_FACT = [1.0 / math.factorial(j) for j in range(MAX_ORDER + 2)]

EXPEULER, RES2, DPMPP2, RES3, DPMPP3 = range(5)


def taylor_radius(k):
    # forward recursion loses about k*log10(1/|z|) digits; widen the series
    # region with the order so both branches stay near machine precision
    return 0.5 if k <= 3 else 0.75 * k


def _series(k, z):
    term = _INV_FACT[k]
    total = term
    j = 0
    while j < _MAX_TERMS:
        j += 1
        term *= z / (k + j)
        total += term
        if abs(term) <= 1e-17 * abs(total):
            break
    return total


def phi(k, z):
    if k == 0:
        return math.exp(z)
    if abs(z) < taylor_radius(k):
        return _series(k, z)
    p = math.exp(z)
    for j in range(k):
        p = (p - _INV_FACT[j]) / z
    return p


def phi_table(q, z):
    az = abs(z)
    values = [0.0] * (q + 1)
    p = math.exp(z)
    values[0] = p
    chain = True
    for k in range(1, q + 1):
        if chain and az >= taylor_radius(k):
            p = (p - _INV_FACT[k - 1]) / z
            values[k] = p
        else:
            chain = False
            values[k] = _series(k, z)
    return values


def exp_coefficients(code, c2, c3, gamma, h):
    """Return ``(a21, a31, a32, b1, b2, b3)`` for an exponential scheme at step ``h``."""
    _, p1, p2 = phi_table(2, -h)
    if code == EXPEULER:
        return 0.0, 0.0, 0.0, p1, 0.0, 0.0
    _, p12, p22 = phi_table(2, -c2 * h)
    a21 = c2 * p12
    if code == RES2:
        b2 = p2 / c2
        return a21, 0.0, 0.0, p1 - b2, b2, 0.0
    if code == DPMPP2:
        b2 = p1 / (2.0 * c2)
        return a21, 0.0, 0.0, (1.0 - 1.0 / (2.0 * c2)) * p1, b2, 0.0
    _, p13, p23 = phi_table(2, -c3 * h)
    if code == RES3:
        a32 = gamma * c2 * p22 + (c3 * c3 / c2) * p23
        denom = gamma * c2 + c3
        b2 = gamma * p2 / denom
        b3 = p2 / denom
    else:
        a32 = (c3 * c3 / c2) * p23
        b2 = 0.0
        b3 = p2 / c3
    a31 = c3 * p13 - a32
    return a21, a31, a32, p1 - b2 - b3, b2, b3


def mixture_denoise(x, sigma, log_weights, means, scales_sq):
    """Posterior-mean denoiser of an isotropic Gaussian mixture for a batch ``x`` of shape (B, d)."""
    s2 = sigma * sigma
    var = scales_sq + s2
    d = x.shape[1]
    diff = x[:, None, :] - means[None, :, :]
    logp = log_weights - 0.5 * d * np.log(2.0 * np.pi * var) - 0.5 * np.einsum("bkd,bkd->bk", diff, diff) / var
    logp -= logp.max(axis=1, keepdims=True)
    r = np.exp(logp)
    r /= r.sum(axis=1, keepdims=True)
    shrink = r @ (scales_sq / var)
    pull = (r / var) @ means
    return shrink[:, None] * x + s2 * pull
