"""Scalar phi-functions of exponential integrators.

``phi_k(z) = integral_0^1 exp(z (1 - t)) t^(k-1) / (k-1)! dt`` for k >= 1 and
``phi_0(z) = exp(z)``. Evaluation switches to a truncated Taylor series near
zero, where the forward recursion ``phi_{k+1} = (phi_k - 1/k!) / z`` cancels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from ._backend import kernels
from .errors import DomainError, UnsupportedOrderError

MAX_ORDER = 12


@dataclass(frozen=True)
class PhiTable:
    z: float
    values: tuple[float, ...]

    @property
    def max_order(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k: int) -> float:
        return self.values[k]


def _check(k: int, z: float) -> float:
    if isinstance(k, bool) or int(k) != k or k < 0:
        raise UnsupportedOrderError(f"phi order must be a non-negative integer, got {k!r}")
    if k > MAX_ORDER:
        raise UnsupportedOrderError(f"phi order {k} exceeds the supported ceiling {MAX_ORDER}")
    z = float(z)
    if not math.isfinite(z):
        raise DomainError(f"phi argument must be finite, got {z}")
    return z


def phi(k: int, z: float) -> float:
    """Evaluate ``phi_k(z)``.

    Absolute error is below 1e-14 (relative to ``max(1, |phi_k(z)|)``) for
    every finite ``z`` and ``0 <= k <= 12``.

    >>> phi(2, 0.0)
    0.5
    """
    z = _check(k, z)
    return kernels.phi(int(k), z)


def phi_table(q: int, z: float) -> PhiTable:
    """Evaluate ``phi_0(z), ..., phi_q(z)`` in one pass.

    Each entry is bitwise identical to the corresponding ``phi(k, z)``.
    """
    z = _check(q, z)
    return PhiTable(z, tuple(kernels.phi_table(int(q), z)))
