import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expint import phi, phi_table
from expint.errors import DomainError, UnsupportedOrderError
from expint.phi import MAX_ORDER

mp.mp.dps = 40


def phi_mp(k, z):
    """phi_k(z) from its integral definition at 40 digits."""
    z = mp.mpf(z)
    if k == 0:
        return mp.e ** z
    return mp.quad(lambda t: mp.e ** (z * (1 - t)) * t ** (k - 1) / mp.factorial(k - 1), [0, 1])


def simpson_phi(k, z, panels=100_000):
    t = np.linspace(0.0, 1.0, 2 * panels + 1)
    f = np.exp(z * (1 - t)) * t ** (k - 1) / math.factorial(k - 1)
    w = np.ones_like(t)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return float(np.sum(w * f) / (6 * panels))


@pytest.mark.parametrize("k, z, expected", [
    (0, 0.0, 1.0),
    (1, 0.0, 1.0),
    (2, 0.0, 0.5),
    (1, -1.0, 0.6321205588285577),
    # (e^-2 + 1) / 4, frozen from a 40-digit quadrature
    (2, -2.0, 0.28383382080915317),
    (2, -1.0, 0.36787944117144233),
    (3, -5.0, 0.06794609642400732),
    (1, -50.0, 0.02),
    (2, 1.0, 0.7182818284590452),
    (4, -0.3, 0.039286503915785934),
])
def test_frozen_values(k, z, expected):
    assert phi(k, z) == pytest.approx(expected, rel=1e-14, abs=1e-15)


@pytest.mark.parametrize("k", range(0, MAX_ORDER + 1))
@pytest.mark.parametrize("z", [-50.0, -5.0, -1.0, -0.6, -0.5, -0.49, -1e-3, -1e-9, 0.0, 1e-9, 0.3, 0.7, 1.0, 3.0])
def test_against_high_precision(k, z):
    exact = float(phi_mp(k, z))
    assert abs(phi(k, z) - exact) <= 1e-14 * max(1.0, abs(exact))


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("h", [0.1, 1.0, 5.0])
def test_simpson_quadrature(k, h):
    assert abs(phi(k, -h) - simpson_phi(k, -h)) <= 1e-9


@given(
    z=st.one_of(st.floats(-50.0, -1e-8), st.floats(1e-8, 1.0)),
    k=st.integers(1, 6),
)
def test_recursion_identity(z, k):
    lhs = phi(k + 1, z) * z - phi(k, z) + 1.0 / math.factorial(k)
    assert abs(lhs) <= 1e-12 * max(1.0, abs(phi(k, z)))


@pytest.mark.parametrize("k", range(0, 8))
@pytest.mark.parametrize("z", [1e-13, -1e-13])
def test_small_argument_continuity(k, z):
    assert abs(phi(k, z) - 1.0 / math.factorial(k)) <= 1e-10


@given(st.floats(1e-6, 200.0))
def test_phi1_between_zero_and_one(h):
    assert 0.0 < phi(1, -h) < 1.0


@given(st.floats(-60.0, 5.0), st.integers(0, MAX_ORDER))
def test_table_matches_scalar(z, q):
    tab = phi_table(q, z)
    assert tab.max_order == q
    assert tab.values == tuple(phi(k, z) for k in range(q + 1))


def test_table_at_zero_is_inverse_factorials():
    assert phi_table(5, 0.0).values == tuple(1.0 / math.factorial(k) for k in range(6))


def test_table_examples():
    assert phi_table(2, 0.0).values == (1.0, 1.0, 0.5)
    tab = phi_table(1, -1.0)
    assert tab[0] == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert tab[1] == pytest.approx(1 - math.exp(-1.0), rel=1e-15)


def test_table_small_argument_matches_taylor():
    z = -0.001
    taylor = [sum(z ** j / math.factorial(j + k) for j in range(20)) for k in range(4)]
    assert np.allclose(phi_table(3, z).values, taylor, rtol=1e-14, atol=0)


@given(st.floats(-50.0, 1.0).filter(lambda z: z != 0.0), st.integers(1, 8))
def test_table_recursion_invariant(z, q):
    v = phi_table(q, z).values
    for k in range(1, q + 1):
        resid = z * v[k] - v[k - 1] + 1.0 / math.factorial(k - 1)
        assert abs(resid) <= 1e-12 * max(abs(v[k - 1]), 1.0)


@given(st.one_of(st.floats(-50.0, -0.5), st.floats(0.5, 1.0)), st.integers(1, 8))
def test_table_recursion_divided_form(z, q):
    # dividing by z amplifies rounding in v[k-1] by 1/|z|, so only away from zero
    v = phi_table(q, z).values
    for k in range(1, q + 1):
        rec = (v[k - 1] - 1.0 / math.factorial(k - 1)) / z
        assert abs(v[k] - rec) <= 1e-12 * max(abs(v[k]), 1.0)


@pytest.mark.parametrize("z", [math.nan, math.inf, -math.inf])
def test_non_finite_argument(z):
    with pytest.raises(DomainError):
        phi(1, z)
    with pytest.raises(DomainError):
        phi_table(2, z)


@pytest.mark.parametrize("k", [-1, MAX_ORDER + 1, 2.5])
def test_bad_order(k):
    with pytest.raises(UnsupportedOrderError):
        phi(k, -1.0)
