import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expint import (
    GaussianMixture,
    ManufacturedOracle,
    cfg_combine,
    classifier_guided,
    constant_denoiser,
    default_mixture,
    eps_from_denoiser,
    gaussian_denoiser,
    load_mixture_config,
    mixture_denoiser,
    sin_problem,
    solve,
    uniform_lambda_schedule,
)
from expint.denoisers import (
    FunctionDenoiser,
    ManufacturedProblem,
    manufactured_g,
    mixture_class_grad,
    parse_mixture_config,
)
from expint.errors import DomainError, UsageError


def fd_score(m, x, sigma, step=1e-4):
    """Central finite-difference gradient of the closed-form log density."""
    g = np.zeros_like(x)
    for j in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (m.log_density(x + e, sigma) - m.log_density(x - e, sigma)) / (2 * step)
    return g


def test_single_gaussian_closed_form(rng):
    mu, s = np.array([0.3, -1.0, 2.0]), 0.7
    d = gaussian_denoiser(mu, s)
    for sigma in (0.01, 1.0, 50.0):
        x = rng.normal(size=3) * 3
        assert np.allclose(d(x, sigma), (s * s * x + sigma * sigma * mu) / (s * s + sigma * sigma), rtol=1e-14)


def test_small_sigma_limit(rng):
    d = mixture_denoiser(default_mixture())
    x = rng.normal(size=8)
    assert np.allclose(d(x, 1e-7), x, atol=1e-12)


def test_symmetric_mixture_at_origin():
    mu = np.array([1.5, -0.5])
    m = GaussianMixture(np.array([0.5, 0.5]), np.stack([mu, -mu]), np.array([0.4, 0.4]))
    for sigma in (0.1, 1.0, 10.0):
        assert np.allclose(mixture_denoiser(m)(np.zeros(2), sigma), 0.0, atol=1e-15)


def test_tweedie_consistency():
    rng = np.random.default_rng(7)
    for trial in range(100):
        dim = int(rng.integers(1, 9))
        m = default_mixture(dim=dim, n_components=int(rng.integers(1, 5)), seed=trial)
        sigma = float(np.exp(rng.uniform(np.log(0.05), np.log(20.0))))
        x = rng.normal(scale=2.0 + sigma, size=dim)
        d = mixture_denoiser(m)(x, sigma)
        assert np.linalg.norm(d - x - sigma ** 2 * fd_score(m, x, sigma)) <= 1e-5 * (1 + np.linalg.norm(x))


def test_score_matches_finite_difference(rng):
    m = default_mixture()
    x = rng.normal(size=8)
    assert np.allclose(m.score(x, 0.8), fd_score(m, x, 0.8), atol=1e-7)


def test_no_overflow_at_large_scale():
    d = mixture_denoiser(default_mixture())
    x = np.full(8, 1e3)
    assert np.all(np.isfinite(d(x, 80.0)))
    assert np.all(np.isfinite(d(x, 0.002)))


def test_batch_equals_rows(rng):
    d = mixture_denoiser(default_mixture())
    xs = rng.normal(size=(5, 8)) * 4
    out = d(xs, 0.9)
    assert out.shape == xs.shape
    for row, o in zip(xs, out):
        assert np.allclose(d(row, 0.9), o, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("sigma", [0.0, -1.0, math.inf, math.nan])
def test_sigma_domain(sigma):
    d = mixture_denoiser(default_mixture())
    with pytest.raises(DomainError):
        d(np.zeros(8), sigma)
    with pytest.raises(DomainError):
        eps_from_denoiser(d)(np.zeros(8), sigma)


def test_dimension_check():
    with pytest.raises(UsageError):
        mixture_denoiser(default_mixture())(np.zeros(3), 1.0)


def test_mixture_validation():
    with pytest.raises(DomainError):
        GaussianMixture(np.array([0.5, 0.6]), np.zeros((2, 2)), np.ones(2))
    with pytest.raises(DomainError):
        GaussianMixture(np.array([0.5, 0.5]), np.zeros((2, 2)), np.array([1.0, 0.0]))
    with pytest.raises(UsageError):
        GaussianMixture(np.array([1.0]), np.zeros((2, 2)), np.ones(1))


def test_counter_once_per_call(rng):
    d = mixture_denoiser(default_mixture())
    d(rng.normal(size=8), 1.0)
    d(rng.normal(size=(16, 8)), 1.0)
    assert d.nfe == 2
    d.reset_nfe()
    assert d.nfe == 0


def test_counter_under_threads():
    d = constant_denoiser(0.0, 2)

    def work():
        for _ in range(500):
            d(np.zeros(2), 1.0)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert d.nfe == 4000


def test_eps_examples(rng):
    x = rng.normal(size=3)
    ident = eps_from_denoiser(FunctionDenoiser(lambda x, s: x, 3))
    zero = eps_from_denoiser(FunctionDenoiser(lambda x, s: np.zeros_like(x), 3))
    assert np.all(ident(x, 0.3) == 0.0)
    assert np.allclose(zero(x, 0.5), x / 0.5)


def test_eps_is_scaled_score(rng):
    m = default_mixture()
    x = rng.normal(size=8)
    assert np.allclose(eps_from_denoiser(mixture_denoiser(m))(x, 1.3), -1.3 * fd_score(m, x, 1.3), atol=1e-7)


@given(st.floats(0.01, 50.0), st.integers(0, 1000))
def test_eps_duality(sigma, seed):
    d = mixture_denoiser(default_mixture())
    eps = eps_from_denoiser(d)
    x = np.random.default_rng(seed).normal(scale=5.0, size=8)
    assert np.allclose(sigma * eps(x, sigma) + d(x, sigma), x, rtol=1e-13, atol=1e-12)


def test_eps_shares_counter():
    d = constant_denoiser(1.0, 2)
    e = eps_from_denoiser(d)
    e(np.zeros(2), 1.0)
    assert d.nfe == 1 and e.nfe == 1


def test_cfg_examples(rng):
    c = FunctionDenoiser(lambda x, s: 3.0 * x, 2)
    u = FunctionDenoiser(lambda x, s: 0.5 * x, 2)
    x = rng.normal(size=2)
    assert np.allclose(cfg_combine(c, u, 1.0)(x, 1.0), c(x, 1.0))
    assert np.allclose(cfg_combine(c, u, 0.0)(x, 1.0), u(x, 1.0))
    assert np.allclose(cfg_combine(c, u, 2.0)(x, 1.0), (2 * 3.0 - 0.5) * x)


def test_cfg_counts_two():
    c, u = constant_denoiser(1.0, 2), constant_denoiser(0.0, 2)
    g = cfg_combine(c, u, 1.5)
    for _ in range(3):
        g(np.zeros(2), 1.0)
    assert g.nfe == 6


def test_cfg_dimension_mismatch():
    with pytest.raises(UsageError):
        cfg_combine(constant_denoiser(0.0, 2), constant_denoiser(0.0, 3), 1.0)


def test_classifier_guidance_examples(rng):
    m = default_mixture()
    d = mixture_denoiser(m)
    x = rng.normal(size=8)
    assert np.array_equal(classifier_guided(d, mixture_class_grad(m, 0), 0.0)(x, 0.7), d(x, 0.7))
    single = GaussianMixture(np.ones(1), np.zeros((1, 8)), np.ones(1))
    ds = mixture_denoiser(single)
    assert np.allclose(classifier_guided(ds, mixture_class_grad(single, 0), 3.0)(x, 0.7), ds(x, 0.7), atol=1e-15)


def test_classifier_guidance_pulls_toward_component():
    mu = np.array([2.0, 0.0])
    m = GaussianMixture(np.array([0.5, 0.5]), np.stack([mu, -mu]), np.array([0.5, 0.5]))
    d = mixture_denoiser(m)
    guided = classifier_guided(d, mixture_class_grad(m, 0), 2.0)
    mid = np.zeros(2)
    # finite-difference oracle for grad log r_1 at the midpoint
    step = 1e-5
    fd = np.array([(np.log(m.responsibilities(mid + e, 1.0)[0]) - np.log(m.responsibilities(mid - e, 1.0)[0]))
                   / (2 * step) for e in np.eye(2) * step])
    assert np.allclose(mixture_class_grad(m, 0)(mid, 1.0), fd, atol=1e-8)
    assert np.dot(guided(mid, 1.0) - d(mid, 1.0), mu - (-mu)) > 0


def test_classifier_guidance_non_finite():
    d = constant_denoiser(0.0, 2)
    g = classifier_guided(d, lambda x, s: np.array([np.inf, 0.0]), 1.0)
    with pytest.raises(DomainError):
        g(np.zeros(2), 1.0)


def test_manufactured_decay():
    v = np.array([1.0, -2.0])
    g = manufactured_g(lambda lam: np.exp(-lam) * v, lambda lam: -np.exp(-lam) * v, 0.0)
    for lam in (0.0, 1.3, 4.0):
        assert np.allclose(g(np.zeros(2), lam), 0.0, atol=1e-15)


def test_manufactured_sin():
    p = sin_problem(dim=1)
    for lam in (0.0, 0.7, 3.0):
        assert p.g(np.array([5.0]), lam)[0] == pytest.approx(math.cos(lam) + math.sin(lam), rel=1e-14)


@given(st.floats(-5.0, 5.0), st.integers(0, 100))
def test_manufactured_trajectory_solves_ode(lam, seed):
    p = sin_problem(dim=4, seed=seed)
    x = p.exact(lam)
    assert np.allclose(p.exact_deriv(lam), -x + p.g(x, lam), atol=1e-12)


def test_manufactured_contractive():
    p = sin_problem(dim=1, stiffness=0.5)
    oracle = ManufacturedOracle(p, 0.0, 6.0)
    sched = uniform_lambda_schedule(oracle.sigma_min, oracle.sigma_max, 2001)
    run = solve(sched, "rk4", "logsnr", p.as_denoiser(), x0=p.exact(0.0) + 1.0)
    # deviation decays like exp((L - 1) lam)
    assert abs(run.x_final[0] - p.exact(6.0)[0]) == pytest.approx(math.exp(-0.5 * 6.0), rel=1e-6)


def test_as_denoiser_is_g():
    p = sin_problem(dim=4, seed=3)
    d = p.as_denoiser()
    x = np.arange(4.0)
    assert np.allclose(d(x, math.exp(-1.2)), p.g(x, 1.2), rtol=1e-14)


def test_config_round_trip(tmp_path):
    path = tmp_path / "mix.cfg"
    path.write_text("# toy\nweights = 0.25, 0.75\nmeans = 0 1 ; 2 -1\nscales = 0.5 0.3\n")
    m = load_mixture_config(path)
    assert m.n_components == 2 and m.dim == 2
    assert np.allclose(m.means, [[0, 1], [2, -1]])


@pytest.mark.parametrize("text", [
    "weights = 1\nmeans = 0 0\n",
    "weights = 1\nmeans = 0\nscales = 1\ncolour = red\n",
    "weights = a\nmeans = 0\nscales = 1\n",
    "weights = 0.5 0.5\nmeans = 0 0 ; 1\nscales = 1 1\n",
    "weights 1\n",
])
def test_config_errors(text):
    with pytest.raises(UsageError):
        parse_mixture_config(text)


def test_default_mixture_is_seeded():
    a, b = default_mixture(seed=4), default_mixture(seed=4)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.weights, b.weights)
    assert a.dim == 8 and a.n_components == 4


def test_sampling_moments():
    m = default_mixture()
    xs = m.sample(np.random.default_rng(0), 200_000)
    assert np.allclose(xs.mean(axis=0), m.weights @ m.means, atol=0.03)
    assert np.mean(xs.var(axis=0)) == pytest.approx(m.data_variance(), rel=0.02)


def test_manufactured_problem_shapes():
    p = ManufacturedProblem(np.ones(2), np.ones(2), np.zeros(2), np.zeros(2))
    assert p.dim == 2 and p.exact(0.0).shape == (2,)
