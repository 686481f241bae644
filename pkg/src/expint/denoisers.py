"""Evaluable denoisers: analytic ground-truth models and guidance combinators.

Every model counts its evaluations; the count is the number of function
evaluations (NFE) a sampler spent. Wrappers delegate counting to the models
they wrap, so an eps-view costs one NFE per call and classifier-free
guidance costs two.
"""
from __future__ import annotations

import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._backend import kernels
from .errors import DomainError, UsageError


def _sigma(sigma) -> float:
    sigma = float(sigma)
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise DomainError(f"noise level must be positive and finite, got {sigma}")
    return sigma


class DenoiserModel(ABC):
    """Callable ``(x, sigma) -> D(x, sigma)`` for x of shape (d,) or (batch, d)."""

    dim: int

    @abstractmethod
    def __call__(self, x, sigma) -> np.ndarray: ...

    @property
    @abstractmethod
    def nfe(self) -> int: ...

    @abstractmethod
    def reset_nfe(self) -> None: ...


class Denoiser(DenoiserModel):
    """Base for models that own an evaluation counter.

    Subclasses implement ``_denoise``. The counter is guarded by a lock so
    concurrent trajectory solves sharing one model tally exactly.
    """

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._nfe = 0
        self._lock = threading.Lock()

    def __call__(self, x, sigma):
        sigma = _sigma(sigma)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise UsageError(f"expected last dimension {self.dim}, got shape {x.shape}")
        out = self._denoise(x, sigma)
        with self._lock:
            self._nfe += 1
        return out

    @abstractmethod
    def _denoise(self, x: np.ndarray, sigma: float) -> np.ndarray: ...

    @property
    def nfe(self):
        return self._nfe

    def reset_nfe(self):
        with self._lock:
            self._nfe = 0


class FunctionDenoiser(Denoiser):
    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray], dim: int):
        super().__init__(dim)
        self.fn = fn

    def _denoise(self, x, sigma):
        return np.broadcast_to(np.asarray(self.fn(x, sigma), dtype=float), x.shape).copy()


def constant_denoiser(kappa, dim: int) -> FunctionDenoiser:
    """``D(x, sigma) = kappa``: the nonlinearity of the semilinear ODE is constant."""
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (dim,)).copy()
    return FunctionDenoiser(lambda x, sigma: np.broadcast_to(kappa, x.shape), dim)


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture ``sum_i w_i N(mu_i, s_i^2 I)``."""

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    _log_weights: np.ndarray = field(init=False, repr=False, compare=False)
    _scales_sq: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float).reshape(-1)
        mu = np.ascontiguousarray(np.atleast_2d(np.asarray(self.means, dtype=float)))
        s = np.ascontiguousarray(self.scales, dtype=float).reshape(-1)
        if not (len(w) == len(s) == mu.shape[0]):
            raise UsageError("weights, means and scales must describe the same number of components")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must be positive and sum to 1")
        if np.any(s <= 0) or not np.all(np.isfinite(mu)):
            raise DomainError("component scales must be positive and means finite")
        for name, arr in (("weights", w), ("means", mu), ("scales", s)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_log_weights", np.log(w))
        object.__setattr__(self, "_scales_sq", s * s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def _component_logpdf(self, x, sigma):
        var = self._scales_sq + sigma * sigma
        diff = x[..., None, :] - self.means
        sq = np.sum(diff * diff, axis=-1)
        return self._log_weights - 0.5 * self.dim * np.log(2 * np.pi * var) - 0.5 * sq / var

    def log_density(self, x, sigma) -> np.ndarray:
        """``log p(x; sigma)`` of the mixture convolved with N(0, sigma^2 I)."""
        lp = self._component_logpdf(np.asarray(x, dtype=float), _sigma(sigma))
        top = lp.max(axis=-1, keepdims=True)
        return (top + np.log(np.exp(lp - top).sum(axis=-1, keepdims=True)))[..., 0]

    def responsibilities(self, x, sigma) -> np.ndarray:
        lp = self._component_logpdf(np.asarray(x, dtype=float), _sigma(sigma))
        lp -= lp.max(axis=-1, keepdims=True)
        r = np.exp(lp)
        return r / r.sum(axis=-1, keepdims=True)

    def score(self, x, sigma) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        sigma = _sigma(sigma)
        var = self._scales_sq + sigma * sigma
        r = self.responsibilities(x, sigma)
        return -np.einsum("...k,...kd->...d", r / var, x[..., None, :] - self.means)

    def log_responsibility_grad(self, x, sigma, component: int) -> np.ndarray:
        """Gradient in x of ``log r_i(x, sigma)``, the posterior probability of component i."""
        x = np.asarray(x, dtype=float)
        sigma = _sigma(sigma)
        var_i = self._scales_sq[component] + sigma * sigma
        return -(x - self.means[component]) / var_i - self.score(x, sigma)

    def data_variance(self) -> float:
        """Per-coordinate variance of the clean distribution, averaged over coordinates."""
        second = self.weights @ (self.means ** 2 + self._scales_sq[:, None])
        first = self.weights @ self.means
        return float(np.mean(second - first ** 2))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[comp] + self.scales[comp, None] * rng.standard_normal((n, self.dim))


class MixtureDenoiser(Denoiser):
    """Exact posterior-mean denoiser of a Gaussian mixture."""

    def __init__(self, mixture: GaussianMixture):
        super().__init__(mixture.dim)
        self.mixture = mixture

    def _denoise(self, x, sigma):
        m = self.mixture
        flat = np.ascontiguousarray(x.reshape(-1, self.dim))
        out = kernels.mixture_denoise(flat, sigma, m._log_weights, m.means, m._scales_sq)
        return np.asarray(out).reshape(x.shape)


def mixture_denoiser(m: GaussianMixture) -> MixtureDenoiser:
    return MixtureDenoiser(m)


def gaussian_denoiser(mean, scale: float) -> MixtureDenoiser:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return MixtureDenoiser(GaussianMixture(np.ones(1), mean[None, :], np.array([float(scale)])))


def default_mixture(dim: int = 8, n_components: int = 4, seed: int = 0) -> GaussianMixture:
    """The toy data distribution used by the CLI and the analysis harness."""
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.full(n_components, 4.0))
    means = rng.normal(scale=1.5, size=(n_components, dim))
    scales = rng.uniform(0.3, 0.8, size=n_components)
    return GaussianMixture(weights, means, scales)


class NoisePredictor(DenoiserModel):
    """``eps(x, sigma) = (x - D(x, sigma)) / sigma``, sharing D's counter."""

    def __init__(self, denoiser: DenoiserModel):
        self.denoiser = denoiser
        self.dim = denoiser.dim

    def __call__(self, x, sigma):
        sigma = _sigma(sigma)
        x = np.asarray(x, dtype=float)
        return (x - self.denoiser(x, sigma)) / sigma

    @property
    def nfe(self):
        return self.denoiser.nfe

    def reset_nfe(self):
        self.denoiser.reset_nfe()


def eps_from_denoiser(denoiser: DenoiserModel) -> NoisePredictor:
    return NoisePredictor(denoiser)


class ClassifierFreeGuidance(DenoiserModel):
    """``uncond + w (cond - uncond)``; both branches are evaluated on every call."""

    def __init__(self, cond: DenoiserModel, uncond: DenoiserModel, weight: float):
        if cond.dim != uncond.dim:
            raise UsageError(f"dimension mismatch: {cond.dim} vs {uncond.dim}")
        self.cond, self.uncond, self.weight = cond, uncond, float(weight)
        self.dim = cond.dim

    def __call__(self, x, sigma):
        u = self.uncond(x, sigma)
        c = self.cond(x, sigma)
        return u + self.weight * (c - u)

    @property
    def nfe(self):
        if self.cond is self.uncond:
            return self.cond.nfe
        return self.cond.nfe + self.uncond.nfe

    def reset_nfe(self):
        self.cond.reset_nfe()
        self.uncond.reset_nfe()


def cfg_combine(cond: DenoiserModel, uncond: DenoiserModel, weight: float) -> ClassifierFreeGuidance:
    return ClassifierFreeGuidance(cond, uncond, weight)


class ClassifierGuidance(DenoiserModel):
    """``D(x, sigma) + w sigma^2 grad_x log p(c | x; sigma)``."""

    def __init__(self, denoiser: DenoiserModel, class_grad: Callable[[np.ndarray, float], np.ndarray], weight: float):
        self.denoiser, self.class_grad, self.weight = denoiser, class_grad, float(weight)
        self.dim = denoiser.dim

    def __call__(self, x, sigma):
        sigma = _sigma(sigma)
        out = self.denoiser(x, sigma)
        if self.weight == 0.0:
            return out
        grad = np.asarray(self.class_grad(x, sigma), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise DomainError("classifier gradient is not finite")
        return out + self.weight * sigma * sigma * grad

    @property
    def nfe(self):
        return self.denoiser.nfe

    def reset_nfe(self):
        self.denoiser.reset_nfe()


def classifier_guided(denoiser: DenoiserModel, class_grad, weight: float) -> ClassifierGuidance:
    return ClassifierGuidance(denoiser, class_grad, weight)


def mixture_class_grad(mixture: GaussianMixture, component: int):
    """Analytic classifier gradient that treats mixture components as classes."""
    if not 0 <= component < mixture.n_components:
        raise UsageError(f"component {component} out of range")
    return lambda x, sigma: mixture.log_responsibility_grad(x, sigma, component)


def manufactured_g(traj: Callable, traj_deriv: Callable, stiffness: float):
    """Nonlinearity ``g(x, lam)`` whose semilinear ODE ``x' = -x + g`` is solved by ``traj``.

    ``g(x, lam) = traj'(lam) + traj(lam) + L (x - traj(lam))``; deviations from
    the trajectory evolve as ``e' = (L - 1) e``.
    """
    stiffness = float(stiffness)

    def g(x, lam):
        xh = traj(lam)
        return traj_deriv(lam) + xh + stiffness * (np.asarray(x, dtype=float) - xh)

    return g


@dataclass(frozen=True)
class ManufacturedProblem:
    """Trajectory ``a sin(w lam + p) + c`` per coordinate with closed-form forcing."""

    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray
    offset: np.ndarray
    stiffness: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.amplitude)

    def exact(self, lam: float) -> np.ndarray:
        return self.amplitude * np.sin(self.frequency * lam + self.phase) + self.offset

    def exact_deriv(self, lam: float) -> np.ndarray:
        return self.amplitude * self.frequency * np.cos(self.frequency * lam + self.phase)

    @property
    def g(self):
        return manufactured_g(self.exact, self.exact_deriv, self.stiffness)

    def as_denoiser(self) -> FunctionDenoiser:
        """View ``g`` as a denoiser ``D(x, sigma) = g(x, -log sigma)``."""
        g = self.g
        return FunctionDenoiser(lambda x, sigma: g(x, -math.log(sigma)), self.dim)


def sin_problem(dim: int = 4, seed: int | None = None, stiffness: float | None = None) -> ManufacturedProblem:
    """A manufactured problem; ``seed=None`` gives the plain ``sin(lam)`` trajectory in every coordinate."""
    if seed is None:
        one = np.ones(dim)
        return ManufacturedProblem(one, one, np.zeros(dim), np.zeros(dim), 0.0 if stiffness is None else stiffness)
    rng = np.random.default_rng(seed)
    return ManufacturedProblem(
        amplitude=rng.uniform(0.5, 2.0, dim),
        frequency=rng.uniform(0.5, 2.0, dim),
        phase=rng.uniform(0.0, 2 * np.pi, dim),
        offset=rng.normal(size=dim),
        stiffness=float(rng.uniform(0.0, 0.5)) if stiffness is None else float(stiffness),
    )


def _parse_vector(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def parse_mixture_config(text: str) -> GaussianMixture:
    """Parse ``key = value`` lines into a mixture.

    Keys: ``weights`` and ``scales`` (one number per component), ``means``
    (components separated by ``;``). ``#`` starts a comment.
    """
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = value
    unknown = entries.keys() - {"weights", "means", "scales"}
    if unknown:
        raise UsageError(f"unknown mixture config keys {sorted(unknown)}")
    missing = {"weights", "means", "scales"} - entries.keys()
    if missing:
        raise UsageError(f"mixture config is missing {sorted(missing)}")
    try:
        weights = np.array(_parse_vector(entries["weights"]))
        scales = np.array(_parse_vector(entries["scales"]))
        rows = [_parse_vector(chunk) for chunk in entries["means"].split(";") if chunk.strip()]
    except ValueError as exc:
        raise UsageError(f"malformed number in mixture config: {exc}") from None
    if len({len(r) for r in rows}) != 1:
        raise UsageError("all component means must have the same dimension")
    return GaussianMixture(weights, np.array(rows), scales)


def load_mixture_config(path) -> GaussianMixture:
    return parse_mixture_config(Path(path).read_text())
