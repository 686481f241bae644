"""Coordinates of the probability-flow ODE and the noise schedules that discretize it.

Noise level doubles as time (``sigma(t) = t``). Schedules are stored as
strictly decreasing sigma lists; log-SNR values are derived on demand.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .denoisers import DenoiserModel
from .errors import DomainError, UsageError


class Parametrization(str, Enum):
    EDM = "edm"
    LOGSNR = "logsnr"
    NEG_LOGSNR = "neglogsnr"

    @property
    def semilinear(self) -> bool:
        return self is not Parametrization.EDM


class Flavor(str, Enum):
    DATA = "data"    # lambda = -log sigma, paired with the denoiser
    NOISE = "noise"  # lambda = +log sigma, paired with the noise predictor


def parametrization(value) -> Parametrization:
    try:
        return Parametrization(value.lower() if isinstance(value, str) else value)
    except ValueError:
        raise UsageError(f"unknown parametrization {value!r}") from None


def check_sigma(sigma) -> float:
    sigma = float(sigma)
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise DomainError(f"noise level must be positive and finite, got {sigma}")
    return sigma


@dataclass(frozen=True)
class LogSnrTime:
    lam: float
    flavor: Flavor = Flavor.DATA


def sigma_to_lambda(sigma: float, flavor: Flavor = Flavor.DATA) -> LogSnrTime:
    sigma = check_sigma(sigma)
    flavor = Flavor(flavor)
    lam = -math.log(sigma)
    return LogSnrTime(lam if flavor is Flavor.DATA else -lam, flavor)


def lambda_to_sigma(t: LogSnrTime) -> float:
    return math.exp(-t.lam if t.flavor is Flavor.DATA else t.lam)


@dataclass(frozen=True)
class StateVector:
    """A sample-space point, either raw (``"x"``) or scaled by 1/sigma (``"y"``)."""

    x: np.ndarray
    space: str = "x"

    def __post_init__(self):
        if self.space not in ("x", "y"):
            raise UsageError(f"space must be 'x' or 'y', got {self.space!r}")
        arr = np.asarray(self.x, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise DomainError("state entries must be finite")
        object.__setattr__(self, "x", arr)


def to_y_space(state: StateVector, sigma: float) -> StateVector:
    if state.space != "x":
        raise UsageError("to_y_space expects an x-space state")
    return StateVector(state.x / check_sigma(sigma), "y")


def from_y_space(state: StateVector, sigma: float) -> StateVector:
    if state.space != "y":
        raise UsageError("from_y_space expects a y-space state")
    return StateVector(state.x * check_sigma(sigma), "x")


def velocity(param, state: StateVector, sigma: float, denoiser: DenoiserModel) -> np.ndarray:
    """Right-hand side of the flow ODE in the coordinates of ``param``.

    EDM (time = sigma): ``(x - D(x, sigma)) / sigma``.
    logSNR (time = -log sigma): ``-x + D(x, sigma)``.
    Negative logSNR (time = log sigma, state y = x/sigma): ``-y + eps(sigma y, sigma)``.
    """
    param = parametrization(param)
    sigma = check_sigma(sigma)
    want = "y" if param is Parametrization.NEG_LOGSNR else "x"
    if state.space != want:
        raise UsageError(f"{param.value} velocity expects a {want}-space state")
    if param is Parametrization.EDM:
        return (state.x - denoiser(state.x, sigma)) / sigma
    if param is Parametrization.LOGSNR:
        return -state.x + denoiser(state.x, sigma)
    x = sigma * state.x
    eps = (x - denoiser(x, sigma)) / sigma
    return -state.x + eps


class ScheduleKind(str, Enum):
    EDM_RHO = "edm"
    UNIFORM_SIGMA = "uniform-sigma"
    UNIFORM_LAMBDA = "uniform-lambda"


@dataclass(frozen=True)
class Schedule:
    sigmas: tuple[float, ...]
    kind: ScheduleKind
    rho: float | None = None

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        if len(sig) < 2:
            raise DomainError("a schedule needs at least two noise levels")
        if not all(math.isfinite(s) and s > 0.0 for s in sig):
            raise DomainError("schedule noise levels must be positive and finite")
        if any(a <= b for a, b in zip(sig, sig[1:])):
            raise DomainError("schedule must be strictly decreasing")
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "kind", ScheduleKind(self.kind))

    @property
    def n_steps(self) -> int:
        return len(self.sigmas) - 1

    @property
    def sigma_max(self) -> float:
        return self.sigmas[0]

    @property
    def sigma_min(self) -> float:
        return self.sigmas[-1]

    def lambdas(self, flavor: Flavor = Flavor.DATA) -> np.ndarray:
        lam = -np.log(np.asarray(self.sigmas))
        return lam if Flavor(flavor) is Flavor.DATA else -lam

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("sigma\n")
        for s in self.sigmas:
            buf.write(f"{s!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, kind=ScheduleKind.EDM_RHO, rho=None) -> "Schedule":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != "sigma":
            raise UsageError("schedule CSV must start with a 'sigma' header")
        return cls(tuple(float(v) for v in lines[1:]), kind, rho)


def _check_range(sigma_min, sigma_max, n):
    sigma_min, sigma_max = check_sigma(sigma_min), check_sigma(sigma_max)
    if sigma_min >= sigma_max:
        raise DomainError(f"need sigma_min < sigma_max, got {sigma_min} >= {sigma_max}")
    if int(n) != n or n < 2:
        raise DomainError(f"a schedule needs at least 2 grid points, got {n}")
    return sigma_min, sigma_max, int(n)


def edm_schedule(sigma_min: float, sigma_max: float, n: int, rho: float = 7.0) -> Schedule:
    """``n`` noise levels interpolated linearly in ``sigma^(1/rho)``, endpoints exact."""
    sigma_min, sigma_max, n = _check_range(sigma_min, sigma_max, n)
    if not (rho > 0.0 and math.isfinite(rho)):
        raise DomainError(f"rho must be positive, got {rho}")
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    sig = [(hi + i / (n - 1) * (lo - hi)) ** rho for i in range(n)]
    sig[0], sig[-1] = sigma_max, sigma_min
    return Schedule(tuple(sig), ScheduleKind.EDM_RHO, float(rho))


def uniform_sigma_schedule(sigma_min: float, sigma_max: float, n: int) -> Schedule:
    sigma_min, sigma_max, n = _check_range(sigma_min, sigma_max, n)
    return Schedule(tuple(np.linspace(sigma_max, sigma_min, n)), ScheduleKind.UNIFORM_SIGMA, 1.0)


def uniform_lambda_schedule(sigma_min: float, sigma_max: float, n: int) -> Schedule:
    sigma_min, sigma_max, n = _check_range(sigma_min, sigma_max, n)
    sig = np.exp(np.linspace(math.log(sigma_max), math.log(sigma_min), n))
    sig[0], sig[-1] = sigma_max, sigma_min
    return Schedule(tuple(sig), ScheduleKind.UNIFORM_LAMBDA)


def make_schedule(kind, sigma_min: float, sigma_max: float, n: int, rho: float = 7.0) -> Schedule:
    kind = ScheduleKind(kind)
    if kind is ScheduleKind.EDM_RHO:
        return edm_schedule(sigma_min, sigma_max, n, rho)
    if kind is ScheduleKind.UNIFORM_SIGMA:
        return uniform_sigma_schedule(sigma_min, sigma_max, n)
    return uniform_lambda_schedule(sigma_min, sigma_max, n)
