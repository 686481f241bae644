"""Single-step, multistep, stochastic and classical solvers for the flow ODE.

Exponential schemes run on the semilinear form ``u' = -u + g(u, lam)``:

* logSNR: ``u = x``, ``lam = -log sigma``, ``g = D(u, e^-lam)``; sampling moves
  forward in ``lam`` (``h > 0``).
* negative logSNR: ``u = x / sigma``, ``lam = log sigma``,
  ``g = eps(e^lam u, e^lam)``; sampling moves backward in ``lam`` (``h < 0``),
  so its phi-functions are evaluated at positive arguments.

NFE per sampling run with N steps: ``s * N`` for an s-stage single-step
scheme (stage 1 is evaluated fresh every step), ``N`` for the multistep
scheme (its first step is an exponential Euler step), plus one if the final
denoising step is requested.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoisers import DenoiserModel
from .errors import BootstrapRequiredError, DomainError, UsageError
from .parametrizations import Parametrization, Schedule, StateVector, check_sigma, parametrization
from .tableaus import SchemeId, TableauSpec, concretize, exp_weights, make_spec

MULTISTEP_SUFFIX = "m"


class _Semilinear:
    """Coordinate maps between x-space and the semilinear (u, lam) form."""

    def __init__(self, param: Parametrization, denoiser: DenoiserModel):
        if not param.semilinear:
            raise UsageError(f"exponential schemes need a semilinear parametrization, got {param.value}")
        self.noise = param is Parametrization.NEG_LOGSNR
        self.denoiser = denoiser

    def lam(self, sigma):
        return math.log(sigma) if self.noise else -math.log(sigma)

    def encode(self, x, sigma):
        return x / sigma if self.noise else x

    def decode(self, u, sigma):
        return u * sigma if self.noise else u

    def g(self, u, lam):
        if self.noise:
            sigma = math.exp(lam)
            x = sigma * u
            return (x - self.denoiser(x, sigma)) / sigma
        return self.denoiser(u, math.exp(-lam))


def _exp_stages(coords, u, lam, h, spec, first=None):
    a21, a31, a32, b1, b2, b3 = exp_weights(spec, h)
    c = spec.c
    d1 = coords.g(u, lam) if first is None else first
    s = spec.stages
    if s == 1:
        return math.exp(-h) * u + (h * b1) * d1, d1
    u2 = math.exp(-c[1] * h) * u + (h * a21) * d1
    d2 = coords.g(u2, lam + c[1] * h)
    if s == 2:
        return math.exp(-h) * u + h * (b1 * d1 + b2 * d2), d1
    u3 = math.exp(-c[2] * h) * u + h * (a31 * d1 + a32 * d2)
    d3 = coords.g(u3, lam + c[2] * h)
    return math.exp(-h) * u + h * (b1 * d1 + b2 * d2 + b3 * d3), d1


@dataclass(frozen=True)
class StepContext:
    """Everything one update needs besides the denoiser.

    ``x`` is an x-space state (a bare array is accepted). ``history`` holds ``(lam, g)`` pairs of earlier
    steps in the coordinates of ``param``; ``first_eval`` optionally supplies
    ``g(x, lam(sigma_from))`` so stage 1 costs no evaluation.
    """

    x: StateVector
    sigma_from: float
    sigma_to: float
    param: Parametrization = Parametrization.LOGSNR
    spec: TableauSpec | None = None
    history: tuple = ()
    first_eval: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "param", parametrization(self.param))
        x = self.x if isinstance(self.x, StateVector) else StateVector(self.x)
        if x.space != "x":
            raise UsageError("step contexts hold x-space states")
        object.__setattr__(self, "x", x)
        if check_sigma(self.sigma_to) >= check_sigma(self.sigma_from):
            raise DomainError(f"sampling must lower the noise level: {self.sigma_from} -> {self.sigma_to}")


def _exp_step(x, sigma_from, sigma_to, param, spec, denoiser, first=None):
    if not spec.exponential:
        raise UsageError(f"{spec.scheme.value} is classical; use classical_step")
    coords = _Semilinear(param, denoiser)
    lam = coords.lam(sigma_from)
    h = coords.lam(sigma_to) - lam
    u_next, _ = _exp_stages(coords, coords.encode(x, sigma_from), lam, h, spec, first)
    return coords.decode(u_next, sigma_to)


def single_step(ctx: StepContext, denoiser: DenoiserModel) -> StateVector:
    """One s-stage exponential Runge-Kutta step from ``sigma_from`` to ``sigma_to``."""
    spec = ctx.spec or make_spec(SchemeId.RES2)
    return StateVector(_exp_step(ctx.x.x, ctx.sigma_from, ctx.sigma_to, ctx.param, spec, denoiser, ctx.first_eval))


def multistep_weights(h: float, c2: float) -> tuple[float, float]:
    """Second-order multistep weights ``(b1, b2)`` for a previous node at ``c2 * h``, ``c2 < 0``."""
    spec = TableauSpec(SchemeId.RES2, (0.0, c2), multistep=True)
    _, _, _, b1, b2, _ = exp_weights(spec, h)
    return b1, b2


def multistep_step(ctx: StepContext, denoiser: DenoiserModel) -> tuple[StateVector, np.ndarray]:
    """Second-order multistep update reusing the previous step's evaluation.

    Returns the new state and ``g(x_n, lam_n)``, which the caller keeps as
    history for the next step. Exactly one new denoiser evaluation.
    """
    x_next, g_now = _multistep(ctx.x.x, ctx.sigma_from, ctx.sigma_to, ctx.param, ctx.history, denoiser,
                               ctx.first_eval)
    return StateVector(x_next), g_now


def _multistep(x, sigma_from, sigma_to, param, history, denoiser, first=None):
    if not history:
        raise BootstrapRequiredError("multistep update needs one previous evaluation")
    coords = _Semilinear(param, denoiser)
    lam = coords.lam(sigma_from)
    h = coords.lam(sigma_to) - lam
    lam_prev, g_prev = history[-1]
    c2 = (lam_prev - lam) / h
    b1, b2 = multistep_weights(h, c2)
    u = coords.encode(x, sigma_from)
    g_now = coords.g(u, lam) if first is None else first
    u_next = math.exp(-h) * u + h * (b1 * g_now + b2 * g_prev)
    return coords.decode(u_next, sigma_to), g_now


def _classical_rhs(param, denoiser):
    if param is Parametrization.EDM:
        return (lambda x, t: (x - denoiser(x, t)) / t), (lambda s: s), (lambda x, s: x), (lambda u, s: u)
    if param is Parametrization.LOGSNR:
        return ((lambda x, t: denoiser(x, math.exp(-t)) - x), (lambda s: -math.log(s)),
                (lambda x, s: x), (lambda u, s: u))

    def rhs(y, t):
        sigma = math.exp(t)
        x = sigma * y
        return (x - denoiser(x, sigma)) / sigma - y

    return rhs, (lambda s: math.log(s)), (lambda x, s: x / s), (lambda u, s: u * s)


def classical_step(x, sigma_from: float, sigma_to: float, spec: TableauSpec, param, denoiser: DenoiserModel):
    """One explicit Runge-Kutta step treating the velocity of ``param`` as a black box."""
    param = parametrization(param)
    tab = concretize(spec, 1.0)
    if tab.exponential:
        raise UsageError(f"{spec.scheme.value} is exponential; use single_step")
    rhs, time_of, encode, decode = _classical_rhs(param, denoiser)
    t0 = time_of(check_sigma(sigma_from))
    dt = time_of(check_sigma(sigma_to)) - t0
    u = encode(np.asarray(x, dtype=float), sigma_from)
    if dt == 0.0:
        return decode(u, sigma_to)
    a, b, c = tab.a, tab.b, tab.c
    ks = []
    for i in range(tab.s):
        ui = u
        for j in range(i):
            if a[i, j] != 0.0:
                ui = ui + (dt * a[i, j]) * ks[j]
        ks.append(rhs(ui, t0 + c[i] * dt))
    incr = sum((b[i] * ks[i] for i in range(tab.s) if b[i] != 0.0), np.zeros_like(u))
    return decode(u + dt * incr, sigma_to)


def churn(x, sigma: float, eta: float, rng: np.random.Generator, sigma_max: float | None = None):
    """Raise the noise level from ``sigma`` to ``(1 + eta) sigma`` by adding fresh noise.

    Returns ``(x_bar, sigma_bar, clamped)``. ``sigma_bar`` is clamped to
    ``sigma_max`` when given. ``eta == 0`` draws nothing and returns ``x``
    unchanged; any ``eta > 0`` draws exactly one standard normal array.
    """
    eta = float(eta)
    if not (eta >= 0.0 and math.isfinite(eta)):
        raise DomainError(f"eta must be non-negative, got {eta}")
    if eta == 0.0:
        return x, sigma, False
    sigma_bar = (1.0 + eta) * sigma
    clamped = sigma_max is not None and sigma_bar > sigma_max
    if clamped:
        sigma_bar = max(sigma_max, sigma)
    noise = rng.standard_normal(np.shape(x))
    return x + math.sqrt(sigma_bar * sigma_bar - sigma * sigma) * noise, sigma_bar, clamped


def _advance(x, sigma_from, sigma_to, spec, param, denoiser):
    if spec.exponential:
        return _exp_step(x, sigma_from, sigma_to, param, spec, denoiser)
    return classical_step(x, sigma_from, sigma_to, spec, param, denoiser)


def stochastic_step(x, sigma_i: float, sigma_next: float, eta: float, rng: np.random.Generator,
                    spec: TableauSpec, param, denoiser: DenoiserModel, sigma_max: float | None = None) -> StateVector:
    """Churn to ``(1 + eta) sigma_i``, then one deterministic step down to ``sigma_next``."""
    x = x.x if isinstance(x, StateVector) else np.asarray(x, dtype=float)
    if check_sigma(sigma_next) >= check_sigma(sigma_i):
        raise DomainError(f"sampling must lower the noise level: {sigma_i} -> {sigma_next}")
    x_bar, sigma_bar, _ = churn(x, sigma_i, eta, rng, sigma_max)
    return StateVector(_advance(x_bar, sigma_bar, sigma_next, spec, parametrization(param), denoiser))


def method_spec(method, c2=None, c3=None, gamma=None) -> tuple[TableauSpec, bool]:
    """Resolve a method id like ``"res2"`` or ``"res2m"`` (multistep) to ``(spec, multistep)``."""
    if isinstance(method, TableauSpec):
        return method, False
    name = str(getattr(method, "value", method)).lower()
    multistep = name.endswith(MULTISTEP_SUFFIX) and name != SchemeId.RK4.value and name[:-1] in {s.value for s in SchemeId}
    if multistep:
        if name[:-1] != SchemeId.RES2.value:
            raise UsageError("only res2 has a multistep variant")
        return make_spec(SchemeId.RES2), True
    return make_spec(name, c2=c2, c3=c3, gamma=gamma), False


def expected_nfe(method, n_steps: int, final_denoise: bool = False) -> int:
    spec, multistep = method_spec(method)
    per_step = 1 if multistep else spec.stages
    return per_step * n_steps + int(final_denoise)


@dataclass(frozen=True)
class SolveRun:
    method: str
    schedule: Schedule
    x_final: np.ndarray
    trace: tuple[tuple[float, np.ndarray], ...]
    nfe: int
    seed: int | None
    clamped: tuple[bool, ...] = ()

    @property
    def x_n(self) -> np.ndarray:
        """State at the last schedule level, before any final denoising."""
        return self.trace[-1][1]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


def solve(schedule: Schedule, scheme, param, denoiser: DenoiserModel, *, x0=None, batch: int | None = None,
          seed: int | None = 0, eta=None, final_denoise: bool = False, multistep: bool = False) -> SolveRun:
    """Integrate the flow ODE down ``schedule``.

    ``scheme`` is a ``TableauSpec``, a ``SchemeId`` or a method id string
    (``"res2m"`` selects the multistep update). ``eta`` is a scalar or a
    per-step sequence of churn levels; churning before a step is done with
    noise from ``np.random.default_rng(seed)``, which also draws ``x0`` as
    ``N(0, sigma_0^2 I)`` when no initial state is given (initial state
    first, then one noise array per churned step, in step order).
    """
    spec, ms = method_spec(scheme)
    multistep = multistep or ms
    if multistep and spec.scheme is not SchemeId.RES2:
        raise UsageError("only res2 has a multistep variant")
    param = parametrization(param)
    if spec.exponential and not param.semilinear:
        raise UsageError(f"{spec.scheme.value} needs a semilinear parametrization, got {param.value}")
    n = schedule.n_steps
    sig = schedule.sigmas
    if eta is None:
        etas = None
    else:
        etas = np.broadcast_to(np.asarray(eta, dtype=float), (n,))
        if np.any(etas < 0) or not np.all(np.isfinite(etas)):
            raise DomainError("eta values must be non-negative and finite")
        if not np.any(etas > 0):
            etas = None
    if multistep and etas is not None:
        raise UsageError("churn is not supported with the multistep update")

    rng = np.random.default_rng(seed)
    if x0 is None:
        shape = (denoiser.dim,) if batch is None else (batch, denoiser.dim)
        x = sig[0] * rng.standard_normal(shape)
    else:
        x = np.array(x0, dtype=float)
    start_nfe = denoiser.nfe
    trace = [(sig[0], _frozen(x))]
    clamped = []
    history = ()
    coords = _Semilinear(param, denoiser) if multistep else None
    for i in range(n):
        s_from, s_to = sig[i], sig[i + 1]
        if multistep:
            if not history:
                lam = coords.lam(s_from)
                u_next, g_now = _exp_stages(coords, coords.encode(x, s_from), lam,
                                            coords.lam(s_to) - lam, make_spec(SchemeId.EXPEULER))
                x = coords.decode(u_next, s_to)
            else:
                x, g_now = _multistep(x, s_from, s_to, param, history, denoiser)
            history = ((coords.lam(s_from), g_now),)
        else:
            if etas is not None:
                x, s_from, cl = churn(x, s_from, etas[i], rng, sig[0])
                clamped.append(cl)
            x = _advance(x, s_from, s_to, spec, param, denoiser)
        trace.append((s_to, _frozen(x)))
    x_final = denoiser(x, sig[-1]) if final_denoise else x
    name = spec.scheme.value + (MULTISTEP_SUFFIX if multistep else "")
    return SolveRun(name, schedule, _frozen(x_final), tuple(trace), denoiser.nfe - start_nfe, seed, tuple(clamped))


def heun_solve(schedule: Schedule, denoiser: DenoiserModel, param=Parametrization.EDM, **kwargs) -> SolveRun:
    return solve(schedule, SchemeId.HEUN, param, denoiser, **kwargs)


def rk4_solve(schedule: Schedule, denoiser: DenoiserModel, param=Parametrization.EDM, **kwargs) -> SolveRun:
    return solve(schedule, SchemeId.RK4, param, denoiser, **kwargs)
