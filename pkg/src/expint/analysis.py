"""Defect measurement, empirical order estimation and eta sweeps on oracle problems."""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .denoisers import (
    DenoiserModel,
    GaussianMixture,
    ManufacturedProblem,
    constant_denoiser,
    mixture_denoiser,
)
from .errors import DomainError, InsufficientDataError, ReferenceQualityError, UsageError
from .parametrizations import Parametrization, Schedule, ScheduleKind, make_schedule, uniform_lambda_schedule
from .steppers import expected_nfe, method_spec, rk4_solve, solve

REFERENCE_STEPS = 10_000
REFERENCE_TOL = 1e-8
REFERENCE_FACTOR = 50
FLOOR = 1e2 * np.finfo(float).eps


class OracleProblem(ABC):
    """A denoiser together with a noise range and a way to draw initial states."""

    name: str
    dim: int
    sigma_min: float
    sigma_max: float

    @abstractmethod
    def denoiser(self) -> DenoiserModel: ...

    @abstractmethod
    def initial(self, rng: np.random.Generator, batch: int) -> np.ndarray: ...

    def exact_final(self, x0: np.ndarray) -> np.ndarray | None:
        """Closed-form state at ``sigma_min`` from ``x0`` at ``sigma_max``, if known."""
        return None


@dataclass(frozen=True)
class MixtureProblem(OracleProblem):
    mixture: GaussianMixture
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    name: str = "mixture"

    @property
    def dim(self) -> int:
        return self.mixture.dim

    def denoiser(self):
        return mixture_denoiser(self.mixture)

    def initial(self, rng, batch):
        return self.sigma_max * rng.standard_normal((batch, self.dim))

    def exact_final(self, x0):
        if self.mixture.n_components != 1:
            return None
        mu = self.mixture.means[0]
        s2 = float(self.mixture.scales[0]) ** 2
        return mu + (x0 - mu) * math.sqrt((s2 + self.sigma_min ** 2) / (s2 + self.sigma_max ** 2))


@dataclass(frozen=True)
class ManufacturedOracle(OracleProblem):
    """A manufactured trajectory run over ``lam in [lam_start, lam_start + lam_span]``."""

    problem: ManufacturedProblem
    lam_start: float = 0.0
    lam_span: float = 4.0
    name: str = "sin"

    @property
    def dim(self) -> int:
        return self.problem.dim

    @property
    def sigma_max(self) -> float:
        return math.exp(-self.lam_start)

    @property
    def sigma_min(self) -> float:
        return math.exp(-(self.lam_start + self.lam_span))

    def denoiser(self):
        return self.problem.as_denoiser()

    def initial(self, rng, batch):
        return np.tile(self.problem.exact(self.lam_start), (batch, 1))

    def exact_final(self, x0):
        return np.broadcast_to(self.problem.exact(self.lam_start + self.lam_span), np.shape(x0)).copy()


@dataclass(frozen=True)
class ConstantProblem(OracleProblem):
    """``D == kappa``; the flow is exactly ``x(lam) = e^-dlam x0 + (1 - e^-dlam) kappa``."""

    kappa: np.ndarray
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    name: str = "const"

    @property
    def dim(self) -> int:
        return len(self.kappa)

    def denoiser(self):
        return constant_denoiser(self.kappa, self.dim)

    def initial(self, rng, batch):
        return self.sigma_max * rng.standard_normal((batch, self.dim))

    def exact_final(self, x0):
        r = self.sigma_min / self.sigma_max
        return r * x0 + (1.0 - r) * np.asarray(self.kappa)


def _solve_param(method, param):
    spec, _ = method_spec(method)
    return param if spec.exponential else Parametrization.EDM


def reference_solution(problem: OracleProblem, x0: np.ndarray, steps: int = REFERENCE_STEPS,
                       tol: float = REFERENCE_TOL) -> np.ndarray:
    """RK4 on a uniform log-SNR grid, checked against a run with half the steps."""
    den = problem.denoiser()
    fine = rk4_solve(uniform_lambda_schedule(problem.sigma_min, problem.sigma_max, steps + 1), den,
                     Parametrization.LOGSNR, x0=x0).x_final
    coarse = rk4_solve(uniform_lambda_schedule(problem.sigma_min, problem.sigma_max, steps // 2 + 1), den,
                       Parametrization.LOGSNR, x0=x0).x_final
    gap = float(np.max(np.abs(fine - coarse)) / max(1.0, float(np.max(np.abs(fine)))))
    if not gap <= tol:
        raise ReferenceQualityError(f"reference refinement changed the result by {gap:.3e} > {tol:.0e}")
    return fine


@dataclass(frozen=True)
class DefectReport:
    method: str
    schedule: str
    rho: float | None
    nfe: int
    n_steps: int
    defect_l1: float
    defect_l2: float
    reference: str
    reference_nfe: int

    def __post_init__(self):
        if self.defect_l1 < 0 or self.defect_l2 < 0:
            raise DomainError("defects are norms and cannot be negative")


def defect_norms(x: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """Mean over the batch of the per-sample L1 and L2 distances."""
    diff = np.atleast_2d(np.asarray(x) - np.asarray(ref))
    return float(np.mean(np.sum(np.abs(diff), axis=1))), float(np.mean(np.linalg.norm(diff, axis=1)))


def steps_for_nfe(method, nfe: int, final_denoise: bool = False) -> int:
    """Largest step count whose evaluation cost does not exceed ``nfe``."""
    per_step = expected_nfe(method, 1)
    n = (int(nfe) - int(final_denoise)) // per_step
    if n < 1:
        raise DomainError(f"nfe={nfe} is too small for {method}")
    return n


def measure_defects(problem: OracleProblem, methods, nfes, schedule_kind=ScheduleKind.EDM_RHO, rho: float = 7.0,
                    param=Parametrization.LOGSNR, batch: int = 16, seed: int = 0, final_denoise: bool = False,
                    reference_steps: int = REFERENCE_STEPS) -> list[DefectReport]:
    """Terminal defects of each ``(method, nfe)`` against one shared reference.

    All methods start from the same initial states. The reference is the
    closed form when the problem has one and an RK4 solve otherwise.
    Classical methods run in EDM coordinates, exponential ones in ``param``.
    """
    kind = ScheduleKind(schedule_kind)
    x0 = problem.initial(np.random.default_rng(seed), batch)
    ref = problem.exact_final(x0)
    if ref is None:
        ref = reference_solution(problem, x0, reference_steps)
        label, ref_nfe = f"rk4-uniform-lambda-{reference_steps}", 4 * reference_steps
    else:
        label, ref_nfe = "exact", 0
    if final_denoise:
        ref = problem.denoiser()(ref, problem.sigma_min)
    reports = []
    for method in methods:
        for nfe in nfes:
            n = steps_for_nfe(method, nfe, final_denoise)
            cost = expected_nfe(method, n, final_denoise)
            if ref_nfe and REFERENCE_FACTOR * cost > ref_nfe:
                raise UsageError(f"reference with {ref_nfe} evaluations is too coarse for nfe={cost}")
            sched = make_schedule(kind, problem.sigma_min, problem.sigma_max, n + 1, rho)
            run = solve(sched, method, _solve_param(method, param), problem.denoiser(), x0=x0,
                        final_denoise=final_denoise)
            l1, l2 = defect_norms(run.x_final, ref)
            reports.append(DefectReport(run.method, kind.value, sched.rho, run.nfe, n, l1, l2, label, ref_nfe))
    return reports


@dataclass(frozen=True)
class OrderEstimate:
    method: str
    points: tuple[tuple[int, float], ...]
    slope: float
    r2: float
    excluded: tuple[int, ...] = ()
    monotone: bool = True


def fit_order(n_steps, errors) -> tuple[float, float]:
    """Least-squares slope of ``log(error)`` against ``log(1/n)`` and its r^2."""
    xs = np.log(1.0 / np.asarray(n_steps, dtype=float))
    ys = np.log(np.asarray(errors, dtype=float))
    slope, icpt = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + icpt)
    ss = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return float(slope), r2


def estimate_order(problem: OracleProblem, method, n_steps=(8, 16, 32, 64, 128),
                   schedule_kind=ScheduleKind.UNIFORM_LAMBDA, param=Parametrization.LOGSNR) -> OrderEstimate:
    """Empirical convergence order against the problem's closed-form solution."""
    x0 = problem.initial(np.random.default_rng(0), 1)
    exact = problem.exact_final(x0)
    if exact is None:
        raise UsageError(f"problem {problem.name!r} has no closed-form solution")
    scale = max(1.0, float(np.max(np.abs(exact))))
    points, excluded = [], []
    name = None
    for n in n_steps:
        sched = make_schedule(schedule_kind, problem.sigma_min, problem.sigma_max, int(n) + 1)
        run = solve(sched, method, _solve_param(method, param), problem.denoiser(), x0=x0)
        name = run.method
        err = float(np.max(np.abs(run.x_final - exact)))
        if err < FLOOR * scale:
            excluded.append(int(n))
        else:
            points.append((int(n), err))
    if len(points) < 4:
        raise InsufficientDataError(f"only {len(points)} usable points after excluding round-off floor")
    slope, r2 = fit_order([p[0] for p in points], [p[1] for p in points])
    errs = [p[1] for p in points]
    monotone = all(a > b for a, b in zip(errs, errs[1:]))
    return OrderEstimate(name, tuple(points), slope, r2, tuple(excluded), monotone)


@dataclass(frozen=True)
class DominancePoint:
    problem: str
    n_steps: int
    error_a: float
    error_b: float

    @property
    def holds(self) -> bool:
        return self.error_a <= self.error_b

    @property
    def reduction(self) -> float:
        return 1.0 - self.error_a / self.error_b if self.error_b > 0 else 0.0


@dataclass(frozen=True)
class DominanceSummary:
    method_a: str
    method_b: str
    points: tuple[DominancePoint, ...] = field(default_factory=tuple)

    @property
    def fraction(self) -> float:
        return sum(p.holds for p in self.points) / len(self.points)

    @property
    def median_reduction(self) -> float:
        return float(np.median([p.reduction for p in self.points]))


def compare_methods(problems, method_a="res2", method_b="dpmpp2", n_steps=(8, 16, 32, 64, 128),
                    schedule_kind=ScheduleKind.EDM_RHO, rho: float = 7.0, param=Parametrization.LOGSNR,
                    batch: int = 16, seed: int = 0) -> DominanceSummary:
    """Terminal L1 defects of two methods at equal step counts over several problems."""
    points = []
    for prob in problems:
        spec_a, spec_b = (expected_nfe(m, 1) for m in (method_a, method_b))
        if spec_a != spec_b:
            raise UsageError("methods must have the same cost per step")
        reps = measure_defects(prob, [method_a, method_b], [spec_a * n for n in n_steps], schedule_kind, rho,
                               param, batch, seed)
        half = len(n_steps)
        for n, ra, rb in zip(n_steps, reps[:half], reps[half:]):
            points.append(DominancePoint(prob.name, int(n), ra.defect_l1, rb.defect_l1))
    return DominanceSummary(str(method_a), str(method_b), tuple(points))


@dataclass(frozen=True)
class EtaPoint:
    method: str
    eta: float
    nfe: int
    mean_error: float
    var_error: float
    mean_log_density: float
    clamped_steps: int


def eta_sweep(problem: MixtureProblem, etas, nfe: int = 20, method="res2", schedule_kind=ScheduleKind.EDM_RHO,
              rho: float = 7.0, param=Parametrization.LOGSNR, batch: int = 512, seed: int = 0) -> list[EtaPoint]:
    """Terminal sample statistics as a function of the churn level at fixed NFE.

    Reports the error of the batch mean and per-coordinate variance against
    the noised data distribution at ``sigma_min`` and the mean log density of
    the samples under it. No optimum is asserted.
    """
    if not isinstance(problem, MixtureProblem):
        raise UsageError("eta sweeps need a mixture problem")
    m = problem.mixture
    n = steps_for_nfe(method, nfe)
    sched = make_schedule(schedule_kind, problem.sigma_min, problem.sigma_max, n + 1, rho)
    true_mean = m.weights @ m.means
    true_var = m.weights @ (m.means ** 2 + (m.scales ** 2)[:, None] + problem.sigma_min ** 2) - true_mean ** 2
    out = []
    for eta in etas:
        run = solve(sched, method, _solve_param(method, param), problem.denoiser(), batch=batch, seed=seed, eta=eta)
        x = run.x_final
        out.append(EtaPoint(run.method, float(eta), run.nfe,
                            float(np.linalg.norm(x.mean(axis=0) - true_mean)),
                            float(np.linalg.norm(x.var(axis=0) - true_var)),
                            float(np.mean(m.log_density(x, problem.sigma_min))),
                            sum(run.clamped)))
    return out
