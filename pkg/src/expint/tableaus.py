"""Butcher tableaus for exponential and classical explicit Runge-Kutta schemes.

Exponential tableaus have coefficients that depend on the step ``h`` through
phi-functions, so they are concretized once per step. The psi-functions
measure how far a concrete tableau is from reproducing the Taylor expansion
of the exact variation-of-constants solution; an order-q scheme drives the
relevant psi's to zero.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels_py
from ._backend import kernels
from .errors import DegenerateTableauError, DegenerateTableauWarning, DomainError, NotApplicableError, UsageError
from .phi import phi


class SchemeId(str, Enum):
    EXPEULER = "expeuler"
    RES2 = "res2"
    RES3 = "res3"
    DPMPP2 = "dpmpp2"
    DPMPP3 = "dpmpp3"
    HEUN = "heun"
    RK4 = "rk4"

    @property
    def exponential(self) -> bool:
        return self not in (SchemeId.HEUN, SchemeId.RK4)

    @property
    def stages(self) -> int:
        return _STAGES[self]

    @property
    def claimed_order(self) -> int:
        return _ORDER[self]


_STAGES = {
    SchemeId.EXPEULER: 1, SchemeId.RES2: 2, SchemeId.DPMPP2: 2, SchemeId.RES3: 3,
    SchemeId.DPMPP3: 3, SchemeId.HEUN: 2, SchemeId.RK4: 4,
}
_ORDER = {
    SchemeId.EXPEULER: 1, SchemeId.RES2: 2, SchemeId.DPMPP2: 2, SchemeId.RES3: 3,
    SchemeId.DPMPP3: 3, SchemeId.HEUN: 2, SchemeId.RK4: 4,
}
_KERNEL_CODE = {
    SchemeId.EXPEULER: _kernels_py.EXPEULER,
    SchemeId.RES2: _kernels_py.RES2,
    SchemeId.DPMPP2: _kernels_py.DPMPP2,
    SchemeId.RES3: _kernels_py.RES3,
    SchemeId.DPMPP3: _kernels_py.DPMPP3,
}
_CLASSICAL = {
    SchemeId.HEUN: ((0.0, 1.0), ((0.0, 0.0), (1.0, 0.0)), (0.5, 0.5)),
    SchemeId.RK4: (
        (0.0, 0.5, 0.5, 1.0),
        ((0.0, 0.0, 0.0, 0.0), (0.5, 0.0, 0.0, 0.0), (0.0, 0.5, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0)),
        (1 / 6, 1 / 3, 1 / 3, 1 / 6),
    ),
}

DEFAULT_C2 = 0.5
DEFAULT_C3 = 0.75


def gamma_for(c2: float, c3: float) -> float:
    """Solve ``2 (gamma c2 + c3) = 3 (gamma c2^2 + c3^2)`` for gamma.

    This is the condition that makes the third-order weights reproduce
    ``phi_3(0) = 1/6``.
    """
    denom = 3.0 * c2 * c2 - 2.0 * c2
    if denom == 0.0 or math.isclose(c2, 2.0 / 3.0, rel_tol=0.0, abs_tol=1e-14):
        raise DegenerateTableauError(f"c2={c2} makes the gamma condition singular")
    gamma = (2.0 * c3 - 3.0 * c3 * c3) / denom
    if gamma == 0.0:
        warnings.warn(
            f"gamma=0 for (c2, c3)=({c2}, {c3}); the second-stage weight vanishes",
            DegenerateTableauWarning,
            stacklevel=2,
        )
    return gamma


def _scheme(scheme) -> SchemeId:
    try:
        return SchemeId(scheme.lower() if isinstance(scheme, str) else scheme)
    except ValueError:
        raise UsageError(f"unknown scheme {scheme!r}; choose from {[s.value for s in SchemeId]}") from None


@dataclass(frozen=True)
class TableauSpec:
    """A scheme plus its free node parameters.

    ``multistep`` marks a RES2 spec whose second node points backwards in
    time (``c2 < 0``), as used by the multistep update.
    """

    scheme: SchemeId
    c: tuple[float, ...]
    gamma: float | None = None
    multistep: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", _scheme(self.scheme))
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        s = self.scheme.stages
        if len(self.c) != s:
            raise UsageError(f"{self.scheme.value} has {s} stages, got nodes {self.c}")
        if self.c[0] != 0.0:
            raise UsageError("first node must be 0 for an explicit scheme")
        if not all(math.isfinite(v) for v in self.c):
            raise DomainError(f"nodes must be finite, got {self.c}")
        if self.multistep:
            if self.scheme is not SchemeId.RES2 or self.c[1] >= 0.0:
                raise UsageError("multistep specs are RES2 with a negative second node")
        elif self.scheme.exponential and not all(0.0 < v <= 1.0 for v in self.c[1:]):
            raise DomainError(f"single-step nodes must lie in (0, 1], got {self.c}")
        if self.scheme is SchemeId.RES3:
            if self.gamma is None:
                raise UsageError("RES3 needs gamma; use make_spec to derive it")
            c2, c3 = self.c[1], self.c[2]
            if math.isclose(c2, 2.0 / 3.0, rel_tol=0.0, abs_tol=1e-14):
                raise DegenerateTableauError("RES3 with c2 = 2/3 is singular")
            if self.gamma * c2 + c3 == 0.0:
                raise DegenerateTableauError("RES3 with gamma*c2 + c3 = 0 is singular")

    @property
    def stages(self) -> int:
        return self.scheme.stages

    @property
    def exponential(self) -> bool:
        return self.scheme.exponential


def make_spec(scheme, c2: float | None = None, c3: float | None = None, gamma: float | None = None) -> TableauSpec:
    """Build a spec with default nodes for anything not given."""
    scheme = _scheme(scheme)
    if scheme in _CLASSICAL:
        return TableauSpec(scheme, _CLASSICAL[scheme][0])
    if scheme is SchemeId.EXPEULER:
        return TableauSpec(scheme, (0.0,))
    c2 = DEFAULT_C2 if c2 is None else c2
    if scheme.stages == 2:
        return TableauSpec(scheme, (0.0, c2))
    c3 = DEFAULT_C3 if c3 is None else c3
    if scheme is SchemeId.RES3 and gamma is None:
        gamma = gamma_for(c2, c3)
    return TableauSpec(scheme, (0.0, c2, c3), gamma)


@dataclass(frozen=True)
class ConcreteTableau:
    scheme: SchemeId
    c: tuple[float, ...]
    a: np.ndarray
    b: np.ndarray
    h: float
    exponential: bool

    @property
    def s(self) -> int:
        return len(self.c)


def _readonly(arr):
    arr.flags.writeable = False
    return arr


def exp_weights(spec: TableauSpec, h: float) -> tuple[float, float, float, float, float, float]:
    """Raw ``(a21, a31, a32, b1, b2, b3)`` for an exponential spec; no validation.

    This is the per-step fast path used by the steppers.
    """
    c = spec.c
    c2 = c[1] if len(c) > 1 else 0.0
    c3 = c[2] if len(c) > 2 else 0.0
    gamma = spec.gamma if spec.gamma is not None else 0.0
    return kernels.exp_coefficients(_KERNEL_CODE[spec.scheme], c2, c3, gamma, h)


def concretize(spec: TableauSpec, h: float, *, signed: bool = False) -> ConcreteTableau:
    """Evaluate the tableau of ``spec`` at step ``h``.

    Steps are positive by convention. ``signed=True`` admits negative steps,
    which the noise-prediction coordinates need because their time variable
    decreases during sampling.
    """
    h = float(h)
    if not math.isfinite(h) or (h <= 0.0 if not signed else h == 0.0):
        raise DomainError(f"step length must be {'nonzero' if signed else 'positive'} and finite, got {h}")
    s = spec.stages
    if not spec.exponential:
        c, a, b = _CLASSICAL[spec.scheme]
        return ConcreteTableau(spec.scheme, c, _readonly(np.array(a)), _readonly(np.array(b)), h, False)
    a21, a31, a32, b1, b2, b3 = exp_weights(spec, h)
    a = np.zeros((s, s))
    if s >= 2:
        a[1, 0] = a21
    if s >= 3:
        a[2, 0], a[2, 1] = a31, a32
    b = np.array((b1, b2, b3)[:s])
    return ConcreteTableau(spec.scheme, spec.c, _readonly(a), _readonly(b), h, True)


@dataclass(frozen=True)
class PsiReport:
    """Defect coefficients of a concrete exponential tableau.

    ``psi[j-1]`` is the final-state coefficient of order j and
    ``psi_stage[j-1][i-1]`` the stage-i coefficient of order j.
    """

    h: float
    psi: tuple[float, ...]
    psi_stage: tuple[tuple[float, ...], ...]
    weighted_second: float

    def final(self, j: int) -> float:
        return self.psi[j - 1]

    def stage(self, j: int, i: int) -> float:
        return self.psi_stage[j - 1][i - 1]


def psi_report(tab: ConcreteTableau, q: int) -> PsiReport:
    if not tab.exponential:
        raise NotApplicableError(f"psi-functions are defined for exponential tableaus, not {tab.scheme.value}")
    if not 1 <= q <= 4:
        raise DomainError(f"psi order must be in 1..4, got {q}")
    h, c, a, b = tab.h, tab.c, tab.a, tab.b
    s = tab.s
    psi = []
    stage_rows = []
    for j in range(1, q + 1):
        fact = math.factorial(j - 1)
        psi.append(phi(j, -h) - sum(b[k] * c[k] ** (j - 1) for k in range(s)) / fact)
        row = []
        for i in range(s):
            row.append(phi(j, -c[i] * h) * c[i] ** j - sum(a[i, k] * c[k] ** (j - 1) for k in range(i)) / fact)
        stage_rows.append(tuple(row))
    weighted = 0.0
    if s >= 3:
        weighted = b[1] * _stage2(tab, 1) + b[2] * _stage2(tab, 2)
    return PsiReport(h, tuple(psi), tuple(stage_rows), float(weighted))


def _stage2(tab, i):
    c, a = tab.c, tab.a
    return phi(2, -c[i] * tab.h) * c[i] ** 2 - sum(a[i, k] * c[k] for k in range(i))


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    max_abs: float
    tol: float
    worst_h: float

    @property
    def passed(self) -> bool:
        return self.max_abs <= self.tol


@dataclass(frozen=True)
class OrderAudit:
    spec: TableauSpec
    checks: tuple[ConditionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(chk.passed for chk in self.checks)

    @property
    def violated(self) -> tuple[str, ...]:
        return tuple(chk.name for chk in self.checks if not chk.passed)


AUDIT_TOL = 1e-10
PSI3_TOL = 1e-6
PSI3_PROBE_H = 1e-8

# (name, claimed order at which it applies, extractor)
_CONDITIONS = (
    ("psi_1", 1, lambda r: r.final(1)),
    ("psi_2", 2, lambda r: r.final(2)),
    ("psi_1_2", 2, lambda r: r.stage(1, 2)),
    ("psi_1_3", 3, lambda r: r.stage(1, 3)),
    ("weighted_2", 3, lambda r: r.weighted_second),
)


def default_audit_grid() -> np.ndarray:
    return np.geomspace(1e-3, 5.0, 40)


def audit_order(spec: TableauSpec, hs=None) -> OrderAudit:
    """Check every order condition the scheme claims over a grid of step sizes.

    Third-order schemes are additionally required to have ``|psi_3| <= 1e-6``
    at ``h = 1e-8``, i.e. to satisfy the third-order condition in the limit.
    """
    if not spec.exponential:
        raise NotApplicableError(f"{spec.scheme.value} is a classical scheme")
    order = spec.scheme.claimed_order
    hs = default_audit_grid() if hs is None else np.asarray(hs, dtype=float)
    q = 3 if order >= 3 else order
    reports = [psi_report(concretize(spec, h), q) for h in hs]
    checks = []
    for name, needed, get in _CONDITIONS:
        if needed > order:
            continue
        vals = [abs(get(r)) for r in reports]
        worst = int(np.argmax(vals))
        checks.append(ConditionCheck(name, float(vals[worst]), AUDIT_TOL, float(hs[worst])))
    if order >= 3:
        r = psi_report(concretize(spec, PSI3_PROBE_H), 3)
        checks.append(ConditionCheck("psi_3_at_0", float(abs(r.final(3))), PSI3_TOL, PSI3_PROBE_H))
    return OrderAudit(spec, tuple(checks))
