"""Command-line entry point: ``expint {psi-check,convergence,defects,sample,eta-sweep}``."""
from __future__ import annotations

import argparse
import csv
import io
import sys

import numpy as np

from . import analysis
from .denoisers import GaussianMixture, default_mixture, load_mixture_config, sin_problem
from .errors import ExpintError, UsageError
from .parametrizations import Parametrization, ScheduleKind, make_schedule
from .tableaus import SchemeId, audit_order, make_spec
from .steppers import expected_nfe, method_spec, solve

DEFECTS_HEADER = ("method", "schedule", "rho", "nfe", "defect_l1", "defect_l2")
CONVERGENCE_HEADER = ("method", "problem", "n_steps", "error", "slope", "r2")
PSI_HEADER = ("scheme", "c2", "c3", "gamma", "condition", "max_abs", "tol", "worst_h", "status")
ETA_HEADER = ("method", "eta", "nfe", "mean_error", "var_error", "mean_log_density", "clamped_steps")
EXIT_USAGE = 2
EXIT_ACCOUNTING = 3


class AccountingError(ExpintError):
    """An evaluation counter disagreed with the documented NFE formula."""


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise UsageError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in vals]


def _methods(text: str) -> list[str]:
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    if names == ["all"]:
        return [s.value for s in SchemeId]
    return names


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write(args, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _problem(args) -> analysis.OracleProblem:
    kind = args.problem
    if kind == "mixture":
        m = load_mixture_config(args.config) if args.config else default_mixture(args.dim, seed=args.mixture_seed)
        return analysis.MixtureProblem(m, args.sigma_min, args.sigma_max)
    if args.config:
        raise UsageError("--config only applies to --problem mixture")
    if kind == "gaussian":
        m = GaussianMixture(np.ones(1), np.zeros((1, args.dim)), np.array([args.scale]))
        return analysis.MixtureProblem(m, args.sigma_min, args.sigma_max, name="gaussian")
    if kind == "sin":
        prob = sin_problem(args.dim, args.problem_seed)
        return analysis.ManufacturedOracle(prob, args.lam_start, args.lam_span)
    kappa = np.full(args.dim, args.kappa) if args.kappa_vector is None else np.asarray(_floats(args.kappa_vector))
    return analysis.ConstantProblem(kappa, args.sigma_min, args.sigma_max)


def _check_nfe(method, n_steps, final_denoise, counted) -> None:
    want = expected_nfe(method, n_steps, final_denoise)
    if counted != want:
        raise AccountingError(f"{method}: counted {counted} evaluations, formula gives {want}")


def cmd_psi_check(args) -> None:
    rows = []
    for name in _methods(args.scheme):
        spec = make_spec(name, c2=args.c2, c3=args.c3, gamma=args.gamma)
        if not spec.exponential:
            continue
        audit = audit_order(spec)
        c = spec.c
        for chk in audit.checks:
            rows.append((spec.scheme.value, c[1] if len(c) > 1 else None, c[2] if len(c) > 2 else None, spec.gamma,
                         chk.name, chk.max_abs, chk.tol, chk.worst_h, "PASS" if chk.passed else "FAIL"))
    if not rows:
        raise UsageError("psi-check needs at least one exponential scheme")
    _write(args, PSI_HEADER, rows)


def cmd_convergence(args) -> None:
    prob = _problem(args)
    rows = []
    for name in _methods(args.scheme):
        spec, ms = method_spec(name, args.c2, args.c3, args.gamma)
        method = name if ms else spec
        est = analysis.estimate_order(prob, method, args.steps, args.schedule, args.param)
        for n, err in est.points:
            rows.append((est.method, prob.name, n, err, est.slope, est.r2))
    _write(args, CONVERGENCE_HEADER, rows)


def cmd_defects(args) -> None:
    prob = _problem(args)
    methods = []
    for name in _methods(args.scheme):
        spec, ms = method_spec(name, args.c2, args.c3, args.gamma)
        methods.append(name if ms else spec)
    reports = analysis.measure_defects(prob, methods, args.nfe, args.schedule, args.rho, args.param, args.batch,
                                       args.seed, args.final_denoise)
    for r in reports:
        _check_nfe(r.method, r.n_steps, args.final_denoise, r.nfe)
    _write(args, DEFECTS_HEADER, [(r.method, r.schedule, r.rho, r.nfe, r.defect_l1, r.defect_l2) for r in reports])


def _steps(args, method) -> int:
    if args.steps is not None and args.nfe is not None:
        raise UsageError("give either --steps or --nfe, not both")
    if args.steps is not None:
        if len(args.steps) != 1:
            raise UsageError("sample takes a single --steps value")
        return args.steps[0]
    nfe = args.nfe[0] if args.nfe else 20
    return analysis.steps_for_nfe(method, nfe, args.final_denoise)


def cmd_sample(args) -> None:
    names = _methods(args.scheme)
    if len(names) != 1:
        raise UsageError("sample runs exactly one scheme")
    spec, ms = method_spec(names[0], args.c2, args.c3, args.gamma)
    method = names[0] if ms else spec
    prob = _problem(args)
    n = _steps(args, method)
    sched = make_schedule(args.schedule, prob.sigma_min, prob.sigma_max, n + 1, args.rho)
    x0 = None
    if args.x0 is not None:
        x0 = np.asarray(_floats(args.x0))
        if x0.shape != (prob.dim,):
            raise UsageError(f"--x0 needs {prob.dim} values")
        x0 = np.tile(x0, (args.batch, 1))
    elif not isinstance(prob, analysis.MixtureProblem | analysis.ConstantProblem):
        x0 = prob.initial(np.random.default_rng(args.seed), args.batch)
    param = args.param if spec.exponential else Parametrization.EDM
    run = solve(sched, method, param, prob.denoiser(), x0=x0, batch=args.batch, seed=args.seed,
                eta=args.eta, final_denoise=args.final_denoise)
    _check_nfe(method, n, args.final_denoise, run.nfe)
    header = ("step", "sample", "sigma") + tuple(f"x{j}" for j in range(prob.dim))
    rows = []
    for i, (sigma, x) in enumerate(run.trace):
        for b, xb in enumerate(np.atleast_2d(x)):
            rows.append((i, b, sigma, *map(float, xb)))
    if args.final_denoise:
        for b, xb in enumerate(np.atleast_2d(run.x_final)):
            rows.append(("final", b, sched.sigma_min, *map(float, xb)))
    _write(args, header, rows)
    print(f"method={run.method} steps={n} nfe={run.nfe} expected_nfe={expected_nfe(method, n, args.final_denoise)}",
          file=sys.stderr)


def cmd_eta_sweep(args) -> None:
    prob = _problem(args)
    if not isinstance(prob, analysis.MixtureProblem):
        raise UsageError("eta-sweep needs --problem mixture or gaussian")
    names = _methods(args.scheme)
    etas = args.eta_list if args.eta_list is not None else [0.0, 0.05, 0.1, 0.2, 0.5, 1.0]
    nfe = args.nfe[0] if args.nfe else 20
    rows = []
    for name in names:
        spec, ms = method_spec(name, args.c2, args.c3, args.gamma)
        if ms:
            raise UsageError("eta-sweep needs a single-step scheme")
        for p in analysis.eta_sweep(prob, etas, nfe, spec, args.schedule, args.rho, args.param, args.batch, args.seed):
            _check_nfe(spec, analysis.steps_for_nfe(spec, nfe), False, p.nfe)
            rows.append((p.method, p.eta, p.nfe, p.mean_error, p.var_error, p.mean_log_density, p.clamped_steps))
    _write(args, ETA_HEADER, rows)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scheme", default="res2", help="scheme id, comma-separated list or 'all'; 'res2m' is multistep")
    common.add_argument("--c2", type=float, default=None)
    common.add_argument("--c3", type=float, default=None)
    common.add_argument("--gamma", type=float, default=None)
    common.add_argument("--param", type=Parametrization, choices=list(Parametrization), default=Parametrization.LOGSNR,
                        metavar="{" + ",".join(p.value for p in Parametrization) + "}")
    common.add_argument("--schedule", type=ScheduleKind, choices=list(ScheduleKind), default=ScheduleKind.EDM_RHO,
                        metavar="{" + ",".join(s.value for s in ScheduleKind) + "}")
    common.add_argument("--rho", type=float, default=7.0)
    common.add_argument("--nfe", type=_ints, default=None, help="comma-separated evaluation budgets")
    common.add_argument("--steps", type=_ints, default=None, help="comma-separated step counts")
    common.add_argument("--eta", type=float, default=None, help="churn level for sample")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--batch", type=int, default=None)
    common.add_argument("--final-denoise", action="store_true")
    common.add_argument("--out", default=None, help="write CSV here instead of stdout")
    common.add_argument("--config", default=None, help="key=value mixture file")
    common.add_argument("--problem", choices=["mixture", "gaussian", "sin", "const"], default=None)
    common.add_argument("--dim", type=int, default=None)
    common.add_argument("--mixture-seed", type=int, default=0)
    common.add_argument("--problem-seed", type=int, default=None)
    common.add_argument("--scale", type=float, default=0.5, help="component scale of the gaussian problem")
    common.add_argument("--kappa", type=float, default=1.0, help="value of the constant denoiser")
    common.add_argument("--kappa-vector", default=None)
    common.add_argument("--sigma-min", type=float, default=0.002)
    common.add_argument("--sigma-max", type=float, default=80.0)
    common.add_argument("--lam-start", type=float, default=0.0)
    common.add_argument("--lam-span", type=float, default=4.0)
    common.add_argument("--x0", default=None, help="comma-separated initial state for sample")

    parser = argparse.ArgumentParser(prog="expint", description="Exponential integrators for diffusion sampling.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("psi-check", parents=[common], help="audit order conditions").set_defaults(
        func=cmd_psi_check)
    sub.add_parser("convergence", parents=[common], help="empirical convergence order").set_defaults(
        func=cmd_convergence)
    sub.add_parser("defects", parents=[common], help="terminal defects against a reference").set_defaults(
        func=cmd_defects)
    sub.add_parser("sample", parents=[common], help="one sampling run with its trace").set_defaults(
        func=cmd_sample)
    eta = sub.add_parser("eta-sweep", parents=[common], help="terminal statistics against churn level")
    eta.add_argument("--eta-list", type=_floats, default=None)
    eta.set_defaults(func=cmd_eta_sweep)
    return parser


def _fill_defaults(args, argv) -> None:
    given = {a.split("=", 1)[0] for a in argv}
    if args.command == "psi-check" and "--scheme" not in given:
        args.scheme = "all"
    if args.problem is None:
        args.problem = "sin" if args.command == "convergence" else "mixture"
    if args.dim is None:
        args.dim = 4 if args.problem == "sin" else 8
    if args.batch is None:
        args.batch = {"eta-sweep": 512, "sample": 1}.get(args.command, 16)
    if args.command == "convergence" and "--schedule" not in given:
        args.schedule = ScheduleKind.UNIFORM_LAMBDA
    if args.steps is None and args.command == "convergence":
        args.steps = [8, 16, 32, 64, 128]
    if args.nfe is None and args.command == "defects":
        args.nfe = [10, 20, 50]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _fill_defaults(args, argv)
    try:
        args.func(args)
    except AccountingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ACCOUNTING
    except (ExpintError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
