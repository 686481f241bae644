"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from expint import _kernels_py
from expint._backend import compiled_kernels

RES3 = _kernels_py.RES3


def cases(mod, rng):
    x = rng.standard_normal((64, 8))
    means = rng.standard_normal((5, 8))
    logw = np.log(np.full(5, 0.2))
    ssq = np.full(5, 0.25)
    zs = np.linspace(-20.0, -1e-3, 200)
    return {
        "phi x200": lambda: [mod.phi(2, z) for z in zs],
        "phi_table(3) x200": lambda: [mod.phi_table(3, z) for z in zs],
        "exp_coefficients x200": lambda: [mod.exp_coefficients(RES3, 0.5, 0.75, 0.75, -z) for z in zs],
        "mixture_denoise 64x8, K=5": lambda: mod.mixture_denoise(x, 1.3, logw, means, ssq),
    }


SOLVE = (
    "from expint import default_mixture, edm_schedule, mixture_denoiser, solve;"
    "d = mixture_denoiser(default_mixture());"
    "s = edm_schedule(0.002, 80.0, 51, 7.0);"
    "import timeit;"
    "print(min(timeit.repeat(lambda: solve(s, 'res3', 'logsnr', d, batch=64), number=1, repeat={r})))"
)


def time_solve(backend, repeat):
    env = dict(os.environ, EXPINT_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", SOLVE.format(r=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    compiled = compiled_kernels()
    if compiled is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    py, cy = cases(_kernels_py, rng), cases(compiled, rng)
    print(f"{'kernel':32s} {'python (ms)':>12s} {'compiled (ms)':>14s} {'speedup':>8s}")
    rows = [(name, min(timeit.repeat(py[name], number=1, repeat=args.repeat)),
             min(timeit.repeat(cy[name], number=1, repeat=args.repeat))) for name in py]
    rows.append(("solve res3, 50 steps, batch 64", time_solve("python", args.repeat),
                 time_solve("compiled", args.repeat)))
    for name, tp, tc in rows:
        print(f"{name:32s} {1e3 * tp:12.3f} {1e3 * tc:14.3f} {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
