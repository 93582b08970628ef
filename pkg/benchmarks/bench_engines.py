"""Compare the compiled and numpy backends on the built-in examples.

Usage: python benchmarks/bench_engines.py [--paths 64] [--level 13] [--repeat 3]
"""

import argparse
import time

import numpy as np

from sdepca import HAVE_COMPILED, make_example
from sdepca.engine import integrate
from sdepca.noise import TickGrid, sample_master
from sdepca.steppers import StepPolicy

CASES = [
    (1, "adaptive_milstein", dict(M=64)),
    (1, "backward_milstein", dict(uniform_step=None)),
    (3, "adaptive_milstein", dict(M=16)),
    (3, "backward_euler", dict(uniform_step=None)),
]


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--level", type=int, default=13)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAVE_COMPILED:
        print("compiled core not built; only the numpy backend is available")

    print(f"{'case':<32} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'max |diff|':>11}")
    for example, solver, kw in CASES:
        problem, cert = make_example(example)
        grid = TickGrid(args.level, problem.horizon)
        if "uniform_step" in kw:
            policy = StepPolicy(grid, uniform_step=grid.tick)
        else:
            policy = StepPolicy(grid, M=kw["M"], step_fn=cert.step_fn)
        noises = [sample_master(grid, problem.noise_dim, 1, i) for i in range(args.paths)]
        t_py, r_py = best_of(lambda: integrate(problem, policy, solver, noises, backend="python"), args.repeat)
        label = f"ex{example} {solver}" + (f" M={kw['M']}" if "M" in kw else f" 2^-{args.level}")
        if HAVE_COMPILED:
            t_c, r_c = best_of(lambda: integrate(problem, policy, solver, noises, backend="compiled"), args.repeat)
            diff = float(np.max(np.abs(r_py.terminal - r_c.terminal)))
            print(f"{label:<32} {t_py:11.4f} {t_c:13.4f} {t_py / t_c:8.1f} {diff:11.2e}")
        else:
            print(f"{label:<32} {t_py:11.4f} {'-':>13} {'-':>8} {'-':>11}")


if __name__ == "__main__":
    main()
