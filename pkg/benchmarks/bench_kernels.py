"""Time the per-cell operator kernel on the compiled and pure-Python backends.

    python3 benchmarks/bench_kernels.py --family triangular --levels 3..5 --degree 2
"""
import argparse
import statistics
import time

import numpy as np

from wgls import kernels
from wgls.cli import parse_levels
from wgls.convergence import make_problem
from wgls.polymesh import generate_nonconvex_polygonal, generate_triangular
from wgls.weakcalc import WeakSpace


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--family", choices=("triangular", "polygonal"), default="triangular")
    p.add_argument("--levels", default="3..5")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the Python backend is timed")
    gen = generate_triangular if args.family == "triangular" else generate_nonconvex_polygonal
    prob = make_problem("sin", 1.0)
    lo, hi = parse_levels(args.levels)

    header = f"{'level':>5} {'cells':>7} " + " ".join(f"{name + ' [s]':>12}" for name in backends)
    if "cython" in backends:
        header += f" {'speedup':>8} {'rel diff':>9}"
    print(header)
    for level in range(lo, hi + 1):
        space = WeakSpace(gen(level), args.degree)
        space.quadrature  # build outside the timed region
        best, ops = {}, {}
        for name, impl in backends.items():
            run = lambda impl=impl: space.local_operators(prob.beta, prob.c, prob.f, impl=impl)  # noqa: E731
            ops[name] = run()
            best[name] = best_of(run, args.repeat)[0]
        line = f"{level:>5} {space.mesh.n_cells:>7} " + " ".join(f"{best[n]:>12.4f}" for n in backends)
        if "cython" in backends:
            diff = max(np.abs(getattr(ops["python"], f) - getattr(ops["cython"], f)).max()
                       / np.abs(getattr(ops["python"], f)).max() for f in ("ls", "stab", "rhs", "grad"))
            line += f" {best['python'] / best['cython']:>8.1f} {diff:>9.1e}"
        print(line)


if __name__ == "__main__":
    main()
