"""Benchmark the compiled kernels against the numpy fallback.

The hot path of a training iteration at desk scale is a handful of
small-vector operations (simplex projection, weight gradient + projected
step, Gaussian scores, the parameter update), where per-call dispatch
overhead dominates actual arithmetic. This script times each kernel in both
backends plus a composite "one weight-update iteration" loop.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import timeit

import numpy as np

from arml import _kernels_py

try:
    from arml import _kernels_cy
except ImportError:
    _kernels_cy = None


def bench(fn, args, repeats, number=2000):
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeats))
    return best / number


def make_case(gen, k, d):
    g_main = gen.normal(size=d)
    g_aux = gen.normal(size=(k, d))
    alpha = np.ones(k)
    theta = gen.normal(size=d)
    grad = gen.normal(size=d)
    noise = gen.normal(size=d)
    prec = np.eye(d) + 0.1
    center = gen.normal(size=d)
    v = gen.normal(size=k)

    def composite(mod):
        def one_iteration():
            new_theta = mod.step_update(theta, grad, 1e-3, noise)
            mod.gaussian_score(prec, new_theta, center)
            mod.weight_step(alpha, g_main, g_aux, 1e-3, float(k))
        return one_iteration, ()

    return {
        "project_simplex": lambda mod: (mod.project_simplex, (v, float(k))),
        "weight_gradient": lambda mod: (mod.weight_gradient,
                                        (g_main, g_aux, alpha)),
        "weight_step": lambda mod: (mod.weight_step,
                                    (alpha, g_main, g_aux, 1e-3, float(k))),
        "gaussian_score": lambda mod: (mod.gaussian_score,
                                       (prec, theta, center)),
        "step_update": lambda mod: (mod.step_update, (theta, grad, 1e-3, noise)),
        "iteration(composite)": composite,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels_cy is None:
        print("compiled kernels not built; showing numpy fallback only")

    gen = np.random.default_rng(0)
    header = f"{'kernel':<22} {'K':>3} {'d':>5} {'numpy us':>10}"
    if _kernels_cy is not None:
        header += f" {'cython us':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for k, d in ((2, 8), (4, 8), (4, 64), (8, 512)):
        table = make_case(gen, k, d)
        for name, make in table.items():
            fn_py, args_py = make(_kernels_py)
            t_py = bench(fn_py, args_py, args.repeats) * 1e6
            line = f"{name:<22} {k:>3} {d:>5} {t_py:>10.2f}"
            if _kernels_cy is not None:
                fn_cy, args_cy = make(_kernels_cy)
                t_cy = bench(fn_cy, args_cy, args.repeats) * 1e6
                line += f" {t_cy:>10.2f} {t_py / t_cy:>7.1f}x"
            print(line)
        print()


if __name__ == "__main__":
    main()
