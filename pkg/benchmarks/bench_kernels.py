"""Compare the compiled and numpy generation kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--draws N] [--repeat R]

Two levels are timed: one call of ``coupled_generation`` on fixed uniforms, and
a full coupled path to the horizon ``n1`` (uniform generation included).
"""

import argparse
import time

import numpy as np

from ddbranch import kernels
from ddbranch.offspring import make_model
from ddbranch.simulate import horizon, simulate_coupled


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_kernel(model, draws, repeat):
    u = np.random.default_rng(0).random(draws)
    t0, t1 = model.cdf_table_at_zero, model.cdf_table(0.8)
    out = {}
    for name in sorted(kernels.BACKENDS):
        kernel = kernels.get_kernel(name)
        result = kernel(t0, t1, u, draws // 2)
        out[name] = (best_of(lambda: kernel(t0, t1, u, draws // 2), repeat), result)
    return out


def bench_path(model, K, repeat):
    n = horizon(K, model.rho).n1
    out = {}
    for name in sorted(kernels.BACKENDS):
        path = simulate_coupled(model, K, n, seed=1, backend=name)
        out[name] = (best_of(lambda: simulate_coupled(model, K, n, seed=1, backend=name), repeat),
                     int(path.y.sum()))
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--draws", type=int, default=2_000_000, help="uniforms per kernel call")
    parser.add_argument("--K", type=int, default=2**18, help="carrying capacity for the path benchmark")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    print(f"backends: {sorted(kernels.BACKENDS)} (default {kernels.BACKEND})")
    print(f"{'family':<18}{'level':<8}{'backend':<8}{'seconds':>10}{'ns/draw':>10}  check")
    for family in ("geometric", "ricker", "binary_splitting"):
        model = make_model(family)
        for level, res, count in (
            ("kernel", bench_kernel(model, args.draws, args.repeat), None),
            ("path", bench_path(model, args.K, args.repeat), "y"),
        ):
            checks = {v[1] for v in res.values()}
            for name, (t, check) in res.items():
                draws = args.draws if count is None else check
                print(f"{family:<18}{level:<8}{name:<8}{t:>10.4f}{1e9 * t / draws:>10.2f}  {check}")
            if len(checks) != 1:
                raise SystemExit(f"backends disagree for {family} at {level} level")


if __name__ == "__main__":
    main()
