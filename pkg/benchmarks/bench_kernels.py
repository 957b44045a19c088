"""Time the compiled kernel core against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--sizes 500,2000,8000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from car_heavytail import _backend


def _cases(m: int, rng: np.random.Generator):
    sample = np.sort(rng.standard_cauchy(m))
    y = rng.standard_cauchy(m)
    sigma = 1.06 * 1.5 * m ** (-1 / 7)
    u = rng.random(m)
    codes = rng.integers(0, 2, size=(m, 2)).astype(np.int64)
    levels = np.array([2, 2], dtype=np.int64)
    weights = np.array([0.5, 0.5])
    return {
        "kernel_sums/triweight": lambda mod: mod.kernel_sums(sample, y, sigma, _backend.TRIWEIGHT),
        "kernel_sums/gaussian": lambda mod: mod.kernel_sums(sample, y, sigma, _backend.GAUSSIAN),
        "efron_sequence": lambda mod: mod.efron_sequence(u, 0.5, 0.85),
        "minimization_sequence": lambda mod: mod.minimization_sequence(codes, levels, weights, u, 0.5, 0.85),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="500,2000,8000")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    impls = _backend.implementations()
    if "compiled" not in impls:
        print("compiled extension not built; only the fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'routine':<24}{'m':>7}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for m in (int(s) for s in args.sizes.split(",")):
        for name, fn in _cases(m, rng).items():
            times = {}
            for impl_name, mod in impls.items():
                times[impl_name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            cells = "".join(f"{times[k] * 1e3:>12.3f}ms" for k in impls)
            print(f"{name:<24}{m:>7}{cells}{speed:>9.1f}x")


if __name__ == "__main__":
    main()
