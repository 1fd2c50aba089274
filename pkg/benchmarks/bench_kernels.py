"""Compare the compiled and pure-Python trilinear kernels.

Usage: python benchmarks/bench_kernels.py [--n 32] [--points 39168] [--repeat 7]

The default point count matches the desk-scale radial trajectory
(102 shots x 384 samples). Times are the best of ``--repeat`` runs.
"""
import argparse
import timeit

import numpy as np

from flat3d import _kernels_py

try:
    from flat3d import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(mod, grid, idx, vals, n):
    acc = np.zeros((idx.shape[0], 3))
    return {
        "sample": lambda: mod.sample(grid, idx),
        "spread": lambda: mod.spread(vals, idx, n),
        "sample_and_grad": lambda: mod.sample_and_grad(grid, idx),
        "gather_accumulate": lambda: mod.gather_accumulate(grid, idx, vals, acc),
    }


def best_ms(fn, repeat):
    number = 5
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--points", type=int, default=102 * 384)
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    n = args.n
    grid = rng.normal(size=(n, n, n)) + 1j * rng.normal(size=(n, n, n))
    idx = rng.uniform(0, n, size=(args.points, 3))
    vals = rng.normal(size=args.points) + 1j * rng.normal(size=args.points)

    backends = {"python": _kernels_py}
    if _kernels is not None:
        backends["cython"] = _kernels
    results = {name: {k: best_ms(f, args.repeat) for k, f in cases(mod, grid, idx, vals, n).items()}
               for name, mod in backends.items()}

    # both backends must agree before timings mean anything
    if _kernels is not None:
        for k in ("sample", "sample_and_grad"):
            a = cases(_kernels, grid, idx, vals, n)[k]()
            b = cases(_kernels_py, grid, idx, vals, n)[k]()
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12), k

    print(f"n={n} points={args.points} (best of {args.repeat}, ms per call)")
    head = f"{'kernel':<20}" + "".join(f"{b:>10}" for b in backends)
    if "cython" in backends:
        head += f"{'speedup':>10}"
    print(head)
    for k in results["python"]:
        row = f"{k:<20}" + "".join(f"{results[b][k]:>10.3f}" for b in backends)
        if "cython" in backends:
            row += f"{results['python'][k] / results['cython'][k]:>9.1f}x"
        print(row)
    if _kernels is None:
        print("compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
