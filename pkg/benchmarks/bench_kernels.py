"""Time the compiled clustering kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --sizes 200 500 1000 --repeat 3
"""
import argparse
import time

import numpy as np

from kgfit import _fallback
from kgfit.clustering import cosine_distance_matrix

try:
    from kgfit import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[200, 500, 1000])
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    impls = {"python": _fallback}
    if _core is not None:
        impls["cython"] = _core
    else:
        print("compiled extension not built; timing the fallback only")

    rng = np.random.default_rng(args.seed)
    header = f"{'kernel':<12}{'n':>7}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}"
    print(header)
    for n in args.sizes:
        D = cosine_distance_matrix(rng.normal(size=(n, args.dim)))
        labels = rng.integers(0, max(2, n // 20), size=n).astype(np.int64)
        k = int(labels.max()) + 1
        for kernel in ("linkage", "silhouette"):
            row = {}
            for name, mod in impls.items():
                if kernel == "linkage":
                    row[name] = best_of(lambda: mod.average_linkage(D.copy()), args.repeat)
                else:
                    row[name] = best_of(lambda: mod.silhouette_samples(D, labels, k), args.repeat)
            speed = f"{row['python'] / row['cython']:.1f}x" if "cython" in row else "-"
            print(f"{kernel:<12}{n:>7}" + "".join(f"{row[name]:>11.4f}s" for name in impls) + f"{speed:>10}")


if __name__ == "__main__":
    main()
