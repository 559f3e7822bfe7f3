"""Time the compiled generator kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--n 100000] [--repeat 5]

Both backends are run on the same inputs; the script also reports the
largest absolute difference between their outputs (expected 0.0).
"""

import argparse
import time

import numpy as np

from posl._kernels import arma_filter, backend_module, mar_filter


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ns = ap.parse_args(argv)

    try:
        backend_module("cython")
    except ImportError:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return 1

    rng = np.random.default_rng(ns.seed)
    n = ns.n
    eps = rng.standard_normal(n)
    ar = np.array([[0.4, 0.2, 0.1, 0.05, 0.05], [0.0] * 5])
    ma = np.array([[0.0] * 5, [-0.4, 0.3, -0.2, 0.1, -0.05]])
    regime = (np.arange(n) >= n // 2).astype(np.int64)
    level = np.full(n, 1.5)
    z = rng.standard_normal(n)
    comp = rng.choice(2, size=n, p=[0.6, 0.4]).astype(np.int64)
    mar_ar = np.array([[0.5], [0.2]])
    sd, probs = np.array([0.5, 1.5]), np.array([0.6, 0.4])

    cases = {
        "arma_filter": lambda b: arma_filter(eps, ar, ma, regime, level, backend=b),
        "mar_filter": lambda b: mar_filter(z, comp, mar_ar, sd, probs, level, backend=b),
    }
    print(f"n={n} repeat={ns.repeat}")
    print(f"{'kernel':<12} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in cases.items():
        tp, (yp, mp) = _best(lambda: fn("python"), ns.repeat)
        tc, (yc, mc) = _best(lambda: fn("cython"), ns.repeat)
        diff = max(np.max(np.abs(yp - yc)), np.max(np.abs(mp - mc)))
        print(f"{name:<12} {tp:>10.4f} {tc:>10.4f} {tp / tc:>7.1f}x {diff:>11.3g}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
