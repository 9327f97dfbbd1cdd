"""Compare the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 500] [--k 6] [--repeat 20]

Both implementations are imported side by side, so the environment switch
does not matter here. Outputs are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from bppcd import kernels
from bppcd.chain import TimeGrid, bpp_log_transitions


def problem(n, k, seed=0):
    rng = np.random.default_rng(seed)
    days = np.sort(rng.uniform(0, 20 * 365, n))
    grid = TimeGrid.from_raw(days - days[0])
    loglik = rng.normal(size=(n, k))
    return loglik, bpp_log_transitions(k, grid.times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--k", type=int, default=6)
    ap.add_argument("--draws", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if kernels.forward_numba is None:
        raise SystemExit("numba is not installed")

    ll, lt = problem(args.n, args.k)
    la = kernels.forward_numpy(ll, lt)
    u = np.random.default_rng(1).random((args.draws, args.n))
    pairs = {
        "forward": (lambda: kernels.forward_numba(ll, lt), lambda: kernels.forward_numpy(ll, lt)),
        "backward": (lambda: kernels.backward_numba(ll, lt), lambda: kernels.backward_numpy(ll, lt)),
        f"backward_sample x{args.draws}": (
            lambda: kernels.backward_sample_numba(la, lt, u),
            lambda: kernels.backward_sample_numpy(la, lt, u),
        ),
    }
    print(f"n={args.n} k={args.k} repeat={args.repeat}")
    print(f"{'kernel':<24}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (fast, slow) in pairs.items():
        a, b = fast(), slow()  # also warms up the JIT
        assert np.allclose(a, b, rtol=1e-10, atol=1e-10, equal_nan=True), name
        tf = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        ts = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<24}{tf:>12.3f}{ts:>12.3f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
