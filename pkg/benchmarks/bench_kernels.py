"""Compare the compiled and numpy conditional kernels on the Potts Monte-Carlo workload.

    python3 benchmarks/bench_kernels.py [--n 200000] [--L 100] [--K 10] [--T 10]
"""
import argparse
import time

import numpy as np

from maskdiff import _pykernels
from maskdiff.oracle import PottsChain
from maskdiff.schedule import balanced_schedule, sample_labels

try:
    from maskdiff import _ckernels
except ImportError:
    _ckernels = None


def timed(fn, *args, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--L", type=int, default=100)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--T", type=int, default=10)
    ap.add_argument("--J", type=float, default=2.0)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    d = PottsChain(args.K, args.L, args.J)
    x = np.ascontiguousarray(d.sample(args.n, rng), dtype=np.int64)
    labels = sample_labels(balanced_schedule(args.L, args.T), args.n, rng)
    lk = float(np.log(args.K))

    t_py, ref = timed(_pykernels.potts_conditional_logprobs, x, labels, d.log_powers, lk, repeat=1)
    print(f"python  n={args.n} L={args.L} K={args.K}: {t_py:8.3f} s")
    if _ckernels is None:
        print("cython  extension not built")
        return
    t_c, out = timed(_ckernels.potts_conditional_logprobs, x, labels, d.log_powers, lk)
    print(f"cython  n={args.n} L={args.L} K={args.K}: {t_c:8.3f} s")
    print(f"speedup {t_py / t_c:6.1f}x   max |diff| {np.max(np.abs(out - ref)):.2e}")


if __name__ == "__main__":
    main()
