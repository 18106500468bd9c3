"""Benchmark the numba-compiled kernels against the pure-NumPy fallback.

Runs the hot kernels both compiled and uncompiled in the same process
(when numba is enabled, the fallback is the dispatcher's original Python
function) and reports per-call timings.  Launch with CBFLEARN_NUMBA=0 to
time a process that never compiles anything.

Usage: python benchmarks/backend_bench.py [--repeats N]
"""

import argparse
import time

import numpy as np

from cbflearn import init_network
from cbflearn import kernels
from cbflearn._backend import BACKEND, NUMBA_ENABLED


def bench(fn, args, repeats, warmup=3):
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    net2 = init_network(1, [2, 128, 128, 1])
    net4 = init_network(2, [4, 128, 128, 1])
    k2 = np.array([3.16, 4.04])
    k4 = np.array([4.0, -20.0, 5.0, -6.0])
    batch = 64
    xs = rng.normal(size=(batch, 2))
    fgu = rng.normal(size=(batch, 2))
    hand_h = rng.normal(size=batch)
    hand_g = rng.normal(size=(batch, 2))
    dplus = rng.normal(size=batch)
    xd = rng.normal(size=(batch, 2))
    hand_hd = rng.normal(size=batch)
    dminus = rng.normal(size=batch)

    cases = [
        ("network value+jacobian",
         kernels.mlp3_value_jac,
         (rng.normal(size=2), *net2.kernel_weights())),
        ("batched loss gradient (64)",
         kernels.mlp3_loss_grad,
         (*net2.kernel_weights(), xs, fgu, hand_h, hand_g, dplus,
          xd, hand_hd, dminus, 5.0, 2.0, 1.0)),
        ("filtered rollout, integrator (50 steps)",
         kernels.rollout_filter_integrator,
         (np.array([-12.0, 0.5]), 50, 0.02, k2, 5.0, 2.0,
          *net2.kernel_weights(), True)),
        ("filtered rollout, ball-on-beam (50 steps)",
         kernels.rollout_filter_ballbeam,
         (np.array([1.0, 0.0, 0.0, 0.0]), 50, 0.01, k4, 2.0, 1.0, 0.5,
          0.5, 9.81, 0.5, *net4.kernel_weights(), True)),
    ]

    print(f"active backend: {BACKEND}")
    header = f"{'kernel':44s} {'active':>12s} {'pure numpy':>12s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))
    for name, fn, fn_args in cases:
        active = bench(fn, fn_args, args.repeats)
        if NUMBA_ENABLED:
            plain = bench(fn.py_func, fn_args, args.repeats)
        else:
            plain = active
        ratio = plain / active if active > 0 else float("inf")
        print(f"{name:44s} {active * 1e6:10.1f}us {plain * 1e6:10.1f}us "
              f"{ratio:8.1f}x")


if __name__ == "__main__":
    main()
