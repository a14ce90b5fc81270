"""Timing comparison of the numba and numpy kernel backends.

Run: python3 benchmarks/bench_kernels.py [--size 2000000] [--repeat 5]

Each kernel is warmed once per backend before timing so numba's compile cost
is not counted. Reported numbers are the best of ``repeat`` runs.
"""

import argparse
import time

import numpy as np

from stepshape import kernels


def _inputs(size: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    logp_new = rng.uniform(-3.0, -0.05, size)
    logp_old = logp_new + rng.uniform(-0.3, 0.3, size)
    token_adv = rng.uniform(-2.0, 2.0, size)
    think = rng.random(size) < 0.15
    return logp_new, logp_old, token_adv, think


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=2_000_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    logp_new, logp_old, token_adv, think = _inputs(args.size)
    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    if "numba" not in backends:
        print("numba unavailable; timing the numpy backend only")

    cases = {
        "fill_think_mean": lambda b: kernels.fill_think_mean(token_adv.copy(), think, backend=b),
        "policy_term_sum": lambda b: kernels.policy_term_sum(logp_new, logp_old, token_adv, 0.2, backend=b),
        "kl_term_sum": lambda b: kernels.kl_term_sum(logp_new, logp_old, backend=b),
    }

    print(f"size={args.size} repeat={args.repeat} (best run, seconds)")
    header = f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, call in cases.items():
        call(backends[0])  # warmup / JIT
        timings = []
        for backend in backends:
            call(backend)
            timings.append(_best_of(lambda: call(backend), args.repeat))
        row = f"{name:<18}" + "".join(f"{t:>12.6f}" for t in timings)
        if len(timings) == 2 and timings[1] > 0:
            row += f"{timings[0] / timings[1]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
