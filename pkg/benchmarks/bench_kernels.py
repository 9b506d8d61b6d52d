"""Time the blocking-coalition scan on each available backend.

Usage: python3 benchmarks/bench_kernels.py [--n 8] [--k 4] [--repeat 5]
"""
import argparse
import time

import numpy as np

from coalform import kernels
from coalform.game import PURE_MECHANISMS
from coalform.instances import RandomCostSpec, random_monotone_oracle
from coalform.stability import enumerate_stable_structures, game_table


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--k", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    inst = random_monotone_oracle(RandomCostSpec(args.n, args.k, args.seed))
    table = game_table(inst.oracle, args.k)
    space = table.space(10**7)
    util = table.utility_stack(list(PURE_MECHANISMS))
    cur = space.current_utilities(table.utilities(PURE_MECHANISMS[0]))
    print(f"n={args.n} K={args.k}: {len(table.coalitions)} coalitions, {len(space.structures)} structures")

    results = {}
    for name, impl in sorted(kernels.available_backends().items()):
        elapsed, out = best_of(lambda: impl.scan_blocking(table.members, table.sizes, util, cur, 1e-9), args.repeat)
        results[name] = (elapsed, out)
        print(f"{name:>8}: {elapsed * 1e3:9.2f} ms")

    if len(results) > 1:
        (_, (t_py, a)), (_, (t_cy, b)) = sorted(results.items(), key=lambda kv: kv[0] != "python")
        assert np.array_equal(a, b), "backends disagree"
        print(f"scan speedup: {t_py / t_cy:.1f}x")

    # full stable-set enumeration, game table already cached
    for name, impl in sorted(kernels.available_backends().items()):
        kernels.scan_blocking, kernels.first_blocking = impl.scan_blocking, impl.first_blocking
        elapsed, stable = best_of(
            lambda: [enumerate_stable_structures(inst, kind) for kind in PURE_MECHANISMS], args.repeat)
        print(f"{name:>8}: stable sets in {elapsed * 1e3:9.2f} ms ({sum(map(len, stable))} stable)")


if __name__ == "__main__":
    main()
