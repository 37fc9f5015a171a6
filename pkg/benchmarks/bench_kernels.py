"""Compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Each kernel is called with identical inputs on both backends; results are
checked for agreement before timings are reported.
"""
from __future__ import annotations

import argparse
import random
import time

from dcwc import _purekernels as pure
from dcwc.sim import DcwcWorld, WorldSpec

try:
    from dcwc import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def _best(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _agree(a, b) -> bool:
    if isinstance(a, float):
        return abs(a - b) < 1e-9
    if isinstance(a, tuple) and len(a) == 2 and isinstance(a[1], int):  # (flows, sweeps)
        return list(a[0]) == list(b[0]) and a[1] == b[1]
    return all(abs(x - y) < 1e-9 for x, y in zip(a, b)) and len(a) == len(b)


def cases():
    world = DcwcWorld(WorldSpec(fanout_n=2, rounds_l=3, settlement_timelock_t=20))
    t = world.enumeration_table()
    enum_args = (t.n_actors, 0.3, t.holder, t.round, t.group, t.signer_ptr, t.signer_idx, t.share, t.max_round)
    yield f"failure_enumeration ({t.n_actors} actors)", "failure_enumeration", enum_args, lambda r: r[0]

    yield "subset_inclusion (sizes 3,9 d=2)", "subset_inclusion", ([3, 9, 27], 0.3, 2), lambda r: r
    yield "subset_inclusion (sizes 2,4,8 d=3)", "subset_inclusion", ([2, 4, 8], 0.3, 3), lambda r: r

    rng = random.Random(1)
    n = 400
    succ = [rng.randrange(n) if rng.random() < 0.9 else -1 for _ in range(n)]
    succ = [s if s != i else -1 for i, s in enumerate(succ)]
    init = [rng.randrange(5) for _ in range(n)]
    commit = [rng.randrange(50) for _ in range(n)]
    yield f"greatest_fixpoint ({n} vertices)", "greatest_fixpoint", (succ, init, commit), lambda r: r


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the fallback can run")
    print(f"{'kernel':<40}{'python s':>12}{'cython s':>12}{'speedup':>10}")
    for label, name, call_args, key in cases():
        py_fn = getattr(pure, name)
        py_time = _best(lambda: py_fn(*call_args), args.repeat)
        if compiled is None:
            print(f"{label:<40}{py_time:>12.4f}{'-':>12}{'-':>10}")
            continue
        c_fn = getattr(compiled, name)
        if not _agree(key(py_fn(*call_args)), key(c_fn(*call_args))):
            raise SystemExit(f"backends disagree on {label}")
        c_time = _best(lambda: c_fn(*call_args), args.repeat)
        print(f"{label:<40}{py_time:>12.4f}{c_time:>12.4f}{py_time / c_time:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
