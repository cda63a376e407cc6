"""Compiled vs pure-Python rollout kernels on planner-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from hiernav import _kernels_py, kernels
from hiernav.planner import _flatten, policy_table
from hiernav.gridworld import Pose


def inputs(seed: int = 0, size: int = 41):
    """Random opaque field and the full L=6 policy set rolled out from the centre."""
    rng = np.random.default_rng(seed)
    opaque = (rng.random((size, size)) < 0.15).astype(np.uint8)
    c = size // 2
    opaque[c, c] = 0
    gain = rng.random((size, size))
    table = policy_table(6, 0)
    rows = np.arange(len(table.policies))
    px, py, ph, ptr, _ = _flatten(table, Pose(c, c, 0), rows, table.length)
    return opaque, gain, px, py, ph, ptr, 1 - opaque, Pose(c, c, 0)


def timeit(fn, repeat: int) -> float:
    fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled extension unavailable; only the fallback is timed")
    compiled = kernels._impl
    opaque, gain, px, py, ph, ptr, passable, s = inputs()
    cases = {
        "rollout_visibility": lambda impl: kernels.rollout_visibility(opaque, px, py, ph, impl=impl),
        "policy_gains": lambda impl: kernels.policy_gains(gain, opaque, px, py, ph, ptr, 1.0, impl=impl),
        "grid_distance": lambda impl: kernels.grid_distance(passable, s.x, s.y, impl=impl),
    }
    print(f"{'kernel':<20}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases.items():
        tp = timeit(lambda: fn(_kernels_py), max(args.repeat // 10, 3))
        tc = timeit(lambda: fn(compiled), args.repeat)
        print(f"{name:<20}{tp * 1e3:>12.3f}{tc * 1e3:>14.3f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
