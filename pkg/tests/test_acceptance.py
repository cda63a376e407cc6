"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from hiernav.harness import RunConfig, run_batch, run_convergence

pytestmark = pytest.mark.acceptance

TESTS = Path(__file__).parent
SEEDS = list(range(30))


@pytest.fixture(scope="module")
def explore_3x3():
    t0 = time.time()
    cfg = RunConfig(rooms=(3, 3), width=4, seeds=SEEDS, stop_on_success=True, log_ticks=False)
    return run_batch(cfg), time.time() - t0


def test_1_place_convergence(acceptance_log):
    t0 = time.time()
    worst, rates = {}, {}
    for width in range(4, 9):
        limit = 5 if width <= 7 else 8
        n = [run_convergence(width, seed)["observations_to_converge"] for seed in range(25)]
        ok = [k is not None and k <= limit for k in n]
        rates[width] = float(np.mean(ok))
        worst[width] = max(k if k is not None else 99 for k in n)
    secs = time.time() - t0
    passed = all(r >= 0.9 for r in rates.values()) and secs < 60
    acceptance_log("1 place convergence", passed,
                   f"within-limit rate by width {rates}, worst {worst}, {secs:.1f}s")
    assert passed


def test_2_exploration(explore_3x3, acceptance_log):
    small, t_small = explore_3x3
    rate_small = float(np.mean([r.metrics.success for r in small]))
    t0 = time.time()
    cfg = RunConfig(rooms=(4, 5), width=4, seeds=SEEDS, stop_on_success=True, log_ticks=False)
    large = run_batch(cfg)
    t_large = time.time() - t0
    rate_large = float(np.mean([r.metrics.success for r in large]))
    passed = rate_small >= 0.8 and rate_large >= 0.6 and t_small < 600 and t_large < 600
    acceptance_log("2 exploration", passed,
                   f"3x3 {rate_small:.3f} ({t_small:.0f}s), 4x5 {rate_large:.3f} ({t_large:.0f}s)")
    assert passed


def test_3_goal_seeking(acceptance_log):
    cfg = RunConfig(task="goal", rooms=(3, 3), width=4, seeds=SEEDS, log_ticks=False)
    ms = [r.metrics for r in run_batch(cfg)]
    success = float(np.mean([m.success for m in ms]))
    oracle = float(np.mean([m.oracle_success for m in ms]))
    won = [m for m in ms if m.success]
    fast = float(np.mean([m.relative_steps <= 10 for m in won])) if won else 0.0
    passed = success >= 0.75 and oracle == 1.0 and fast >= 0.6
    acceptance_log("3 goal seeking", passed,
                   f"success {success:.3f}, oracle {oracle:.3f}, within 10x oracle {fast:.3f}")
    assert passed


@pytest.fixture(scope="module")
def alias_runs():
    cfg = RunConfig(task="alias", seeds=list(range(10)), log_ticks=False)
    return [r.metrics for r in run_batch(cfg)]


def test_4_aliasing(alias_runs, acceptance_log):
    counts = [(m.extra["experiences_after_first_loop"], m.extra["new_experiences_second_loop"])
              for m in alias_runs]
    good = sum(c == (4, 0) for c in counts)
    passed = good >= 9
    acceptance_log("4 aliasing fixture", passed, f"{good}/10 seeds with (4, 0); counts {counts}")
    assert passed


def test_5_info_gain_signature(alias_runs, acceptance_log):
    ratios = [m.extra["info_gain_ratio"] for m in alias_runs]
    passed = all(r < 0.25 for r in ratios)
    acceptance_log("5 info-gain signature", passed,
                   f"revisit/first ratio max {max(ratios):.3f}, mean {np.mean(ratios):.3f}")
    assert passed


def test_6_map_reconstruction(explore_3x3, acceptance_log):
    results, _ = explore_3x3
    acc = [r.metrics.map_accuracy for r in results if r.metrics.success]
    passed = bool(acc) and min(acc) >= 0.9
    acceptance_log("6 map reconstruction", passed,
                   f"{len(acc)} successful runs, accuracy min {min(acc):.3f}, mean {np.mean(acc):.3f}")
    assert passed


PROPERTY_TESTS = [
    "test_planner.py::test_softmax_normalised",
    "test_planner.py::test_softmax_monotone",
    "test_egocentric.py::test_info_gain_nonnegative",
    "test_allocentric.py::test_allo_info_gain_nonnegative",
    "test_beliefs.py::test_eig_nonnegative",
    "test_beliefs.py::test_eig_matches_enumeration",
    "test_egocentric.py::test_info_gain_matches_enumeration",
    "test_cogmap.py::test_dijkstra_matches_enumeration",
    "test_cogmap.py::test_shift_inverse",
    "test_cogmap.py::test_full_period_wraps_to_start",
    "test_planner.py::test_hypothesis_update_is_exact_bayes",
    "test_gridworld.py::test_visibility_monotone_under_opaque_removal",
    "test_harness.py::test_csv_is_deterministic_and_summary_is_exact",
]


def test_7_property_suites(acceptance_log):
    ids = [str(TESTS / t) for t in PROPERTY_TESTS]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                          capture_output=True, text=True, cwd=TESTS.parent)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    passed = proc.returncode == 0
    acceptance_log("7 property suites", passed, f"{len(ids)} suites: {tail}")
    assert passed, proc.stdout[-3000:]


MEMORY_SCRIPT = """
import json, psutil
from hiernav.harness import RunConfig, memory_profile, peak_resident_bytes
cfg = RunConfig(rooms=(4, 5), width=4, log_ticks=False)
peak = memory_profile(cfg, 0, checkpoints=(500, 1500))
rss = memory_profile(cfg, 1, checkpoints=(500, 1500), probe=lambda: psutil.Process().memory_info().rss)
print(json.dumps({"peak": peak, "rss": rss}))
"""


def test_8_scale_contract(acceptance_log):
    proc = subprocess.run([sys.executable, "-c", MEMORY_SCRIPT], capture_output=True, text=True,
                          check=True)
    out = json.loads(proc.stdout.strip().splitlines()[-1])
    peak, rss = out["peak"], out["rss"]
    growth = peak["1500"] / peak["500"] - 1.0
    rss_growth = rss["1500"] / rss["500"] - 1.0
    passed = abs(growth) <= 0.10 and peak["1500"] < 2 ** 30
    acceptance_log("8 scale contract", passed,
                   f"20 rooms, peak RSS {peak['500'] / 2**20:.1f} MiB at 500 -> "
                   f"{peak['1500'] / 2**20:.1f} MiB at 1500 ({growth:+.1%}); "
                   f"current RSS {rss_growth:+.1%}; {peak['experiences']} experiences")
    assert passed
