import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from hiernav import visibility as vis
from hiernav.beliefs import ALPHA, CountMap, dirichlet_kl
from hiernav.egocentric import (MEMORY_HORIZON, EgoBelief, collision_probs, ego_info_gain,
                                ego_predict, ego_preference, ego_update, feasible, map_info_gain,
                                rollout_poses, window_cells)
from hiernav.gridworld import (Action, Environment, MazeSpec, Observation, Pose, Tile, TileClass,
                               apply_action, generate_maze)
from hiernav.planner import Policy

C = 8
F, L, R = Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT


def window(tile=Tile.RED, ahead=None):
    w = np.full((7, 7), tile, dtype=np.uint8)
    if ahead is not None:
        w[5, 3] = ahead
    return Observation(w)


def belief_with(cells, cls, times=1):
    """EgoBelief whose map holds ``times`` observations of ``cls`` at ``cells``."""
    b = EgoBelief()
    xs = np.array([c[0] for c in cells] * times)
    ys = np.array([c[1] for c in cells] * times)
    b.map.add(xs, ys, np.full(xs.size, cls))
    return b


def test_first_update_counts_one_per_visible_cell():
    b = ego_update(EgoBelief(), None, window())
    gx, gy = window_cells(b.pose)
    r, c, _ = b.map.index(gx, gy)
    assert np.all(b.map.counts[r, c, TileClass.RED] == 1)
    assert b.map.total.sum() == 49


def test_update_is_pure():
    b = EgoBelief()
    ego_update(b, None, window())
    assert b.map.total.sum() == 0


def test_eviction_restores_prior_exactly():
    b = EgoBelief()
    b.update(None, window())
    prior = b.map.predictive_at(np.array([99]), np.array([99]))[0]
    far = Observation(np.zeros((7, 7), dtype=np.uint8))  # nothing visible
    for _ in range(MEMORY_HORIZON + 1):
        b.update(None, far)
    gx, gy = window_cells(Pose(0, 0, 0))
    p = b.map.predictive_at(gx, gy)
    assert np.array_equal(p, np.broadcast_to(prior, p.shape))


def test_cell_survives_within_horizon():
    b = EgoBelief()
    b.update(None, window())
    far = Observation(np.zeros((7, 7), dtype=np.uint8))
    for _ in range(MEMORY_HORIZON - 1):
        b.update(None, far)
    assert b.map.total.sum() == 49


def test_blocked_forward_keeps_pose():
    b = EgoBelief()
    b.update(F, Observation(np.full((7, 7), Tile.RED, dtype=np.uint8), collision=True))
    assert b.pose == Pose(0, 0, 0)
    b.update(F, window())
    assert b.pose == Pose(0, -1, 0)


def test_collision_probability_from_counts():
    b = belief_with([(0, -1)], TileClass.WALL, times=5)
    (_, p), = ego_predict(b, [F])
    assert abs(p - 5.1 / 5.8) < 1e-12  # (5 + 0.1) / (5 + 8 * 0.1)
    (_, p), = ego_predict(EgoBelief(), [F])
    assert abs(p - 1 / C) < 1e-12
    (_, p), = ego_predict(b, [L])
    assert p == 0.0


def test_feasible_prefix_rule():
    b = belief_with([(0, -1)], TileClass.WALL, times=5)
    assert feasible(b, [L, R, L]) == [L, R, L]
    assert feasible(b, [F, L]) == []
    safe = belief_with([(0, -1)], TileClass.RED, times=5)
    safe.map.add(np.array([0] * 5), np.array([-2] * 5), np.full(5, TileClass.WALL))
    assert feasible(safe, [F, F, L]) == [F]
    pol = Policy((F, F, L))
    assert feasible(safe, pol) == Policy((F,))


@given(st.lists(st.sampled_from([0, 1, 2]), max_size=8), st.integers(0, 2**31))
def test_feasible_idempotent(actions, seed):
    rng = np.random.default_rng(seed)
    b = EgoBelief()
    cells = rng.integers(-4, 5, (12, 2))
    b.map.add(cells[:, 0], cells[:, 1], rng.choice([0, 2], 12))
    once = feasible(b, actions)
    assert feasible(b, once) == once
    assert np.all(collision_probs(b, once)[np.array(once, dtype=int) == F] < 0.5) if once else True


@given(st.lists(st.sampled_from([0, 1, 2]), max_size=30))
def test_odometry_exact_without_collisions(actions):
    b = EgoBelief()
    truth = Pose(0, 0, 0)
    for a in actions:
        truth = apply_action(truth, a)
        b.update(a, window())
    assert b.pose == truth


def test_odometry_tracks_world_displacement():
    m = generate_maze(MazeSpec(2, 2, 6, 3))
    env = Environment(m)
    b = EgoBelief()
    s = env.pose
    rng = np.random.default_rng(0)
    for a in rng.integers(0, 3, 200):
        o = env.step(int(a))
        b.update(int(a), o)
    # rotate the world displacement into the believed frame (start heading -> N)
    dx, dy = env.pose.x - s.x, env.pose.y - s.y
    for _ in range(s.heading):
        dx, dy = dy, -dx
    assert (b.pose.x, b.pose.y) == (dx, dy)
    assert b.pose.heading == (env.pose.heading - s.heading) % 4


def test_info_gain_unknown_positive_known_zero():
    b = EgoBelief()
    assert ego_info_gain(b, [F]) > 0
    sat = EgoBelief()
    gx, gy = np.meshgrid(np.arange(-10, 11), np.arange(-10, 11))
    sat.map.add(gx.ravel(), gy.ravel(), np.full(gx.size, TileClass.RED), weight=1e9)
    assert ego_info_gain(sat, [F, L, F]) < 1e-6


def test_info_gain_symmetric_regions():
    b = EgoBelief()
    assert abs(ego_info_gain(b, [L, F]) - ego_info_gain(b, [R, F])) < 1e-12


def _brute_gain(cmap: CountMap, poses):
    """Union of cells visible from each pose (MAP occlusion), then exact enumeration."""
    seen = set()
    for p in poses:
        gx, gy = window_cells(p)
        r, c, inb = cmap.index(gx, gy)
        code = np.ones(49, dtype=np.uint8)
        code[inb] = cmap.opaque[r[inb], c[inb]]
        blocking = (code == 1) | ((code == 2) & (np.arange(49) != vis.AHEAD_INDEX))
        v = vis.visible_mask(blocking) & inb
        v[vis.AGENT_INDEX] = inb[vis.AGENT_INDEX]
        seen |= {(int(x), int(y)) for x, y in zip(gx[v], gy[v])}
    total = 0.0
    for x, y in seen:
        r, c, _ = cmap.index(x, y)
        a = cmap.counts[r, c] + ALPHA
        p = a / a.sum()
        for k in range(C):
            post = a.copy()
            post[k] += 1
            total += p[k] * float(dirichlet_kl(post, a))
    return total


@given(st.integers(0, 2**31), st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=3),
       st.integers(3, 5), st.integers(3, 5))
def test_info_gain_matches_enumeration(seed, actions, h, w):
    rng = np.random.default_rng(seed)
    cmap = CountMap(h, w)
    n = int(rng.integers(0, h * w * 2))
    xs, ys = rng.integers(0, w, n), rng.integers(0, h, n)
    cmap.add(xs, ys, rng.choice([0, 1, 2, 3, 7], n))
    start = Pose(int(rng.integers(w)), int(rng.integers(h)), int(rng.integers(4)))
    poses = rollout_poses(start, actions)
    assert abs(map_info_gain(cmap, poses) - _brute_gain(cmap, poses)) < 1e-6


@given(st.integers(0, 2**31), st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=6))
def test_info_gain_nonnegative(seed, actions):
    rng = np.random.default_rng(seed)
    b = EgoBelief()
    n = 40
    b.map.add(rng.integers(-6, 7, n), rng.integers(-6, 7, n), rng.integers(0, C, n))
    assert ego_info_gain(b, actions) >= -1e-9


def test_preference_examples():
    white = belief_with([(0, -1)], TileClass.WHITE, times=1000)
    assert ego_preference(white, [F], TileClass.WHITE) > -1e-3
    wall = belief_with([(0, -1)], TileClass.WALL, times=1000)
    assert ego_preference(wall, [F], TileClass.WHITE) < -8
    assert abs(ego_preference(EgoBelief(), [F], TileClass.WHITE) - math.log(1 / C)) < 1e-12
    assert ego_preference(EgoBelief(), [], TileClass.WHITE) == 0.0


def test_preference_monotone_in_evidence():
    vals = [ego_preference(belief_with([(0, -1)], TileClass.WHITE, times=n), [F], TileClass.WHITE)
            for n in range(5)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
