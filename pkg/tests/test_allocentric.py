import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiernav.allocentric import (PlaceModel, PreferredObservation, allo_info_gain, allo_preference,
                                 cosine, event_boundary, free_energy, load_place, place_descriptor,
                                 place_contains_goal, place_from_bytes, place_mismatch,
                                 place_predict, place_text, place_to_bytes, place_update,
                                 save_place)
from hiernav.egocentric import window_cells
from hiernav.gridworld import (TILE_TO_CLASS, Environment, Maze, MazeSpec, Observation, Pose, Tile,
                               TileClass, generate_maze)
from hiernav.harness import run_convergence

C = 8


def room(color=None, white=0, seed=0, width=4):
    m = generate_maze(MazeSpec(1, 1, width, seed, white_tile_count=white))
    if color is not None:
        g = m.grid.copy()
        g[g == m.rooms[0].color] = color
        g.setflags(write=False)
        m = Maze(g, m.spec, m.rooms, m.doors, m.agent_start)
    return m


def sweep(m, z=None):
    """Every floor pose and heading; poses relative to the fixed cell (1, 1)."""
    z = z or PlaceModel(0, Pose(1, 1, 0))
    env = Environment(m)
    r = m.rooms[0]
    batch = []
    for y in range(r.y0, r.y1 + 1):
        for x in range(r.x0, r.x1 + 1):
            for h in range(4):
                env.teleport(Pose(x, y, h))
                o = env.observe()
                local = z.to_local(env.pose)
                z.update(o, local)
                batch.append((o, local))
    return z, batch


def test_double_update_doubles_counts():
    m = room()
    env = Environment(m)
    o = env.observe()
    z0 = PlaceModel(0)
    z1 = place_update(z0, o, Pose(0, 0, m.agent_start.heading))
    z2 = place_update(z1, o, Pose(0, 0, m.agent_start.heading))
    assert z0.obs_count == 0  # pure
    assert np.array_equal(z2.counts, 2 * z1.counts)
    assert z2.obs_count == 2


@given(st.permutations(list(range(8))))
def test_order_invariance(perm):
    m = room(seed=3)
    env = Environment(m)
    pairs = []
    rng = np.random.default_rng(0)
    r = m.rooms[0]
    for _ in range(8):
        p = Pose(int(rng.integers(r.x0, r.x1 + 1)), int(rng.integers(r.y0, r.y1 + 1)), int(rng.integers(4)))
        env.teleport(p)
        pairs.append((env.observe(), Pose(p.x - 1, p.y - 1, p.heading)))
    a, b = PlaceModel(0), PlaceModel(0)
    for o, p in pairs:
        a.update(o, p)
    for i in perm:
        b.update(*pairs[i])
    ys, xs = np.mgrid[-12:13, -12:13]
    for z in (a, b):
        r, c, inb = z.map.index(xs.ravel(), ys.ravel())
        assert (z.map.total[r[inb], c[inb]].sum() == z.map.total.sum())
    ra, ca, ia = a.map.index(xs.ravel(), ys.ravel())
    rb, cb, ib = b.map.index(xs.ravel(), ys.ravel())
    ca_ = np.zeros((xs.size, C))
    cb_ = np.zeros((xs.size, C))
    ca_[ia] = a.counts[ra[ia], ca[ia]]
    cb_[ib] = b.counts[rb[ib], cb[ib]]
    assert np.array_equal(ca_, cb_)


def test_full_sweep_recovers_room():
    m = room(seed=5, white=1)
    z, _ = sweep(m)
    ys, xs = np.mgrid[0:m.height, 0:m.width]
    r, c, inb = z.map.index(xs.ravel() - 1, ys.ravel() - 1)
    assert inb.all()
    est = z.map.map_class[r, c].reshape(m.grid.shape)
    assert np.array_equal(est, TILE_TO_CLASS[m.grid])


def test_predictive_after_ten_views():
    z = PlaceModel(0)
    obs = Observation(np.full((7, 7), Tile.RED, dtype=np.uint8))
    for _ in range(10):
        z.update(obs, Pose(0, 0, 0))
    f = place_predict(z, Pose(0, 0, 0))
    assert abs(f.probs[3, 3, TileClass.RED] - 10.1 / 10.8) < 1e-12
    empty = place_predict(PlaceModel(1), Pose(0, 0, 0))
    assert np.allclose(empty.probs, 1 / C)


def test_prediction_at_last_pose_reproduces_view():
    m = room(seed=2)
    env = Environment(m)
    o = env.observe()
    z = PlaceModel(0)
    pose = Pose(0, 0, env.pose.heading)
    z.update(o, pose)
    f = place_predict(z, pose)
    seen = o.classes >= 0
    assert np.array_equal(f.most_likely().reshape(-1)[seen], o.classes[seen])


def test_mismatch_examples():
    m = room(seed=1)
    env = Environment(m)
    o = env.observe()
    pose = Pose(0, 0, env.pose.heading)
    z = PlaceModel(0)
    assert place_mismatch(z, o, pose) == 0.0
    for _ in range(50):
        z.update(o, pose)
    assert place_mismatch(z, o, pose) < 0.02
    blue = Observation(np.full((7, 7), Tile.BLUE, dtype=np.uint8))
    red = Observation(np.full((7, 7), Tile.RED, dtype=np.uint8))
    zb = PlaceModel(1)
    for _ in range(20):
        zb.update(blue, Pose(0, 0, 0))
    assert place_mismatch(zb, red, Pose(0, 0, 0)) > 0.5


def test_event_boundary_examples():
    assert not event_boundary([0.1, 0.1, 0.9], 0.5, 2)
    assert event_boundary([0.8, 0.9], 0.5, 2)
    assert not event_boundary([0.0] * 10, 0.5, 2)
    with pytest.raises(ValueError):
        event_boundary([0.9], 1.5, 1)


def test_descriptor_orders_similarity():
    base, _ = sweep(room(Tile.RED, seed=4))
    other, _ = sweep(room(Tile.BLUE, seed=4))
    m = room(Tile.RED, seed=4)
    g = m.grid.copy()
    g[2, 2] = Tile.WHITE
    g.setflags(write=False)
    white, _ = sweep(Maze(g, m.spec, m.rooms, m.doors, m.agent_start))
    d = place_descriptor(base)
    assert abs(cosine(d, d) - 1.0) < 1e-12
    c_colour = cosine(d, place_descriptor(other))
    c_white = cosine(d, place_descriptor(white))
    assert c_colour < 0.9
    assert c_colour < c_white < 1.0


def test_descriptor_of_empty_place_errors():
    with pytest.raises(ValueError):
        place_descriptor(PlaceModel(0))


@given(st.floats(0.01, 1000))
def test_descriptor_scale_invariance(k):
    z, _ = sweep(room(seed=6))
    ref, _ = sweep(room(Tile.GREEN, seed=6))
    scaled = z.copy()
    scaled.map.counts *= k
    scaled.map.total *= k
    a = cosine(place_descriptor(z), place_descriptor(ref))
    b = cosine(place_descriptor(scaled), place_descriptor(ref))
    assert abs(a - b) < 1e-9


def test_allo_info_gain_limits():
    z = PlaceModel(0)
    assert allo_info_gain(z, [Pose(0, 0, 0)]) > 0
    assert allo_info_gain(z, []) == 0.0
    sat = PlaceModel(1)
    gx, gy = np.meshgrid(np.arange(-11, 12), np.arange(-11, 12))
    sat.map.add(gx.ravel(), gy.ravel(), np.full(gx.size, TileClass.RED), weight=1e9)
    assert 0 <= allo_info_gain(sat, [Pose(0, 0, 0), Pose(0, -1, 0)]) < 1e-6


def test_allo_info_gain_additive_over_disjoint_regions():
    z = PlaceModel(0, size=41)
    one = allo_info_gain(z, [Pose(0, 0, 0)])
    # two views that see disjoint windows: facing N from (0, 0) and S from (0, 2)
    both = allo_info_gain(z, [Pose(0, -7, 0), Pose(0, 7, 2)])
    assert abs(both - 2 * one) < 1e-9


@given(st.integers(0, 2**31), st.lists(st.sampled_from([0, 1, 2]), max_size=5))
def test_allo_info_gain_nonnegative(seed, actions):
    from hiernav.egocentric import rollout_poses
    rng = np.random.default_rng(seed)
    z = PlaceModel(0)
    n = 60
    z.map.add(rng.integers(-8, 9, n), rng.integers(-8, 9, n), rng.integers(0, C, n))
    assert allo_info_gain(z, rollout_poses(Pose(0, 0, 0), actions)) >= -1e-9


def test_allo_preference_examples():
    g = PreferredObservation(target_class=TileClass.WHITE)
    z = PlaceModel(0)
    assert abs(allo_preference(z, [Pose(0, -1, 0)], g) - math.log(1 / C)) < 1e-12
    assert allo_preference(z, [], g) == 0.0
    z.map.add(np.array([0]), np.array([-1]), np.array([TileClass.WHITE]), weight=1000)
    assert allo_preference(z, [Pose(0, -1, 0)], g) > -1e-3


def test_place_contains_goal():
    g = PreferredObservation(target_class=TileClass.WHITE)
    assert place_contains_goal(PlaceModel(0), g) == (False, None)
    m = room(seed=5, white=1)
    z, _ = sweep(m)
    found, pose = place_contains_goal(z, g)
    wx, wy = m.white_cells()[0]
    assert found
    gx, gy = z.to_global(pose).x, z.to_global(pose).y
    assert abs(gx - wx) + abs(gy - wy) == 1
    assert z.to_global(pose).ahead() == (wx, wy)
    assert place_contains_goal(z, PreferredObservation(target_class=TileClass.WALL)) == (False, None)


def test_free_energy_examples():
    assert free_energy(PlaceModel(0), []) == (0.0, 0.0)
    red = Observation(np.full((7, 7), Tile.RED, dtype=np.uint8))
    blue = Observation(np.full((7, 7), Tile.BLUE, dtype=np.uint8))
    p = Pose(0, 0, 0)
    same, mixed = PlaceModel(0), PlaceModel(1)
    for o in (red, red):
        same.update(o, p)
    for o in (red, blue):
        mixed.update(o, p)
    _, acc_same = free_energy(same, [(red, p), (red, p)])
    _, acc_mixed = free_energy(mixed, [(red, p), (blue, p)])
    assert acc_mixed < acc_same


def test_free_energy_is_negative_log_evidence():
    # sequential predictive product over one cell equals the marginal likelihood
    z = PlaceModel(0)
    obs = [Tile.RED, Tile.RED, Tile.BLUE]
    logp = 0.0
    counts = np.zeros(C)
    for t in obs:
        w = np.zeros((7, 7), dtype=np.uint8)
        w[6, 3] = t
        k = int(TILE_TO_CLASS[t])
        logp += math.log((counts[k] + 0.1) / (counts.sum() + 0.8))
        counts[k] += 1
        z.update(Observation(w), Pose(0, 0, 0))
    batch = []
    for t in obs:
        w = np.zeros((7, 7), dtype=np.uint8)
        w[6, 3] = t
        batch.append((Observation(w), Pose(0, 0, 0)))
    cx, acc = free_energy(z, batch)
    assert abs((cx - acc) + logp) < 1e-9


def test_update_outside_frame_rejected():
    z = PlaceModel(0)
    z.update(Observation(np.full((7, 7), Tile.RED, dtype=np.uint8)), Pose(0, 0, 0))
    with pytest.raises(ValueError):
        z.update(Observation(np.full((7, 7), Tile.RED, dtype=np.uint8)), Pose(40, 0, 0))


def test_blob_and_text_round_trip(tmp_path):
    z, _ = sweep(room(seed=5, white=1))
    back = place_from_bytes(place_to_bytes(z))
    assert np.array_equal(back.counts, z.counts)
    assert back.origin == z.origin and back.obs_count == z.obs_count
    save_place(z, tmp_path / "p.bin")
    assert np.array_equal(load_place(tmp_path / "p.bin").counts, z.counts)
    with pytest.raises(ValueError):
        place_from_bytes(b"junk" + place_to_bytes(z)[4:])
    text = place_text(z)
    assert "W" in text and "#" in text


def test_convergence_small_room():
    r = run_convergence(4, 0)
    assert r["curve"][0] == pytest.approx(1 - 1 / C)
    assert r["observations_to_converge"] <= 5
