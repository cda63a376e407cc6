import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from hiernav import visibility as vis
from hiernav.gridworld import (Action, Environment, Heading, MazeSpec, Observation, Pose, Tile,
                               apply_action, generate_maze, maze_from_text, maze_to_text,
                               observe, read_ppm, render_rgb, step, write_ppm)

from conftest import text_maze


def test_spec_validation():
    with pytest.raises(ValueError):
        MazeSpec(0, 3, 4, 0)
    with pytest.raises(ValueError):
        MazeSpec(3, 0, 4, 0)
    with pytest.raises(ValueError):
        MazeSpec(2, 2, 3, 0)
    with pytest.raises(ValueError):
        MazeSpec(2, 2, 9, 0)


def test_spanning_tree_door_count():
    m = generate_maze(MazeSpec(3, 3, 4, 7, extra_connection_prob=0.0))
    assert len(m.rooms) == 9
    assert len(m.doors) == 8


def test_single_room_has_no_doors():
    m = generate_maze(MazeSpec(1, 1, 4, 0))
    assert len(m.rooms) == 1 and m.doors == ()


def test_generation_is_bit_reproducible():
    a = generate_maze(MazeSpec(3, 3, 4, 7))
    b = generate_maze(MazeSpec(3, 3, 4, 7))
    assert a.grid.tobytes() == b.grid.tobytes()
    assert a.agent_start == b.agent_start
    c = generate_maze(MazeSpec(3, 3, 4, 8))
    assert a.grid.tobytes() != c.grid.tobytes()


def test_doors_sit_mid_aisle_and_rooms_are_uniform():
    m = generate_maze(MazeSpec(3, 3, 5, 2, white_tile_count=0))
    g = m.grid
    for x, y in m.doors:
        assert g[y, x] == Tile.DOOR_CLOSED
        horizontal = g[y, x - 1] == Tile.GREY and g[y, x + 1] == Tile.GREY
        vertical = g[y - 1, x] == Tile.GREY and g[y + 1, x] == Tile.GREY
        assert horizontal or vertical
    for r in m.rooms:
        patch = g[r.y0:r.y1 + 1, r.x0:r.x1 + 1]
        assert np.all(patch == r.color)


def test_turns_and_blocked_forward():
    m = text_maze(["#####", "#ppp#", "#p@p#", "#ppp#", "#####"])
    p = m.agent_start
    assert apply_action(p, Action.TURN_LEFT).heading == Heading.W
    assert apply_action(p, Action.TURN_RIGHT).heading == Heading.E
    pose, hit, _ = step(m, Pose(2, 1, Heading.N), Action.FORWARD)
    assert hit and (pose.x, pose.y) == (2, 1)
    _, hit, _ = step(m, p, Action.TURN_LEFT)
    assert not hit


def _two_rooms():
    # 1x2 rooms; the single door sits at (6, 1) between grey cells (5, 1) and (7, 1)
    m = generate_maze(MazeSpec(1, 2, 4, 3))
    assert m.doors == ((6, 1),)
    return m


def test_forward_through_door_opens_it():
    m = _two_rooms()
    env = Environment(m, Pose(4, 1, Heading.E))
    assert env.maze.tile(6, 1) == Tile.DOOR_CLOSED
    env.step(Action.FORWARD)  # onto the grey cell, now facing the door
    assert env.maze.tile(6, 1) == Tile.DOOR_OPEN
    env.step(Action.FORWARD)
    assert (env.pose.x, env.pose.y) == (6, 1) and not env.collision
    env.step(Action.TURN_LEFT)
    assert env.maze.tile(6, 1) == Tile.DOOR_CLOSED  # no longer faced


def test_open_area_has_no_hidden_cells():
    assert vis.visible_mask(np.zeros(vis.N_CELLS, dtype=bool)).all()


def test_wall_ahead_shadows_the_column_behind():
    op = np.zeros(vis.N_CELLS, dtype=bool)
    op[vis.AHEAD_INDEX] = True
    v = vis.visible_mask(op).reshape(7, 7)
    assert v[5, 3]  # the wall itself
    assert not v[:5, 3].any()


def test_closed_door_hides_beyond():
    m = _two_rooms()
    pose = Pose(5, 1, Heading.E)
    closed = observe(m, pose).window
    opened = observe(m.with_open_door((6, 1)), pose).window
    assert (opened != Tile.HIDDEN).sum() > (closed != Tile.HIDDEN).sum()
    far = m.rooms[1].color
    assert far in set(opened.reshape(-1).tolist())
    assert far not in set(closed.reshape(-1).tolist())


def test_out_of_bounds_cells_are_hidden():
    m = text_maze(["###", "#@#", "###"])
    o = observe(m, m.agent_start)
    assert (o.window != Tile.HIDDEN).sum() <= 9


def test_render_shapes():
    o = Observation(np.full((7, 7), Tile.RED, dtype=np.uint8))
    assert render_rgb(o).shape == (56, 56, 3)
    hidden = Observation(np.zeros((7, 7), dtype=np.uint8))
    assert not render_rgb(hidden).any()
    assert render_rgb(np.full((12, 12), Tile.WALL, dtype=np.uint8)).shape == (96, 96, 3)


def test_ppm_round_trip(tmp_path):
    img = render_rgb(generate_maze(MazeSpec(2, 2, 4, 1)))
    write_ppm(tmp_path / "m.ppm", img)
    assert (tmp_path / "m.ppm").read_bytes().startswith(b"P6")
    assert np.array_equal(read_ppm(tmp_path / "m.ppm"), img)


def test_maze_text_round_trip():
    m = generate_maze(MazeSpec(2, 3, 5, 11))
    back = maze_from_text(maze_to_text(m))
    assert np.array_equal(back.grid, m.grid)
    assert back.agent_start == m.agent_start
    assert back.doors == tuple(sorted(m.doors))


def test_maze_text_errors():
    with pytest.raises(ValueError):
        maze_from_text("3 3 1 1 4\n###\n#@#\n###\n")
    with pytest.raises(ValueError):
        maze_from_text("3 3 1 1 4 0\n###\n#.#\n###\n")
    with pytest.raises(ValueError):
        maze_from_text("3 3 1 1 4 0\n###\n#@Q\n###\n")


@given(st.lists(st.booleans(), min_size=49, max_size=49), st.integers(0, 48))
def test_visibility_monotone_under_opaque_removal(bits, k):
    op = np.array(bits, dtype=bool)
    before = vis.visible_mask(op)
    op[k] = False
    after = vis.visible_mask(op)
    assert np.all(after >= before)


@given(st.integers(0, 10_000), st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=60))
def test_determinism_and_collision_soundness(seed, actions):
    m = generate_maze(MazeSpec(2, 2, 4, seed))
    a, b = Environment(m), Environment(m)
    for act in actions:
        faced = a.pose.ahead()
        blocked = a.maze.tile(*faced) == Tile.WALL
        oa, ob = a.step(act), b.step(act)
        assert a.pose == b.pose and np.array_equal(oa.window, ob.window)
        assert oa.collision == (act == Action.FORWARD and blocked)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(4, 8), st.integers(0, 10_000))
def test_connectivity(rows, cols, width, seed):
    m = generate_maze(MazeSpec(rows, cols, width, seed))
    free = m.grid != Tile.WALL
    labels, _ = ndimage.label(free)
    s = m.agent_start
    assert np.all(labels[free] == labels[s.y, s.x])


def test_own_cell_always_visible():
    m = generate_maze(MazeSpec(2, 2, 4, 5))
    env = Environment(m)
    for a in [2, 2, 0, 2, 1, 2, 2]:
        o = env.step(a)
        assert o.window[vis.AGENT_ROW, vis.AGENT_COL] != Tile.HIDDEN
