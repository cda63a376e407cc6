from collections import deque

import numpy as np
import pytest

from hiernav.gridworld import Action, MazeSpec, Pose, apply_action, generate_maze
from hiernav.oracle import (Unreachable, astar, oracle_astar, oracle_exploration,
                            oracle_goal_steps, passable_grid)

from conftest import text_maze

F, L, R = Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT


def bfs_distances(passable: np.ndarray, start: Pose) -> dict:
    """Fewest actions to reach each cell, by plain breadth-first search."""
    h, w = passable.shape
    seen = {start: 0}
    queue = deque([start])
    best = {(start.x, start.y): 0}
    while queue:
        p = queue.popleft()
        for a in (F, L, R):
            q = apply_action(p, a)
            if not (0 <= q.x < w and 0 <= q.y < h) or not passable[q.y, q.x] or q in seen:
                continue
            seen[q] = seen[p] + 1
            best.setdefault((q.x, q.y), seen[q])
            queue.append(q)
    return best


def replay(passable, start, actions):
    p = start
    for a in actions:
        q = apply_action(p, a)
        assert passable[q.y, q.x], "path walks into a wall"
        p = q
    return p


def test_straight_corridor_is_all_forward():
    corridor = text_maze(["########", "#@ppppp#", "########"], heading="E", room=(1, 1, 6))
    s = corridor.agent_start
    assert oracle_astar(corridor, s, (s.x + 5, s.y)) == [F] * 5


def test_goal_behind_turns_left_twice():
    m = text_maze(["######", "#pppp#", "#pp@p#", "#pppp#", "######"])
    s = m.agent_start
    path = oracle_astar(m, s, (s.x, s.y + 1))
    assert path == [L, L, F]


def test_start_on_goal_is_empty():
    m = generate_maze(MazeSpec(1, 1, 4, 0))
    s = m.agent_start
    assert oracle_astar(m, s, (s.x, s.y)) == []


@pytest.mark.parametrize("rows,cols", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_matches_bfs_on_small_mazes(rows, cols):
    for seed in range(3):
        m = generate_maze(MazeSpec(rows, cols, 4, seed))
        passable = passable_grid(m)
        ys, xs = np.nonzero(passable)
        cells = list(zip(xs.tolist(), ys.tolist()))
        starts = [Pose(x, y, h) for (x, y) in cells[:: max(1, len(cells) // 6)] for h in range(4)]
        for s in starts:
            dist = bfs_distances(passable, s)
            assert set(dist) == set(cells)  # generated mazes are connected
            for c in cells:
                path = astar(passable, s, [c])
                assert len(path) == dist[c]
                end = replay(passable, s, path)
                assert (end.x, end.y) == c


def test_not_longer_than_random_walks():
    rng = np.random.default_rng(7)
    for seed in range(20):
        m = generate_maze(MazeSpec(2, 2, 4, seed))
        passable = passable_grid(m)
        start = m.agent_start
        goal = m.white_cells()[0]
        best = len(astar(passable, start, [goal]))
        p, steps = start, 0
        while (p.x, p.y) != tuple(goal):
            q = apply_action(p, int(rng.integers(3)))
            if passable[q.y, q.x]:
                p = q
            steps += 1
        assert best <= steps


def test_unreachable_is_an_error():
    m = text_maze(["######", "#p@#p#", "#pp#p#", "######"])
    with pytest.raises(Unreachable):
        oracle_astar(m, m.agent_start, (4, 2))
    with pytest.raises(Unreachable):
        astar(passable_grid(m), m.agent_start, [])


def test_goal_steps_of_adjacent_goal():
    m = text_maze(["######", "#ppWp#", "#pp@p#", "#pppp#", "######"])
    assert oracle_goal_steps(m) == 1


def test_exploration_oracle_succeeds():
    m = generate_maze(MazeSpec(3, 3, 4, 1))
    out = oracle_exploration(m, budget=675)
    curve = out["coverage_curve"]
    assert out["success"] and curve[-1] >= 0.9
    assert all(b >= a for a, b in zip(curve, curve[1:]))
    assert len(curve) == out["steps"] + 1


def test_exploration_oracle_respects_budget():
    m = generate_maze(MazeSpec(3, 3, 4, 1))
    out = oracle_exploration(m, budget=5)
    assert out["steps"] <= 5 and not out["success"]
