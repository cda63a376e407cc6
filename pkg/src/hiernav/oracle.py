"""Full-knowledge A* baseline over (x, y, heading)."""
from __future__ import annotations

import heapq

import numpy as np

from .gridworld import Action, Environment, Maze, Pose, Tile, apply_action, visible_world_cells

# tie-break ranks: prefer Forward, then Left, then Right
_RANK = {Action.FORWARD: 0, Action.TURN_LEFT: 1, Action.TURN_RIGHT: 2}
_ORDER = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)


class Unreachable(ValueError):
    """No action sequence reaches the requested cell."""


def _successor(passable: np.ndarray, pose: Pose, action: int) -> Pose | None:
    if action != Action.FORWARD:
        return apply_action(pose, action)
    x, y = pose.ahead()
    h, w = passable.shape
    if not (0 <= x < w and 0 <= y < h) or not passable[y, x]:
        return None  # bumping a wall wastes a step and is never optimal
    return Pose(x, y, pose.heading)


def search(passable: np.ndarray, start: Pose, is_goal, heuristic=None) -> list[int]:
    """A* over poses with unit action costs; ``is_goal(pose)`` ends the search.

    Equal-cost paths are ordered by their action ranks (Forward < Left <
    Right), so a 180 degree turn comes out as two Lefts.
    """
    h = heuristic or (lambda p: 0)
    start = Pose(*start)
    heap = [(h(start), 0, (), start)]
    best = {start: 0}
    while heap:
        f, g, ranks, pose = heapq.heappop(heap)
        if is_goal(pose):
            return [_ORDER[r] for r in ranks]
        if g > best.get(pose, g):
            continue
        for a in _ORDER:
            nxt = _successor(passable, pose, a)
            if nxt is None:
                continue
            ng = g + 1
            if ng < best.get(nxt, ng + 1):
                best[nxt] = ng
                heapq.heappush(heap, (ng + h(nxt), ng, ranks + (_RANK[a],), nxt))
    raise Unreachable(f"no path from {tuple(start)}")


def astar(passable: np.ndarray, start: Pose, goals) -> list[int]:
    """Shortest action sequence from ``start`` to any cell in ``goals``.

    Manhattan heuristic, admissible because only Forward moves the agent.
    """
    goals = {tuple(g) for g in goals}
    if not goals:
        raise Unreachable("no goal cells")
    gx = np.array([g[0] for g in goals])
    gy = np.array([g[1] for g in goals])

    def h(p: Pose) -> int:
        return int((np.abs(gx - p.x) + np.abs(gy - p.y)).min())

    try:
        return search(passable, start, lambda p: (p.x, p.y) in goals, h)
    except Unreachable:
        raise Unreachable(f"no path from {tuple(start)} to {sorted(goals)[:3]}") from None


def passable_grid(maze: Maze) -> np.ndarray:
    return maze.grid != Tile.WALL


def oracle_astar(maze: Maze, start: Pose, to: tuple[int, int]) -> list[int]:
    return astar(passable_grid(maze), start, [to])


def oracle_goal_steps(maze: Maze, start: Pose | None = None) -> int:
    start = maze.agent_start if start is None else start
    return len(astar(passable_grid(maze), start, maze.white_cells()))


def oracle_exploration(maze: Maze, budget: int, target: float = 0.9) -> dict:
    """Greedy chaining: the shortest path to any pose facing a not-yet-seen
    observable cell, repeated until ``target`` coverage or the budget ends.

    The cell straight ahead is always visible, so every leg reveals at
    least one new cell.
    """
    env = Environment(maze)
    passable = passable_grid(maze)
    observable = maze.observable_mask()
    total = int(observable.sum())
    seen = np.zeros_like(observable)
    h, w = seen.shape
    curve = []

    def look(obs):
        xs, ys, _ = visible_world_cells(env.pose, obs)
        seen[ys, xs] = True
        curve.append(float((seen & observable).sum() / total))

    def facing_unseen(p: Pose) -> bool:
        x, y = p.ahead()
        return 0 <= x < w and 0 <= y < h and observable[y, x] and not seen[y, x]

    look(env.observe())
    steps = 0
    while curve[-1] < target and steps < budget:
        try:
            path = search(passable, env.pose, facing_unseen)
        except Unreachable:
            break
        for a in path:
            if steps >= budget:
                break
            look(env.step(a))
            steps += 1
    return {"success": curve[-1] >= target, "steps": steps, "coverage_curve": curve}
