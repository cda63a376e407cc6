"""Hand-built mazes and scripted routes for the aliasing experiments."""
from __future__ import annotations

import numpy as np

from .gridworld import ROOM_COLORS, Action, Maze, MazeSpec, Pose, Tile, carve_aisle, empty_layout
from .oracle import astar, passable_grid

# 2x2 lattice: 0 1 / 2 3
RING_EDGES = ((0, 1), (0, 2), (1, 3), (2, 3))
CLOCKWISE = (0, 1, 3, 2, 0)
ANTICLOCKWISE = (0, 2, 3, 1, 0)
SPIN = (Action.TURN_LEFT,) * 4


def alias_maze(seed: int = 0, room_width: int = 4, white: bool = True) -> Maze:
    """Four same-coloured rooms joined in a ring; at most one white tile.

    The colour, aisle offsets, white tile and start cell are drawn from
    ``seed``.  The start is the centre of room 0 facing north.
    """
    rng = np.random.default_rng(seed)
    spec = MazeSpec(2, 2, room_width, seed, white_tile_count=int(white), extra_connection_prob=1.0)
    color = ROOM_COLORS[int(rng.integers(4))]
    grid, rooms = empty_layout(spec, [color] * 4)
    doors = [carve_aisle(grid, spec, a, b, int(rng.integers(room_width))) for a, b in RING_EDGES]
    start = room_centre(rooms[0])
    if white:
        r = rooms[int(rng.integers(4))]
        while True:
            x = int(rng.integers(r.x0, r.x1 + 1))
            y = int(rng.integers(r.y0, r.y1 + 1))
            if (x, y) != start:
                break
        grid[y, x] = Tile.WHITE
    grid.setflags(write=False)
    return Maze(grid, spec, tuple(rooms), tuple(doors), Pose(start[0], start[1], 0))


def room_centre(room) -> tuple[int, int]:
    return (room.x0 + room.x1) // 2, (room.y0 + room.y1) // 2


def door_between(maze: Maze, a: int, b: int) -> tuple[int, int]:
    return maze.doors[RING_EDGES.index((min(a, b), max(a, b)))]


def loop_script(maze: Maze, start: Pose, order=CLOCKWISE, spin: bool = True) -> tuple[list[int], list[int]]:
    """Actions that walk room to room through ``order``, spinning at each centre.

    Returns ``(actions, room_of_step)`` where ``room_of_step[t]`` is the
    index into ``order`` of the room being headed for at step ``t``.
    """
    passable = passable_grid(maze)
    pose = Pose(*start)
    actions, phase = [], []

    def walk(cells, k):
        nonlocal pose
        path = astar(passable, pose, cells)
        for a in path:
            pose = _advance(pose, a)
        actions.extend(path)
        phase.extend([k] * len(path))

    for k, (a, b) in enumerate(zip(order, order[1:])):
        if k == 0 and spin:
            actions.extend(SPIN)
            phase.extend([0] * len(SPIN))
        walk([door_between(maze, a, b)], k + 1)
        walk([room_centre(maze.rooms[b])], k + 1)
        if spin:
            actions.extend(SPIN)
            phase.extend([k + 1] * len(SPIN))
    return [int(a) for a in actions], phase


def _advance(pose: Pose, action: int) -> Pose:
    from .gridworld import apply_action
    return apply_action(pose, action)
