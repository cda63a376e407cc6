"""Multi-room gridworld: generation, dynamics, occluded observation, rendering.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row (growing
south); ``grid[y, x]`` holds a :class:`Tile`.  Rooms are square interiors of
``room_width`` tiles laid out on a lattice, separated by three wall columns
(or rows).  An aisle crossing a separator is three tiles long with the door
in the middle.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import visibility as vis


class Tile(IntEnum):
    HIDDEN = 0
    WALL = 1
    DOOR_CLOSED = 2
    DOOR_OPEN = 3
    RED = 4
    GREEN = 5
    BLUE = 6
    PURPLE = 7
    GREY = 8
    WHITE = 9


ROOM_COLORS = (Tile.RED, Tile.GREEN, Tile.BLUE, Tile.PURPLE)
FLOOR_TILES = (Tile.RED, Tile.GREEN, Tile.BLUE, Tile.PURPLE, Tile.GREY, Tile.WHITE)


class TileClass(IntEnum):
    """Observation classes seen by the belief models (open/closed doors merge)."""

    WALL = 0
    DOOR = 1
    RED = 2
    GREEN = 3
    BLUE = 4
    PURPLE = 5
    GREY = 6
    WHITE = 7


N_CLASSES = len(TileClass)
#: Tile -> TileClass, HIDDEN maps to -1
TILE_TO_CLASS = np.array([-1, 0, 1, 1, 2, 3, 4, 5, 6, 7], dtype=np.int8)
ROOM_FLOOR_CLASSES = (TileClass.RED, TileClass.GREEN, TileClass.BLUE,
                      TileClass.PURPLE, TileClass.WHITE)


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


class Action(IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    FORWARD = 2


class Pose(NamedTuple):
    x: int
    y: int
    heading: int

    def ahead(self, n: int = 1) -> tuple[int, int]:
        fx, fy = vis.FORWARD[self.heading]
        return self.x + n * int(fx), self.y + n * int(fy)


def apply_action(pose: Pose, action: int, blocked: bool = False) -> Pose:
    """Noise-free odometry: the pose after ``action`` (Forward held if blocked)."""
    if action == Action.TURN_LEFT:
        return Pose(pose.x, pose.y, (pose.heading - 1) % 4)
    if action == Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, (pose.heading + 1) % 4)
    if blocked:
        return pose
    x, y = pose.ahead()
    return Pose(x, y, pose.heading)


@dataclass(frozen=True)
class MazeSpec:
    room_rows: int
    room_cols: int
    room_width: int = 4
    seed: int = 0
    white_tile_count: int = 1
    extra_connection_prob: float = 0.3

    def __post_init__(self):
        if self.room_rows < 1 or self.room_cols < 1:
            raise ValueError("room_rows and room_cols must be >= 1")
        if not 4 <= self.room_width <= 8:
            raise ValueError(f"room_width must be in [4, 8], got {self.room_width}")
        if self.white_tile_count < 0:
            raise ValueError("white_tile_count must be >= 0")
        if not 0.0 <= self.extra_connection_prob <= 1.0:
            raise ValueError("extra_connection_prob must be a probability")

    @property
    def room_count(self) -> int:
        return self.room_rows * self.room_cols


class Room(NamedTuple):
    x0: int
    y0: int
    x1: int  # inclusive
    y1: int
    color: int

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True, eq=False)
class Maze:
    grid: np.ndarray
    spec: MazeSpec
    rooms: tuple[Room, ...]
    doors: tuple[tuple[int, int], ...]
    agent_start: Pose
    open_door: tuple[int, int] | None = None
    _observable: list = field(default_factory=list, repr=False, compare=False)

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def tile(self, x: int, y: int) -> Tile:
        if not self.in_bounds(x, y):
            return Tile.WALL
        return Tile(int(self.grid[y, x]))

    def room_at(self, x: int, y: int) -> int | None:
        for i, room in enumerate(self.rooms):
            if room.contains(x, y):
                return i
        return None

    def with_open_door(self, cell: tuple[int, int] | None) -> "Maze":
        if cell == self.open_door:
            return self
        grid = self.grid.copy()
        if self.open_door is not None:
            grid[self.open_door[1], self.open_door[0]] = Tile.DOOR_CLOSED
        if cell is not None:
            grid[cell[1], cell[0]] = Tile.DOOR_OPEN
        grid.setflags(write=False)
        return dataclasses.replace(self, grid=grid, open_door=cell)

    def white_cells(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self.grid == Tile.WHITE)
        return list(zip(xs.tolist(), ys.tolist()))

    def observable_mask(self) -> np.ndarray:
        """Cells visible from at least one reachable pose (doors faced open)."""
        if not self._observable:
            mask = np.zeros(self.grid.shape, dtype=bool)
            closed = self.with_open_door(None)
            ys, xs = np.nonzero(closed.grid != Tile.WALL)
            for x, y in zip(xs.tolist(), ys.tolist()):
                for h in range(4):
                    pose = Pose(x, y, h)
                    m = closed.with_open_door(_faced_door(closed, pose))
                    gx, gy, seen = _visible_cells(m.grid, pose)
                    mask[gy[seen], gx[seen]] = True
            mask.setflags(write=False)
            self._observable.append(mask)
        return self._observable[0]


@dataclass(frozen=True, eq=False)
class Observation:
    window: np.ndarray  # (7, 7) Tile codes, HIDDEN where not visible
    collision: bool = False

    @property
    def classes(self) -> np.ndarray:
        """Flat (49,) TileClass codes, -1 where hidden."""
        return TILE_TO_CLASS[self.window.reshape(-1)]


# ---------------------------------------------------------------- generation

def _room_origin(spec: MazeSpec, i: int, j: int) -> tuple[int, int]:
    pitch = spec.room_width + 3
    return 1 + j * pitch, 1 + i * pitch


def _uniform_spanning_tree(rows: int, cols: int, rng: np.random.Generator) -> set:
    """Wilson's algorithm on the rows x cols lattice graph."""
    n = rows * cols

    def neighbours(v):
        i, j = divmod(v, cols)
        out = []
        if i > 0:
            out.append(v - cols)
        if i < rows - 1:
            out.append(v + cols)
        if j > 0:
            out.append(v - 1)
        if j < cols - 1:
            out.append(v + 1)
        return out

    in_tree = [False] * n
    in_tree[int(rng.integers(n))] = True
    nxt = [-1] * n
    edges = set()
    for start in range(n):
        v = start
        while not in_tree[v]:
            nb = neighbours(v)
            nxt[v] = nb[int(rng.integers(len(nb)))]
            v = nxt[v]
        v = start
        while not in_tree[v]:
            in_tree[v] = True
            edges.add((min(v, nxt[v]), max(v, nxt[v])))
            v = nxt[v]
    return edges


def _adjacencies(rows: int, cols: int) -> list[tuple[int, int]]:
    out = []
    for i in range(rows):
        for j in range(cols):
            v = i * cols + j
            if j < cols - 1:
                out.append((v, v + 1))
            if i < rows - 1:
                out.append((v, v + cols))
    return out


def carve_aisle(grid: np.ndarray, spec: MazeSpec, a: int, b: int, offset: int) -> tuple[int, int]:
    """Open the aisle between adjacent rooms ``a`` < ``b``; returns the door cell."""
    w = spec.room_width
    ia, ja = divmod(a, spec.room_cols)
    x0, y0 = _room_origin(spec, ia, ja)
    if divmod(b, spec.room_cols)[0] == ia:  # east neighbour
        y = y0 + offset
        cells = [(x0 + w, y), (x0 + w + 1, y), (x0 + w + 2, y)]
    else:  # south neighbour
        x = x0 + offset
        cells = [(x, y0 + w), (x, y0 + w + 1), (x, y0 + w + 2)]
    for k, (x, y) in enumerate(cells):
        grid[y, x] = Tile.DOOR_CLOSED if k == 1 else Tile.GREY
    return cells[1]


def empty_layout(spec: MazeSpec, colors) -> tuple[np.ndarray, list[Room]]:
    pitch = spec.room_width + 3
    h = spec.room_rows * pitch - 1
    w = spec.room_cols * pitch - 1
    grid = np.full((h, w), Tile.WALL, dtype=np.uint8)
    rooms = []
    for i in range(spec.room_rows):
        for j in range(spec.room_cols):
            x0, y0 = _room_origin(spec, i, j)
            c = colors[i * spec.room_cols + j]
            x1, y1 = x0 + spec.room_width - 1, y0 + spec.room_width - 1
            grid[y0:y1 + 1, x0:x1 + 1] = c
            rooms.append(Room(x0, y0, x1, y1, int(c)))
    return grid, rooms


def generate_maze(spec: MazeSpec) -> Maze:
    """Build the maze described by ``spec``; bit-identical for identical specs."""
    rng = np.random.default_rng(spec.seed)
    n = spec.room_count
    colors = [ROOM_COLORS[int(k)] for k in rng.integers(0, 4, size=n)]
    grid, rooms = empty_layout(spec, colors)

    edges = _uniform_spanning_tree(spec.room_rows, spec.room_cols, rng)
    for e in _adjacencies(spec.room_rows, spec.room_cols):
        if e not in edges and rng.random() < spec.extra_connection_prob:
            edges.add(e)
    doors = []
    for a, b in sorted(edges):
        doors.append(carve_aisle(grid, spec, a, b, int(rng.integers(spec.room_width))))

    floor = [(x, y) for r in rooms for y in range(r.y0, r.y1 + 1) for x in range(r.x0, r.x1 + 1)]
    picks = rng.permutation(len(floor))
    n_white = min(spec.white_tile_count, len(floor) - 1)
    for k in picks[:n_white]:
        x, y = floor[int(k)]
        grid[y, x] = Tile.WHITE
    sx, sy = floor[int(picks[n_white])]
    start = Pose(sx, sy, int(rng.integers(4)))
    grid.setflags(write=False)
    return Maze(grid, spec, tuple(rooms), tuple(doors), start)


# ---------------------------------------------------------------- dynamics

def _faced_door(maze: Maze, pose: Pose) -> tuple[int, int] | None:
    fx, fy = pose.ahead()
    if maze.in_bounds(fx, fy) and maze.grid[fy, fx] in (Tile.DOOR_CLOSED, Tile.DOOR_OPEN):
        return fx, fy
    return None


def step(maze: Maze, pose: Pose, action: int) -> tuple[Pose, bool, Maze]:
    """Advance one tick; doors open while faced and close otherwise."""
    collision = False
    if action == Action.FORWARD:
        fx, fy = pose.ahead()
        if maze.tile(fx, fy) == Tile.WALL:
            collision = True
            new = pose
        else:
            new = Pose(fx, fy, pose.heading)
    else:
        new = apply_action(pose, action)
    return new, collision, maze.with_open_door(_faced_door(maze, new))


def _visible_cells(grid: np.ndarray, pose: Pose):
    dx, dy = vis.OFFSETS[pose.heading]
    gx, gy = pose.x + dx, pose.y + dy
    h, w = grid.shape
    inb = (gx >= 0) & (gx < w) & (gy >= 0) & (gy < h)
    tiles = np.full(vis.N_CELLS, Tile.WALL, dtype=np.uint8)
    tiles[inb] = grid[gy[inb], gx[inb]]
    opaque = (tiles == Tile.WALL) | (tiles == Tile.DOOR_CLOSED) | ~inb
    seen = vis.visible_mask(opaque) & inb
    return gx, gy, seen


def observe(maze: Maze, pose: Pose, collision: bool = False) -> Observation:
    """Occluded 7x7 view in the agent frame (forward up, agent bottom-centre)."""
    gx, gy, seen = _visible_cells(maze.grid, pose)
    window = np.zeros(vis.N_CELLS, dtype=np.uint8)
    window[seen] = maze.grid[gy[seen], gx[seen]]
    window = window.reshape(vis.WINDOW, vis.WINDOW)
    window.setflags(write=False)
    return Observation(window, bool(collision))


def visible_world_cells(pose: Pose, obs: Observation) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(x, y, class) of the visible cells of ``obs`` taken at ``pose``."""
    cls = obs.classes
    seen = cls >= 0
    dx, dy = vis.OFFSETS[pose.heading]
    return pose.x + dx[seen], pose.y + dy[seen], cls[seen]


class Environment:
    """Mutable handle bundling a maze with the agent's true pose."""

    def __init__(self, maze: Maze, pose: Pose | None = None):
        self.maze = maze.with_open_door(None)
        self.pose = pose if pose is not None else maze.agent_start
        self.maze = self.maze.with_open_door(_faced_door(self.maze, self.pose))
        self.collision = False
        self.steps = 0

    def observe(self) -> Observation:
        return observe(self.maze, self.pose, self.collision)

    def step(self, action: int) -> Observation:
        self.pose, self.collision, self.maze = step(self.maze, self.pose, action)
        self.steps += 1
        return self.observe()

    def teleport(self, pose: Pose) -> None:
        self.pose = pose
        self.collision = False
        self.maze = self.maze.with_open_door(_faced_door(self.maze, pose))


# ---------------------------------------------------------------- rendering

TILE_PIXELS = 8
PALETTE = np.array([
    (0, 0, 0),        # hidden
    (100, 100, 100),  # wall
    (140, 90, 40),    # closed door
    (200, 160, 100),  # open door
    (200, 40, 40),    # red
    (40, 170, 60),    # green
    (50, 80, 210),    # blue
    (130, 50, 170),   # purple
    (160, 160, 160),  # grey aisle
    (255, 255, 255),  # white
], dtype=np.uint8)


def render_rgb(source: "Observation | Maze | np.ndarray") -> np.ndarray:
    """(H*8, W*8, 3) uint8 image, one 8x8 block per tile."""
    if isinstance(source, Observation):
        tiles = source.window
    elif isinstance(source, Maze):
        tiles = source.grid
    else:
        tiles = np.asarray(source)
    img = PALETTE[tiles]
    return np.repeat(np.repeat(img, TILE_PIXELS, axis=0), TILE_PIXELS, axis=1)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Binary P6 PPM."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


# ---------------------------------------------------------------- text format

_TILE_CHAR = {
    Tile.WALL: "#", Tile.DOOR_CLOSED: "+", Tile.DOOR_OPEN: "+",
    Tile.RED: "r", Tile.GREEN: "g", Tile.BLUE: "b", Tile.PURPLE: "p",
    Tile.GREY: "y", Tile.WHITE: "W", Tile.HIDDEN: "?",
}
_CHAR_TILE = {"#": Tile.WALL, "+": Tile.DOOR_CLOSED, "r": Tile.RED, "g": Tile.GREEN,
              "b": Tile.BLUE, "p": Tile.PURPLE, "y": Tile.GREY, ".": Tile.GREY,
              "W": Tile.WHITE, "?": Tile.HIDDEN}


def tiles_to_text(tiles: np.ndarray) -> list[str]:
    return ["".join(_TILE_CHAR[Tile(int(t))] for t in row) for row in tiles]


def maze_to_text(maze: Maze) -> str:
    s = maze.spec
    grid = maze.with_open_door(None).grid
    lines = tiles_to_text(grid)
    sx, sy, sh = maze.agent_start
    lines[sy] = lines[sy][:sx] + "@" + lines[sy][sx + 1:]
    header = (f"{maze.height} {maze.width} {s.room_rows} {s.room_cols} "
              f"{s.room_width} {s.seed} {Heading(sh).name}")
    return "\n".join([header, *lines]) + "\n"


def maze_from_text(text: str) -> Maze:
    """Parse the text grid; the trailing start heading in the header is optional."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) < 6:
        raise ValueError("header must be: rows cols room_rows room_cols room_width seed")
    rows, cols, rr, rc, rw, seed = (int(v) for v in head[:6])
    heading = Heading[head[6]] if len(head) > 6 else Heading.N
    body = lines[1:1 + rows]
    if len(body) != rows or any(len(r) != cols for r in body):
        raise ValueError(f"grid body must be {rows} rows of {cols} characters")
    spec = MazeSpec(rr, rc, rw, seed, white_tile_count=0, extra_connection_prob=0.0)
    grid = np.zeros((rows, cols), dtype=np.uint8)
    start = None
    for y, row in enumerate(body):
        for x, ch in enumerate(row):
            if ch == "@":
                start = (x, y)
                continue
            if ch not in _CHAR_TILE:
                raise ValueError(f"unknown tile character {ch!r} at ({x}, {y})")
            grid[y, x] = _CHAR_TILE[ch]
    rooms = []
    for i in range(rr):
        for j in range(rc):
            x0, y0 = _room_origin(spec, i, j)
            x1, y1 = x0 + rw - 1, y0 + rw - 1
            patch = grid[y0:y1 + 1, x0:x1 + 1]
            vals = [v for v in patch.reshape(-1) if v in ROOM_COLORS]
            color = int(np.bincount(vals).argmax()) if vals else int(Tile.GREY)
            rooms.append(Room(x0, y0, x1, y1, color))
    if start is None:
        raise ValueError("maze text has no '@' start cell")
    sx, sy = start
    room = next((r for r in rooms if r.contains(sx, sy)), None)
    grid[sy, sx] = room.color if room is not None else Tile.GREY
    ys, xs = np.nonzero(grid == Tile.DOOR_CLOSED)
    doors = tuple(sorted(zip(xs.tolist(), ys.tolist())))
    grid.setflags(write=False)
    return Maze(grid, spec, tuple(rooms), doors, Pose(sx, sy, int(heading)))


def load_maze(path: str | Path) -> Maze:
    return maze_from_text(Path(path).read_text())


def save_maze(maze: Maze, path: str | Path) -> None:
    Path(path).write_text(maze_to_text(maze))
