"""Batch runner for the exploration, goal, aliasing and reconstruction tasks."""
from __future__ import annotations

import csv
import io
import json
import math
import resource
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import AgentState, agent_step, perceive
from .allocentric import CLASS_TO_TILE, place_text, save_place
from .cogmap import reconstruct_map
from .fixtures import ANTICLOCKWISE, CLOCKWISE, alias_maze, loop_script
from .gridworld import (TILE_PIXELS, TILE_TO_CLASS, Environment, Maze, MazeSpec, Pose, Tile, TileClass,
                        generate_maze, load_maze, render_rgb, save_maze, visible_world_cells,
                        write_ppm)
from .oracle import Unreachable, oracle_exploration, oracle_goal_steps
from .planner import PlannerConfig

TASKS = ("explore", "goal", "alias", "reconstruct")
COVERAGE_TARGET = 0.9
MISMATCH_THRESHOLD = 0.5
HALT_TICKS = 10  # motionless ticks on a believed goal before a run is called


@dataclass
class RunConfig:
    task: str = "explore"
    rooms: tuple[int, int] = (3, 3)
    width: int = 4
    seeds: list[int] = field(default_factory=lambda: [0])
    budget: int | None = None  # None: min(75 x rooms, 1500)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    with_prior: bool = False
    out: str | None = None
    maze_file: str | None = None
    stop_on_success: bool = False
    log_ticks: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be >= 0")

    @property
    def room_count(self) -> int:
        return self.rooms[0] * self.rooms[1]

    def budget_for(self, maze: Maze | None = None) -> int:
        if self.budget is not None:
            return self.budget
        n = maze.spec.room_count if maze is not None else self.room_count
        return min(75 * n, 1500)


@dataclass
class RunMetrics:
    task: str
    seed: int
    coverage_curve: list[float] = field(default_factory=list)
    success: bool = False
    steps_to_success: int | None = None
    oracle_steps: int | None = None
    relative_steps: float | None = None
    places_created: int = 0
    wrong_goal_terminations: bool = False
    oracle_success: bool | None = None
    map_accuracy: float | None = None
    steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def final_coverage(self) -> float:
        return self.coverage_curve[-1] if self.coverage_curve else 0.0


@dataclass
class RunResult:
    metrics: RunMetrics
    ticks: list[dict]
    maze: Maze
    state: AgentState
    trajectory: list[tuple[int, int]]


# ---------------------------------------------------------------- frames

def belief_to_world(start: Pose, x, y):
    """Map odometry-frame coordinates (start at origin facing N) to the world."""
    x = np.asarray(x)
    y = np.asarray(y)
    for _ in range(int(start.heading) % 4):
        x, y = -y, x  # quarter turn clockwise
    return x + start.x, y + start.y


def world_map(maze: Maze, cmap) -> np.ndarray:
    """Project an odometry-frame CountMap onto the world grid as TileClass (-1 unknown)."""
    out = np.full(maze.grid.shape, -1, dtype=np.int8)
    rows, cols = np.nonzero(cmap.map_class >= 0)
    bx, by = cols + cmap.origin[0], rows + cmap.origin[1]
    wx, wy = belief_to_world(maze.agent_start, bx, by)
    inb = (wx >= 0) & (wx < maze.width) & (wy >= 0) & (wy < maze.height)
    out[wy[inb], wx[inb]] = cmap.map_class[rows[inb], cols[inb]]
    return out


def map_accuracy(maze: Maze, cmap, mask: np.ndarray | None = None) -> float:
    """Fraction of cells in ``mask`` whose MAP class matches the truth (unknown = wrong).

    ``mask`` defaults to every observable cell.
    """
    truth = TILE_TO_CLASS[maze.with_open_door(None).grid]
    est = world_map(maze, cmap)
    mask = maze.observable_mask() if mask is None else mask
    return float((est[mask] == truth[mask]).mean())


class Coverage:
    def __init__(self, maze: Maze):
        self.observable = maze.observable_mask()
        self.total = int(self.observable.sum())
        self.seen = np.zeros_like(self.observable)
        self.curve: list[float] = []

    def add(self, pose: Pose, obs) -> float:
        xs, ys, _ = visible_world_cells(pose, obs)
        self.seen[ys, xs] = True
        self.curve.append(float((self.seen & self.observable).sum() / self.total))
        return self.curve[-1]


# ---------------------------------------------------------------- runs

def make_maze(cfg: RunConfig, seed: int) -> Maze:
    if cfg.maze_file:
        return load_maze(cfg.maze_file)
    if cfg.task == "alias":
        return alias_maze(seed, cfg.width)
    return generate_maze(MazeSpec(cfg.rooms[0], cfg.rooms[1], cfg.width, seed))


def _agent(cfg: RunConfig, maze: Maze, seed: int) -> AgentState:
    planner = replace(cfg.planner, seed=seed)
    return AgentState(planner, room_width=maze.spec.room_width)


def _finish(m: RunMetrics, state: AgentState, maze: Maze, cov: Coverage) -> None:
    m.places_created = len(state.cmap.experiences)
    seen = cov.seen & cov.observable
    # scored on the cells the agent has actually looked at
    m.map_accuracy = map_accuracy(maze, state.composite.map, seen)
    m.extra["place_map_accuracy"] = map_accuracy(maze, reconstruct_map(state.cmap), seen)
    m.extra["map_accuracy_observable"] = map_accuracy(maze, state.composite.map)
    m.extra["boundaries"] = state.boundaries


def run_exploration(cfg: RunConfig, seed: int, maze: Maze | None = None) -> RunResult:
    """Explore until the budget ends (or first success with ``stop_on_success``)."""
    maze = maze if maze is not None else make_maze(cfg, seed)
    env = Environment(maze)
    state = _agent(cfg, maze, seed)
    budget = cfg.budget_for(maze)
    cov = Coverage(maze)
    m = RunMetrics(cfg.task, seed)
    ticks, traj = [], [(env.pose.x, env.pose.y)]
    obs = env.observe()
    if cov.add(env.pose, obs) >= COVERAGE_TARGET:
        m.success, m.steps_to_success = True, 0
    for t in range(budget):
        if m.success and cfg.stop_on_success:
            break
        action, state, rec = agent_step(env, "explore", state, obs=obs)
        obs = env.step(action)
        traj.append((env.pose.x, env.pose.y))
        c = cov.add(env.pose, obs)
        if cfg.log_ticks:
            rec["pose"] = list(env.pose)
            rec["coverage"] = c
            ticks.append(rec)
        if not m.success and c >= COVERAGE_TARGET:
            m.success, m.steps_to_success = True, t + 1
    m.coverage_curve = cov.curve
    m.steps = len(cov.curve) - 1
    orc = oracle_exploration(maze, budget, COVERAGE_TARGET)
    m.oracle_success = orc["success"]
    m.oracle_steps = orc["steps"] if orc["success"] else None
    if m.success and m.oracle_steps:
        m.relative_steps = m.steps_to_success / m.oracle_steps
    _finish(m, state, maze, cov)
    return RunResult(m, ticks, maze, state, traj)


def run_goal(cfg: RunConfig, seed: int, maze: Maze | None = None,
             with_prior: bool | None = None) -> RunResult:
    """Seek the white tile; with a prior, explore first and restart from the start pose."""
    maze = maze if maze is not None else make_maze(cfg, seed)
    with_prior = cfg.with_prior if with_prior is None else with_prior
    if len(maze.white_cells()) != 1:
        raise ValueError("goal task needs exactly one white tile")
    white = maze.white_cells()[0]
    state = _agent(cfg, maze, seed)
    budget = cfg.budget_for(maze)
    m = RunMetrics("goal", seed)
    ticks, traj = [], []
    if with_prior:
        env = Environment(maze)
        cov = Coverage(maze)
        obs = env.observe()
        cov.add(env.pose, obs)
        for _ in range(budget):
            if cov.curve[-1] >= COVERAGE_TARGET:
                break
            action, state, rec = agent_step(env, "explore", state, obs=obs)
            obs = env.step(action)
            cov.add(env.pose, obs)
            if cfg.log_ticks:
                rec["pose"] = list(env.pose)
                rec["phase"] = "prior"
                ticks.append(rec)
        m.extra["prior_steps"] = len(cov.curve) - 1
        m.extra["prior_coverage"] = cov.curve[-1]
        env.teleport(maze.agent_start)
        state.reset_pose(Pose(0, 0, 0))
    env = Environment(maze)
    cov = Coverage(maze)
    obs = env.observe()
    cov.add(env.pose, obs)
    traj.append((env.pose.x, env.pose.y))
    halted, last = 0, None
    for t in range(budget + 1):
        if (env.pose.x, env.pose.y) == white:
            m.success, m.steps_to_success = True, t
            break
        if t == budget:
            break
        bx, by = state.pose.x, state.pose.y
        cm = state.composite.map
        row, col, inb = cm.index(bx, by)
        believed = int(cm.map_class[row, col]) if inb else -1
        here = (env.pose.x, env.pose.y)
        halted = halted + 1 if (here == last and believed == TileClass.WHITE) else 0
        last = here
        if halted >= HALT_TICKS:
            m.wrong_goal_terminations = True
            break
        action, state, rec = agent_step(env, "goal", state, obs=obs)
        obs = env.step(action)
        traj.append((env.pose.x, env.pose.y))
        cov.add(env.pose, obs)
        if cfg.log_ticks:
            rec["pose"] = list(env.pose)
            rec["phase"] = "goal"
            ticks.append(rec)
    m.coverage_curve = cov.curve
    m.steps = len(cov.curve) - 1
    try:
        m.oracle_steps = oracle_goal_steps(maze)
        m.oracle_success = m.oracle_steps <= budget
    except Unreachable:
        m.oracle_success = False
    if m.success and m.oracle_steps:
        m.relative_steps = m.steps_to_success / m.oracle_steps
    _finish(m, state, maze, cov)
    return RunResult(m, ticks, maze, state, traj)


def run_alias(cfg: RunConfig, seed: int, maze: Maze | None = None) -> RunResult:
    """Scripted clockwise loop, then anticlockwise loop, in the aliased ring."""
    maze = maze if maze is not None else alias_maze(seed, cfg.width)
    env = Environment(maze)
    state = _agent(cfg, maze, seed)
    cov = Coverage(maze)
    m = RunMetrics("alias", seed)
    ticks, traj = [], [(env.pose.x, env.pose.y)]
    gains = {"first": [], "revisit": []}
    expected = {"first": [], "revisit": []}

    def tick(action, phase):
        obs = env.observe() if action is None else env.step(action)
        traj.append((env.pose.x, env.pose.y))
        cov.add(env.pose, obs)
        seen = perceive(state, action, obs)
        state.tick += 1
        gains[phase].append(seen["info_gain"])
        expected[phase].append(seen["expected_info_gain"])
        if cfg.log_ticks:
            ticks.append({"tick": state.tick - 1, "phase": phase, "pose": list(env.pose),
                          "belief_pose": list(state.pose),
                          "action": None if action is None else int(action),
                          "info_gain": seen["info_gain"],
                          "expected_info_gain": seen["expected_info_gain"],
                          "events": seen["events"], "current_exp": state.cmap.current,
                          "hypotheses": ([[h.candidate, h.weight] for h in state.hyps]
                                         if state.hyps else None)})

    traj.pop()
    tick(None, "first")
    first, _ = loop_script(maze, env.pose, CLOCKWISE)
    for a in first:
        tick(a, "first")
    n_first = len(state.cmap.experiences)
    second, _ = loop_script(maze, env.pose, ANTICLOCKWISE)
    for a in second:
        tick(a, "revisit")
    n_new = len(state.cmap.experiences) - n_first
    g1, g2 = sum(gains["first"]), sum(gains["revisit"])
    e1, e2 = sum(expected["first"]), sum(expected["revisit"])
    m.extra.update({
        "experiences_after_first_loop": n_first,
        "new_experiences_second_loop": n_new,
        "info_gain_first": g1, "info_gain_revisit": g2,
        "info_gain_ratio": g2 / g1 if g1 > 0 else math.inf,
        "expected_info_gain_ratio": e2 / e1 if e1 > 0 else math.inf,
    })
    m.success = n_first == 4 and n_new == 0
    if m.success:
        m.steps_to_success = len(first) + len(second)
    m.coverage_curve = cov.curve
    m.steps = len(first) + len(second)
    _finish(m, state, maze, cov)
    return RunResult(m, ticks, maze, state, traj)


def run_reconstruct(cfg: RunConfig, seed: int, maze: Maze | None = None) -> RunResult:
    """Full-budget exploration; the reconstructed map accuracy is the result."""
    res = run_exploration(cfg, seed, maze)
    res.metrics.task = "reconstruct"
    res.metrics.extra["exploration_success"] = res.metrics.success
    return res


def heldout_mismatch(z, obs, pose: Pose) -> float:
    """1 - mean predictive probability of the observed classes over *all* visible cells.

    Unlike the boundary mismatch, cells without evidence are not skipped: they
    are scored under the (completed) prior, so an empty place scores 1 - 1/C.
    """
    from .egocentric import window_cells
    cls = obs.classes
    keep = cls >= 0
    gx, gy = window_cells(pose)
    probs, _ = z.predictive_cells(gx[keep], gy[keep], complete=True)
    return float(1.0 - probs[np.arange(probs.shape[0]), cls[keep]].mean())


def run_convergence(width: int, seed: int, max_obs: int = 10, heldout: int = 10) -> dict:
    """Feed random in-room views to a fresh place; track mismatch on held-out views."""
    from .allocentric import PlaceModel
    maze = generate_maze(MazeSpec(1, 1, width, seed, white_tile_count=0))
    env = Environment(maze)
    room = maze.rooms[0]
    rng = np.random.default_rng(seed)
    cells = [(x, y, h) for y in range(room.y0, room.y1 + 1)
             for x in range(room.x0, room.x1 + 1) for h in range(4)]
    order = rng.permutation(len(cells))
    test = [Pose(*cells[i]) for i in order[:heldout]]
    train = [Pose(*cells[i]) for i in order[heldout:heldout + max_obs]]
    anchor = train[0]
    z = PlaceModel(0, Pose(anchor.x, anchor.y, 0))

    def view(p):
        env.teleport(p)
        return env.observe()

    test_obs = [(z.to_local(p), view(p)) for p in test]

    def score():
        return float(np.mean([heldout_mismatch(z, o, p) for p, o in test_obs]))

    curve = [score()]
    for p in train:
        z.update(view(p), z.to_local(p))
        curve.append(score())
    below = [t for t, m in enumerate(curve) if m < MISMATCH_THRESHOLD]
    return {"width": width, "seed": seed, "curve": curve,
            "observations_to_converge": below[0] if below else None}


RUNNERS = {"explore": run_exploration, "goal": run_goal, "alias": run_alias,
           "reconstruct": run_reconstruct}


def run_batch(cfg: RunConfig) -> list[RunResult]:
    """Run every seed (optionally on worker threads); results sorted by seed."""
    fn = RUNNERS[cfg.task]

    def one(seed):
        return fn(cfg, seed)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(one, cfg.seeds))
    else:
        results = [one(s) for s in cfg.seeds]
    results.sort(key=lambda r: r.metrics.seed)
    if cfg.out:
        report(cfg, results)
    return results


# ---------------------------------------------------------------- reports

CSV_FIELDS = ("task", "rooms", "width", "seed", "success", "steps_to_success", "steps_sd",
              "oracle_steps", "relative_steps", "final_coverage", "places_created",
              "wrong_goal_terminations", "map_accuracy", "oracle_success")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def aggregate_rows(cfg: RunConfig, results: list[RunResult]) -> list[dict]:
    rooms = f"{cfg.rooms[0]}x{cfg.rooms[1]}"
    rows = []
    for r in results:
        m = r.metrics
        rows.append({"task": m.task, "rooms": rooms, "width": cfg.width, "seed": m.seed,
                     "success": m.success, "steps_to_success": m.steps_to_success,
                     "steps_sd": None, "oracle_steps": m.oracle_steps,
                     "relative_steps": m.relative_steps, "final_coverage": m.final_coverage,
                     "places_created": m.places_created,
                     "wrong_goal_terminations": m.wrong_goal_terminations,
                     "map_accuracy": m.map_accuracy, "oracle_success": m.oracle_success})
    ms = [r.metrics for r in results]
    steps = [m.steps_to_success for m in ms if m.success and m.steps_to_success is not None]
    rel = [m.relative_steps for m in ms if m.relative_steps is not None]
    orc = [m.oracle_steps for m in ms if m.oracle_steps is not None]
    acc = [m.map_accuracy for m in ms if m.map_accuracy is not None]
    osucc = [m.oracle_success for m in ms if m.oracle_success is not None]
    rows.append({
        "task": cfg.task, "rooms": rooms, "width": cfg.width, "seed": "summary",
        "success": float(np.mean([m.success for m in ms])) if ms else None,
        "steps_to_success": float(np.mean(steps)) if steps else None,
        "steps_sd": float(np.std(steps)) if steps else None,
        "oracle_steps": float(np.mean(orc)) if orc else None,
        "relative_steps": float(np.mean(rel)) if rel else None,
        "final_coverage": float(np.mean([m.final_coverage for m in ms])) if ms else None,
        "places_created": float(np.mean([m.places_created for m in ms])) if ms else None,
        "wrong_goal_terminations": float(np.mean([m.wrong_goal_terminations for m in ms])) if ms else None,
        "map_accuracy": float(np.mean(acc)) if acc else None,
        "oracle_success": float(np.mean(osucc)) if osucc else None,
    })
    return rows


def aggregate_csv(cfg: RunConfig, results: list[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in aggregate_rows(cfg, results):
        w.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def trajectory_image(maze: Maze, traj: list[tuple[int, int]]) -> np.ndarray:
    """Maze render with visited cells shaded black (early) to white (late)."""
    img = render_rgb(maze.with_open_door(None)).copy()
    n = max(len(traj) - 1, 1)
    p = TILE_PIXELS
    for t, (x, y) in enumerate(traj):
        v = int(round(255 * t / n))
        img[y * p + 2:(y + 1) * p - 2, x * p + 2:(x + 1) * p - 2] = v
    return img


def reconstruction_image(maze: Maze, state: AgentState) -> np.ndarray:
    est = world_map(maze, reconstruct_map(state.cmap))
    tiles = np.full(est.shape, Tile.HIDDEN, dtype=np.uint8)
    known = est >= 0
    tiles[known] = CLASS_TO_TILE[est[known]]
    return render_rgb(tiles)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report(cfg: RunConfig, results: list[RunResult]) -> Path:
    """Write per-run logs, maps and renders plus the aggregate CSV under ``cfg.out``."""
    if not results:
        raise ValueError("report needs at least one run")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            m = r.metrics
            stem = f"{cfg.task}_seed{m.seed}"
            run_dir = out / stem
            run_dir.mkdir(exist_ok=True)
            log = {"config": _config_dict(cfg), "metrics": asdict(m), "ticks": r.ticks}
            (out / f"{stem}.json").write_text(json.dumps(_jsonable(log)))
            save_maze(r.maze, run_dir / "maze.txt")
            write_ppm(run_dir / "trajectory.ppm", trajectory_image(r.maze, r.trajectory))
            write_ppm(run_dir / "reconstruction.ppm", reconstruction_image(r.maze, r.state))
            files = {}
            seen = set()
            for e in r.state.cmap.experiences.values():
                if e.place_id in seen:
                    continue
                seen.add(e.place_id)
                z = r.state.cmap.places[e.place_id]
                save_place(z, run_dir / f"place_{e.place_id}.bin")
                (run_dir / f"place_{e.place_id}.txt").write_text(place_text(z))
                files[e.place_id] = f"place_{e.place_id}.bin"
            r.state.cmap.save_json(run_dir / "map.json", files)
        (out / f"{cfg.task}_aggregate.csv").write_text(aggregate_csv(cfg, results))
    except OSError as exc:
        raise OSError(f"cannot write report under {out}: {exc}") from exc
    return out


def _config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["rooms"] = list(cfg.rooms)
    return d


def peak_resident_bytes() -> int:
    """Peak resident set size of this process so far (Linux reports KiB)."""
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss) * 1024


def memory_profile(cfg: RunConfig, seed: int, checkpoints=(500, 1500), probe=peak_resident_bytes) -> dict:
    """``probe()`` memory at the given step counts of one exploration run (no tick log)."""
    maze = make_maze(cfg, seed)
    env = Environment(maze)
    state = _agent(cfg, maze, seed)
    obs = env.observe()
    marks = {}
    t0 = time.time()
    for t in range(1, max(checkpoints) + 1):
        action, state, _ = agent_step(env, "explore", state, obs=obs)
        obs = env.step(action)
        if t in checkpoints:
            marks[t] = probe()
    marks["seconds"] = time.time() - t0
    marks["experiences"] = len(state.cmap.experiences)
    return marks
