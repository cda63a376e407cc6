"""Short-horizon egocentric model: a decaying local map in the odometry frame.

The agent's frame starts at ``(0, 0)`` facing N.  Cells not re-observed for
more than ``memory_horizon`` updates are forgotten, so only a bounded
neighbourhood of the agent is ever alive; the backing grid is re-centred on
the agent when it drifts towards the edge.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from . import visibility as vis
from .beliefs import ALPHA, CountMap, predictive
from .gridworld import Action, Observation, Pose, TileClass, apply_action

MEMORY_HORIZON = 20
COLLISION_THRESHOLD = 0.5
_HALF = 32  # live cells are within horizon + 7 of the agent


def _actions(policy) -> list[int]:
    return list(getattr(policy, "actions", policy))


def rollout_poses(pose: Pose, actions: Sequence[int]) -> list[Pose]:
    """Poses after each action assuming every Forward succeeds."""
    out = []
    for a in actions:
        pose = apply_action(pose, a)
        out.append(pose)
    return out


def window_cells(pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    dx, dy = vis.OFFSETS[pose.heading]
    return pose.x + dx, pose.y + dy


@dataclass
class ObservationForecast:
    """Predicted 7x7 window: per-cell class probabilities plus a visibility mask."""

    probs: np.ndarray    # (7, 7, C)
    visible: np.ndarray  # (7, 7) bool, from the most likely map
    evidence: np.ndarray  # (7, 7) bool, cell carries observations

    def most_likely(self) -> np.ndarray:
        cls = self.probs.argmax(axis=-1).astype(np.int8)
        return np.where(self.visible, cls, -1)


def forecast(cmap: CountMap, pose: Pose, opaque: np.ndarray | None = None) -> ObservationForecast:
    """Window forecast at ``pose`` under ``cmap`` (occlusion from its MAP classes)."""
    gx, gy = window_cells(pose)
    probs = cmap.predictive_at(gx, gy)
    row, col, inb = cmap.index(gx, gy)
    ev = np.zeros(vis.N_CELLS, dtype=bool)
    ev[inb] = cmap.total[row[inb], col[inb]] > 0
    op = np.zeros(vis.N_CELLS, dtype=np.uint8)
    src = cmap.opaque if opaque is None else opaque
    op[inb] = src[row[inb], col[inb]]
    blocking = (op == 1) | ((op == 2) & (np.arange(vis.N_CELLS) != vis.AHEAD_INDEX))
    visible = vis.visible_mask(blocking)
    shape = (vis.WINDOW, vis.WINDOW)
    return ObservationForecast(probs.reshape(shape + (cmap.n_classes,)),
                               visible.reshape(shape), ev.reshape(shape))


class EgoBelief:
    """Local Dirichlet map with per-cell last-seen stamps and exact odometry."""

    def __init__(self, memory_horizon: int = MEMORY_HORIZON, alpha: float = ALPHA,
                 pose: Pose = Pose(0, 0, 0)):
        self.memory_horizon = int(memory_horizon)
        self.pose = Pose(*pose)
        self.clock = 0
        size = 2 * _HALF + 1
        self.map = CountMap(size, size, (pose.x - _HALF, pose.y - _HALF), alpha)
        self.last_seen = np.full((size, size), -1, dtype=np.int64)

    def copy(self) -> "EgoBelief":
        new = object.__new__(EgoBelief)
        new.memory_horizon = self.memory_horizon
        new.pose = self.pose
        new.clock = self.clock
        new.map = self.map.copy()
        new.last_seen = self.last_seen.copy()
        return new

    @property
    def alpha(self) -> float:
        return self.map.alpha

    def _recentre(self) -> None:
        ox, oy = self.map.origin
        size = self.map.shape[0]
        margin = 13  # rollout windows reach L + 6 cells
        if (ox + margin <= self.pose.x < ox + size - margin
                and oy + margin <= self.pose.y < oy + size - margin):
            return
        fresh = CountMap(size, size, (self.pose.x - _HALF, self.pose.y - _HALF), self.alpha)
        fresh.add_counts(self.map)
        stamps = np.full((size, size), -1, dtype=np.int64)
        ys, xs = np.nonzero(self.last_seen >= 0)
        row, col, inb = fresh.index(xs + ox, ys + oy)
        stamps[row[inb], col[inb]] = self.last_seen[ys[inb], xs[inb]]
        self.map, self.last_seen = fresh, stamps

    def update(self, action: int | None, obs: Observation) -> "EgoBelief":
        """In-place ``ego_update``; ``action=None`` integrates an observation only."""
        if action is not None:
            self.pose = apply_action(self.pose, action, blocked=obs.collision)
        self._recentre()
        self.clock += 1
        cls = obs.classes
        seen = cls >= 0
        gx, gy = window_cells(self.pose)
        gx, gy, cls = gx[seen], gy[seen], cls[seen]
        self.map.add(gx, gy, cls)
        row, col, inb = self.map.index(gx, gy)
        self.last_seen[row[inb], col[inb]] = self.clock
        stale = (self.last_seen >= 0) & (self.clock - self.last_seen > self.memory_horizon)
        if stale.any():
            r, c = np.nonzero(stale)
            self.map.clear_cells(r, c)
            self.last_seen[r, c] = -1
        return self

    def reset_pose(self, pose: Pose) -> None:
        self.pose = Pose(*pose)
        self._recentre()

    def wall_prob(self, x, y) -> np.ndarray:
        return self.map.wall_prob(x, y)


def ego_update(state: EgoBelief, action: int | None, obs: Observation) -> EgoBelief:
    """Pure update: returns a new belief, leaving ``state`` untouched."""
    return state.copy().update(action, obs)


def ego_predict(state: EgoBelief, policy) -> list[tuple[ObservationForecast, float]]:
    """Per-step (window forecast, collision probability) along ``policy``."""
    out = []
    pose = state.pose
    for a in _actions(policy):
        p_col = 0.0
        if a == Action.FORWARD:
            p_col = float(state.wall_prob(*pose.ahead())[0])
        pose = apply_action(pose, a)
        out.append((forecast(state.map, pose), p_col))
    return out


def collision_probs(state: EgoBelief, policy) -> np.ndarray:
    """Collision probability of each action (0 for turns)."""
    acts = _actions(policy)
    out = np.zeros(len(acts))
    pose = state.pose
    for i, a in enumerate(acts):
        if a == Action.FORWARD:
            out[i] = state.wall_prob(*pose.ahead())[0]
        pose = apply_action(pose, a)
    return out


def feasible(state: EgoBelief, policy, threshold: float = COLLISION_THRESHOLD):
    """Longest prefix whose Forwards all have collision probability < threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    acts = _actions(policy)
    bad = np.nonzero(collision_probs(state, acts) >= threshold)[0]
    n = int(bad[0]) if bad.size else len(acts)
    if hasattr(policy, "truncated"):
        return policy.truncated(n)
    return acts[:n]


def _pose_arrays(poses: Sequence[Pose]):
    px = np.array([p.x for p in poses], dtype=np.int64)
    py = np.array([p.y for p in poses], dtype=np.int64)
    ph = np.array([p.heading for p in poses], dtype=np.int64)
    return px, py, ph


def map_info_gain(cmap: CountMap, poses: Sequence[Pose], discount: float = 1.0) -> float:
    """Expected information gain of the cells first revealed along ``poses``."""
    if len(poses) == 0:
        return 0.0
    px, py, ph = _pose_arrays(poses)
    ox, oy = cmap.origin
    ptr = np.array([0, len(poses)], dtype=np.int64)
    return float(kernels.policy_gains(cmap.gain, cmap.opaque, px - ox, py - oy, ph, ptr, discount)[0])


def ego_info_gain(state: EgoBelief, policy, discount: float = 1.0) -> float:
    return map_info_gain(state.map, rollout_poses(state.pose, _actions(policy)), discount)


def union_log_prob(p: np.ndarray) -> float:
    """log P(at least one of independent events with probabilities ``p``)."""
    if p.size == 0:
        return 0.0
    miss = np.sum(np.log1p(-np.minimum(p, 1.0 - 1e-12)))
    return float(np.log(-np.expm1(miss)))


def map_preference(cmap: CountMap, poses: Sequence[Pose], target_class: int,
                   cells: str = "landing") -> float:
    """Log predictive probability that the rollout meets ``target_class``.

    ``cells="landing"`` considers the cells the agent stands on, ``"visible"``
    every cell of the forecast windows.  Returns 0 for an empty rollout.
    """
    if len(poses) == 0:
        return 0.0
    if cells == "landing":
        xs = np.array([p.x for p in poses])
        ys = np.array([p.y for p in poses])
    elif cells == "visible":
        px, py, ph = _pose_arrays(poses)
        ox, oy = cmap.origin
        gx, gy, visible = kernels.rollout_visibility(cmap.opaque, px - ox, py - oy, ph)
        xs, ys = gx[visible] + ox, gy[visible] + oy
    else:
        raise ValueError(f"unknown cell selection {cells!r}")
    uniq = np.unique(np.stack([xs, ys], axis=1), axis=0)
    return union_log_prob(cmap.class_prob(uniq[:, 0], uniq[:, 1], int(target_class)))


def ego_preference(state: EgoBelief, policy, g, cells: str = "landing") -> float:
    target = getattr(g, "target_class", g)
    return map_preference(state.map, rollout_poses(state.pose, _actions(policy)), target, cells)


__all__ = ["EgoBelief", "ObservationForecast", "ego_update", "ego_predict", "feasible",
           "ego_info_gain", "ego_preference", "collision_probs", "rollout_poses",
           "map_info_gain", "map_preference", "union_log_prob", "forecast",
           "MEMORY_HORIZON", "COLLISION_THRESHOLD", "TileClass"]
