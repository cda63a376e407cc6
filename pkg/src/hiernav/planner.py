"""Expected-free-energy controller: candidate policies, scoring and selection.

Costs follow the usual convention: ``G = -(W1*allo_ig + W2*ego_ig +
W3*allo_pref + W4*ego_pref)`` and policies are drawn with probability
proportional to ``exp(-gamma * G)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import kernels
from . import visibility as vis
from .allocentric import (PlaceModel, PreferredObservation, allo_info_gain, allo_preference)
from .beliefs import CountMap
from .egocentric import (COLLISION_THRESHOLD, EgoBelief, ego_info_gain, rollout_poses,
                         union_log_prob, window_cells)
from .gridworld import Action, Observation, Pose, apply_action

HEADING_OF = {(0, -1): 0, (1, 0): 1, (0, 1): 2, (-1, 0): 3}
REACH_EPS = 1e-9


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class Policy:
    actions: tuple[int, ...]
    target_cell: tuple[int, int] = (0, 0)  # (dx, dy) in odometry axes

    def __len__(self) -> int:
        return len(self.actions)

    def truncated(self, n: int) -> "Policy":
        return Policy(self.actions[:n], self.target_cell)


@dataclass(frozen=True)
class Weights:
    w1: float = 1.0
    w2: float = 0.2
    w3: float = 0.0
    w4: float = 0.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ValueError("weights must be >= 0")

    @classmethod
    def explore(cls) -> "Weights":
        return cls(1.0, 0.2, 0.0, 0.0)

    @classmethod
    def goal(cls) -> "Weights":
        return cls(0.2, 0.05, 1.0, 2.0)

    @classmethod
    def parse(cls, text: str) -> "Weights":
        vals = [float(v) for v in text.split(",")]
        if len(vals) != 4:
            raise ValueError("weights need four comma-separated values")
        return cls(*vals)

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3, self.w4])


@dataclass(frozen=True)
class EFEScore:
    total: float
    allo_ig: float
    ego_ig: float
    allo_pref: float
    ego_pref: float

    @property
    def components(self) -> tuple[float, float, float, float]:
        return (self.allo_ig, self.ego_ig, self.allo_pref, self.ego_pref)


@dataclass
class PlannerConfig:
    gamma: float = 4.0
    look_ahead: int = 6
    max_hypotheses: int = 6
    confidence_enter: float = 0.5
    confidence_exit: float = 0.95
    weights: Weights = field(default_factory=Weights.explore)
    goal_weights: Weights = field(default_factory=Weights.goal)
    deterministic: bool = True
    discount: float = 1.0
    collision_threshold: float = COLLISION_THRESHOLD
    hypothesis_weight: float = 1.0
    likelihood_blend: float = 0.8
    hypothesis_steps: int = 8
    prune_below: float = 1e-3
    mismatch_threshold: float = 0.5
    patience: int = 2
    sim_threshold: float = 0.9
    dist_threshold: float | None = None  # None: 1.5 x room width
    fallback_cells: float = 1.0  # frontier fallback when no rollout reveals this many new cells
    hysteresis: float = 0.1  # keep the previous plan unless beaten by this fraction
    frontier_patience: int = 25
    inject_weight: float = 1.0
    memory_horizon: int = 20
    place_size: int = 23
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.look_ahead < 1:
            raise ValueError("look_ahead must be >= 1")


@dataclass
class Hypothesis:
    candidate: int | None  # exp_id, or None for a fresh place
    place: PlaceModel
    pose: Pose  # in the candidate's local frame
    weight: float
    obs_seen: int = 0


# ---------------------------------------------------------------- policies

def _turns(h_from: int, h_to: int) -> list[int]:
    d = (h_to - h_from) % 4
    return {0: [], 1: [Action.TURN_RIGHT], 2: [Action.TURN_LEFT, Action.TURN_LEFT],
            3: [Action.TURN_LEFT]}[d]


def _path(heading: int, legs: Sequence[tuple[int, int, int]]) -> tuple[int, ...]:
    acts: list[int] = []
    h = heading
    for ux, uy, n in legs:
        if n == 0:
            continue
        want = HEADING_OF[(ux, uy)]
        acts += _turns(h, want)
        acts += [Action.FORWARD] * n
        h = want
    return tuple(int(a) for a in acts)


def _l_paths(heading: int, dx: int, dy: int) -> list[Policy]:
    sx, sy = int(np.sign(dx)), int(np.sign(dy))
    x_first = _path(heading, [(sx, 0, abs(dx)), (0, sy, abs(dy))])
    y_first = _path(heading, [(0, sy, abs(dy)), (sx, 0, abs(dx))])
    return [Policy(x_first, (dx, dy)), Policy(y_first, (dx, dy))]


def perimeter_paths(L: int, heading: int) -> list[Policy]:
    """Both L-shaped paths to every cell on the half-width-L square (not deduplicated)."""
    out = []
    for dy in range(-L, L + 1):
        for dx in range(-L, L + 1):
            if max(abs(dx), abs(dy)) == L:
                out += _l_paths(heading, dx, dy)
    return out


@lru_cache(maxsize=64)
def _gen_cached(L: int, heading: int) -> tuple[Policy, ...]:
    cands = perimeter_paths(L, heading)
    for k in range(1, L):
        for ux, uy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            cands.append(Policy(_path(heading, [(ux, uy, k)]), (ux * k, uy * k)))
    seen = {}
    for p in cands:
        seen.setdefault(p.actions, p)
    return tuple(sorted(seen.values(), key=lambda p: (len(p.actions), p.actions)))


def gen_policies(L: int, heading: int) -> list[Policy]:
    """Deduplicated L-shaped perimeter paths plus straight paths of length < L.

    Ordered by length, then action sequence, which fixes every tie-break.
    """
    if L < 1:
        raise ValueError("look-ahead must be >= 1")
    return list(_gen_cached(int(L), int(heading) % 4))


@dataclass(frozen=True)
class PolicyTable:
    """Padded arrays describing a policy set relative to the agent pose."""

    policies: tuple[Policy, ...]
    acts: np.ndarray    # (P, T) action codes, -1 padding
    length: np.ndarray  # (P,)
    dx: np.ndarray      # (P, T) position after each action
    dy: np.ndarray
    head: np.ndarray    # (P, T) heading after each action
    fwd: np.ndarray     # (P, T) bool


@lru_cache(maxsize=64)
def policy_table(L: int, heading: int) -> PolicyTable:
    return make_table(tuple(gen_policies(L, heading)), heading)


def make_table(pols: tuple[Policy, ...], heading: int) -> PolicyTable:
    P, T = len(pols), max(len(p) for p in pols)
    acts = np.full((P, T), -1, dtype=np.int64)
    dx = np.zeros((P, T), dtype=np.int64)
    dy = np.zeros((P, T), dtype=np.int64)
    head = np.zeros((P, T), dtype=np.int64)
    for i, p in enumerate(pols):
        pose = Pose(0, 0, heading)
        for t, a in enumerate(p.actions):
            pose = apply_action(pose, a)
            acts[i, t] = a
            dx[i, t], dy[i, t], head[i, t] = pose
        dx[i, len(p):], dy[i, len(p):], head[i, len(p):] = pose
    length = np.array([len(p) for p in pols], dtype=np.int64)
    return PolicyTable(pols, acts, length, dx, dy, head, acts == Action.FORWARD)


# ---------------------------------------------------------------- scoring

def _landing_poses(pose: Pose, policy: Policy) -> list[Pose]:
    return [pose] + rollout_poses(pose, policy.actions)


def _positional_pref(dist: np.ndarray, dist_origin: tuple[int, int], xs, ys) -> float:
    """-(sum of geodesic distances to the target) over the given cells."""
    xs = np.asarray(xs) - dist_origin[0]
    ys = np.asarray(ys) - dist_origin[1]
    h, w = dist.shape
    inb = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    big = float(h * w)
    d = np.full(xs.shape, big)
    vals = dist[ys[inb], xs[inb]].astype(float)
    d[inb] = np.where(vals < 0, big, vals)
    return -float(d.sum())


def distance_field(cmap: CountMap, target: tuple[int, int]) -> np.ndarray:
    """Geodesic steps to ``target`` over cells not believed Wall (unknown passes)."""
    ox, oy = cmap.origin
    passable = (cmap.opaque != 1).astype(np.uint8)
    return kernels.grid_distance(passable, [target[0] - ox], [target[1] - oy])


def _reach_pref(cmap: CountMap, target: Pose, k: int, xs, ys) -> float:
    hit = np.any((np.asarray(xs) == target.x) & (np.asarray(ys) == target.y))
    p = float(cmap.class_prob(target.x, target.y, k)[0]) if hit else 0.0
    return math.log(REACH_EPS + p)


def preference_terms(policy: Policy, pose: Pose, ego: EgoBelief, z: PlaceModel,
                     g: PreferredObservation | None) -> tuple[float, float]:
    """(allocentric, egocentric) log-preference of ``policy`` from global ``pose``."""
    if g is None or len(policy) == 0:
        return 0.0, 0.0
    poses = _landing_poses(pose, policy)
    xs = np.array([p.x for p in poses])
    ys = np.array([p.y for p in poses])
    if g.pose is not None:
        target = z.to_local(g.pose)
        dist = distance_field(z.map, (target.x, target.y))
        lx, ly = xs[1:] - z.origin.x, ys[1:] - z.origin.y
        allo = _positional_pref(dist, z.frame_origin, lx, ly)
        ego_term = 0.0
        if g.target_class is not None:
            ego_term = _reach_pref(ego.map, g.pose, int(g.target_class), xs, ys)
        return allo, ego_term
    local = [z.to_local(p) for p in poses]
    return (allo_preference(z, local, g),
            allo_preference_map(ego.map, poses, g))


def allo_preference_map(cmap: CountMap, poses, g: PreferredObservation) -> float:
    from .egocentric import map_preference
    if g.target_class is None:
        return 0.0
    return map_preference(cmap, poses, g.target_class)


def score_policy(policy: Policy, ego: EgoBelief, z: PlaceModel, cfg: PlannerConfig,
                 g: PreferredObservation | None = None, weights: Weights | None = None,
                 pose: Pose | None = None) -> EFEScore:
    """EFE of one (already truncated) policy from the agent's pose.

    ``z`` supplies the allocentric terms; its local frame is entered through
    ``z.to_local``.  Preference terms are 0 without a goal.
    """
    w = weights or cfg.weights
    if len(policy) == 0:
        return EFEScore(0.0, 0.0, 0.0, 0.0, 0.0)
    pose = ego.pose if pose is None else pose
    local = [z.to_local(p) for p in rollout_poses(pose, policy.actions)]
    a_ig = allo_info_gain(z, local, cfg.discount)
    e_ig = ego_info_gain(ego, policy, cfg.discount) if w.w2 else 0.0
    a_pref, e_pref = preference_terms(policy, pose, ego, z, g)
    total = -(w.w1 * a_ig + w.w2 * e_ig + w.w3 * a_pref + w.w4 * e_pref)
    return EFEScore(total, a_ig, e_ig, a_pref, e_pref)


@dataclass
class BatchScores:
    policies: list[Policy]
    G: np.ndarray
    allo_ig: np.ndarray
    ego_ig: np.ndarray
    allo_pref: np.ndarray
    ego_pref: np.ndarray
    novelty: np.ndarray | None = None  # never-observed cells each rollout would reveal

    def score(self, i: int) -> EFEScore:
        return EFEScore(float(self.G[i]), float(self.allo_ig[i]), float(self.ego_ig[i]),
                        float(self.allo_pref[i]), float(self.ego_pref[i]))


def truncate_batch(table: PolicyTable, pose: Pose, maps: Sequence[CountMap],
                   threshold: float) -> tuple[list[Policy], np.ndarray, np.ndarray]:
    """Feasibility-truncate every policy against each wall belief in ``maps``.

    Returns the distinct non-empty truncated policies with their table rows
    and lengths, in table order.
    """
    x = pose.x + table.dx
    y = pose.y + table.dy
    live = table.fwd & (np.arange(table.acts.shape[1])[None, :] < table.length[:, None])
    bad = np.zeros(live.shape, dtype=bool)
    if live.any():
        fx, fy = x[live], y[live]
        wp = np.zeros(fx.shape)
        for m in maps:
            wp = np.maximum(wp, m.wall_prob(fx, fy))
        bad[live] = wp >= threshold
    first = np.where(bad.any(axis=1), bad.argmax(axis=1), table.length)
    n = np.minimum(first, table.length)
    rows, lens, out, seen = [], [], [], set()
    for i in range(len(table.policies)):
        k = int(n[i])
        if k == 0:
            continue
        key = table.policies[i].actions[:k]
        if key in seen:
            continue
        seen.add(key)
        rows.append(i)
        lens.append(k)
        out.append(table.policies[i].truncated(k))
    return out, np.array(rows, dtype=np.int64), np.array(lens, dtype=np.int64)


def _flatten(table: PolicyTable, pose: Pose, rows: np.ndarray, lens: np.ndarray):
    ptr = np.zeros(rows.size + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(lens)
    mask = np.arange(table.acts.shape[1])[None, :] < lens[:, None]
    px = (pose.x + table.dx[rows])[mask]
    py = (pose.y + table.dy[rows])[mask]
    ph = table.head[rows][mask]
    return px, py, ph, ptr, mask


def frontier_mask(cmap: CountMap) -> np.ndarray:
    """Unobserved cells 4-adjacent to an observed non-wall cell."""
    unknown = cmap.total <= 0
    open_ = ~unknown & (cmap.opaque != 1)
    return unknown & ndimage.binary_dilation(open_, structure=ndimage.generate_binary_structure(2, 1))


def batch_gains(cmap: CountMap, gain: np.ndarray | None, px, py, ph, ptr, discount: float) -> np.ndarray:
    ox, oy = cmap.origin
    g = cmap.gain if gain is None else gain
    return kernels.policy_gains(g, cmap.opaque, px - ox, py - oy, ph, ptr, discount)


def score_batch(pose: Pose, ego: EgoBelief, z: PlaceModel, cfg: PlannerConfig,
                g: PreferredObservation | None = None, weights: Weights | None = None,
                gain_override: np.ndarray | None = None, dist: np.ndarray | None = None,
                table: PolicyTable | None = None) -> BatchScores:
    """Truncate and score the whole candidate set in one pass.

    ``z`` must be a place whose local frame coincides with the odometry frame
    (the composite map).  ``gain_override`` replaces the allocentric gain map
    (hypothesis mode) and zeroes the egocentric gain term.  ``dist`` is a
    distance field to ``g.pose`` on ``z``'s grid.  ``table`` overrides the
    generated candidate set; an infeasible override yields an empty result.
    """
    w = weights or cfg.weights
    custom = table is not None
    table = table if custom else policy_table(cfg.look_ahead, pose.heading)
    pols, rows, lens = truncate_batch(table, pose, [ego.map, z.map], cfg.collision_threshold)
    if not pols and custom:
        empty = np.zeros(0)
        return BatchScores([], empty, empty, empty, empty, empty)
    if not pols:
        pols = [Policy((int(Action.TURN_LEFT),))]
        rows = np.array([next(i for i, p in enumerate(table.policies) if p.actions[0] == Action.TURN_LEFT)])
        lens = np.array([1])
    px, py, ph, ptr, mask = _flatten(table, pose, rows, lens)
    a_ig = batch_gains(z.map, gain_override, px, py, ph, ptr, cfg.discount)
    if gain_override is None and w.w2:
        e_ig = batch_gains(ego.map, None, px, py, ph, ptr, cfg.discount)
    else:
        e_ig = np.zeros(len(pols))
    a_pref = np.zeros(len(pols))
    e_pref = np.zeros(len(pols))
    if g is not None:
        lx = np.concatenate([np.full((rows.size, 1), pose.x), pose.x + table.dx[rows]], axis=1)
        ly = np.concatenate([np.full((rows.size, 1), pose.y), pose.y + table.dy[rows]], axis=1)
        lmask = np.concatenate([np.ones((rows.size, 1), dtype=bool), mask], axis=1)
        if g.pose is not None:
            if dist is None:
                dist = distance_field(z.map, (g.pose.x, g.pose.y))
            h, wd = dist.shape
            cx, cy = lx - z.map.origin[0], ly - z.map.origin[1]
            inb = (cx >= 0) & (cx < wd) & (cy >= 0) & (cy < h)
            big = float(h * wd)
            d = np.full(lx.shape, big)
            vals = dist[np.where(inb, cy, 0), np.where(inb, cx, 0)].astype(float)
            d = np.where(inb & (vals >= 0), vals, big)
            a_pref = -np.where(lmask[:, 1:], d[:, 1:], 0.0).sum(axis=1)
            if g.target_class is not None:
                hit = ((lx == g.pose.x) & (ly == g.pose.y) & lmask).any(axis=1)
                p = float(ego.map.class_prob(g.pose.x, g.pose.y, int(g.target_class))[0])
                e_pref = np.log(REACH_EPS + np.where(hit, p, 0.0))
        elif g.target_class is not None:
            k = int(g.target_class)
            for i in range(rows.size):
                cells = np.unique(np.stack([lx[i][lmask[i]], ly[i][lmask[i]]], axis=1), axis=0)
                a_pref[i] = union_log_prob(z.map.class_prob(cells[:, 0], cells[:, 1], k))
                e_pref[i] = union_log_prob(ego.map.class_prob(cells[:, 0], cells[:, 1], k))
    if gain_override is not None:
        G = -(cfg.hypothesis_weight * a_ig + w.w3 * a_pref + w.w4 * e_pref)
    else:
        G = -(w.w1 * a_ig + w.w2 * e_ig + w.w3 * a_pref + w.w4 * e_pref)
    novelty = None
    if gain_override is None:
        # conservative: unknown cells block the imagined view here
        ox, oy = z.map.origin
        opaque = np.where(z.map.total <= 0, 1, z.map.opaque).astype(np.uint8)
        novelty = kernels.policy_gains(frontier_mask(z.map).astype(np.float64), opaque,
                                       px - ox, py - oy, ph, ptr, 1.0)
    return BatchScores(pols, G, a_ig, e_ig, a_pref, e_pref, novelty)


# ---------------------------------------------------------------- selection

def policy_probabilities(G: Sequence[float], gamma: float) -> np.ndarray:
    """Softmax of ``-gamma * G`` with max subtraction."""
    G = np.asarray(G, dtype=np.float64)
    if G.size == 0:
        raise ValueError("no policies to select from")
    logits = -gamma * G
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()


def select_index(G: Sequence[float], gamma: float, deterministic: bool, rng=None) -> int:
    G = np.asarray(G, dtype=np.float64)
    if G.size == 0:
        raise ValueError("no policies to select from")
    if deterministic:
        return int(np.argmin(G))  # first minimum = smallest index
    p = policy_probabilities(G, gamma)
    rng = rng if rng is not None else np.random.default_rng()
    return int(rng.choice(G.size, p=p))


def select_policy(scored: Sequence[tuple[Policy, float]], gamma: float,
                  deterministic: bool = True, rng=None) -> Policy:
    if len(scored) == 0:
        raise ValueError("no policies to select from")
    i = select_index([g for _, g in scored], gamma, deterministic, rng)
    return scored[i][0]


# ---------------------------------------------------------------- hypotheses

def observation_cells(pose: Pose, obs: Observation, mask=None):
    """Global (x, y, class) of the visible (and unmasked) cells of ``obs``."""
    cls = obs.classes
    keep = cls >= 0
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool).reshape(-1)
    gx, gy = window_cells(pose)
    return gx[keep], gy[keep], cls[keep]


def ego_observed_probs(ego: EgoBelief, pose: Pose, obs: Observation, mask=None) -> np.ndarray:
    """Egocentric predictive probability of each kept observed cell's class."""
    gx, gy, cls = observation_cells(pose, obs, mask)
    if cls.size == 0:
        return np.zeros(0)
    return ego.map.predictive_at(gx, gy)[np.arange(cls.size), cls]


def hypothesis_loglik(h: Hypothesis, obs: Observation, p_ego: np.ndarray, beta: float,
                      mask=None) -> float:
    """Sum over kept cells of log(beta * p_place + (1 - beta) * p_ego)."""
    from .allocentric import observed_probability
    p, _ = observed_probability(h.place, obs, h.pose, mask, complete=True)
    if p.size == 0:
        return 0.0
    return float(np.sum(np.log(beta * p + (1.0 - beta) * p_ego)))


def observe_hypotheses(hyps: list[Hypothesis], obs: Observation, p_ego: np.ndarray,
                       beta: float, mask=None, prune_below: float = 1e-3,
                       reset=None) -> list[Hypothesis]:
    """Bayes step at the hypotheses' current poses, then integrate ``obs``."""
    if not hyps:
        return hyps
    ll = np.array([hypothesis_loglik(h, obs, p_ego, beta, mask) for h in hyps])
    logw = np.log(np.array([max(h.weight, 0.0) for h in hyps])) + ll
    if not np.isfinite(logw).any():
        return reset() if reset is not None else hyps
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    for h, wi in zip(hyps, w):
        h.weight = float(wi)
    kept = [h for h in hyps if h.weight >= prune_below]
    if not kept:
        return reset() if reset is not None else hyps
    total = sum(h.weight for h in kept)
    for h in kept:
        h.weight /= total
        h.place.update(obs, h.pose, mask)
        h.obs_seen += 1
    return kept


def hypothesis_update(hyps: list[Hypothesis], action: int | None, obs: Observation,
                      ego: EgoBelief, beta: float = 0.8, mask=None, prune_below: float = 1e-3,
                      reset=None, ego_pose: Pose | None = None) -> list[Hypothesis]:
    """Advance every hypothesis by ``action`` and reweight by ``obs``.

    ``ego`` is the egocentric belief *before* it integrates ``obs``; its
    predictive is blended with each candidate place's.  Hypotheses below
    ``prune_below`` are dropped; ``reset()`` supplies the fresh set when
    nothing survives.
    """
    for h in hyps:
        if action is not None:
            h.pose = apply_action(h.pose, action, blocked=obs.collision)
    pose = ego_pose
    if pose is None:
        pose = ego.pose if action is None else apply_action(ego.pose, action, blocked=obs.collision)
    p_ego = ego_observed_probs(ego, pose, obs, mask)
    return observe_hypotheses(hyps, obs, p_ego, beta, mask, prune_below, reset)


def _cell_predictives(h: Hypothesis, gx, gy) -> np.ndarray:
    lx = np.asarray(gx) - h.place.origin.x
    ly = np.asarray(gy) - h.place.origin.y
    probs, _ = h.place.predictive_cells(lx, ly, complete=True)
    return probs


def disagreement_maps(hyps: Sequence[Hypothesis], gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """(N, n) weighted KL(p_n || mixture) at global cells; rows sum to the mutual information."""
    probs = np.stack([_cell_predictives(h, gx, gy) for h in hyps])  # (N, n, C)
    w = np.array([h.weight for h in hyps])
    w = w / w.sum()
    mix = np.einsum("n,nkc->kc", w, probs)
    kl = np.sum(probs * (np.log(probs) - np.log(mix)[None]), axis=-1)
    return w[:, None] * np.maximum(kl, 0.0)


def hypothesis_gain_map(hyps: Sequence[Hypothesis], cmap: CountMap, centre: Pose,
                        radius: int = 14) -> np.ndarray:
    """Mutual-information map (hypothesis vs. observed class) aligned with ``cmap``."""
    out = np.zeros(cmap.shape)
    if len(hyps) < 2:
        return out
    ox, oy = cmap.origin
    h, w = cmap.shape
    x0, x1 = max(centre.x - radius - ox, 0), min(centre.x + radius - ox + 1, w)
    y0, y1 = max(centre.y - radius - oy, 0), min(centre.y + radius - oy + 1, h)
    if x0 >= x1 or y0 >= y1:
        return out
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mi = disagreement_maps(hyps, xx.ravel() + ox, yy.ravel() + oy).sum(axis=0)
    out[y0:y1, x0:x1] = mi.reshape(yy.shape)
    return out


def hypothesis_efe(hyp: Hypothesis, policy: Policy, hyps: Sequence[Hypothesis],
                   visibility: CountMap | None = None, discount: float = 1.0) -> float:
    """Epistemic value this hypothesis contributes along ``policy``.

    ``w_n * sum_cells KL(p_n || p_mix)`` over the cells first revealed by the
    rollout from the hypothesis pose; summed over hypotheses this is the
    mutual information between the hypothesis and the imagined observations.
    Visibility follows ``visibility`` (global frame) or the hypothesis's own
    place.
    """
    if len(hyps) < 2 or len(policy) == 0:
        return 0.0
    start = hyp.place.to_global(hyp.pose)
    poses = rollout_poses(start, policy.actions)
    idx = [i for i, h in enumerate(hyps) if h is hyp]
    if not idx:
        raise ValueError("hypothesis is not part of the set")
    if visibility is None:
        vmap = hyp.place.map
        shift = (hyp.place.origin.x, hyp.place.origin.y)
    else:
        vmap, shift = visibility, (0, 0)
    px = np.array([p.x - shift[0] for p in poses], dtype=np.int64)
    py = np.array([p.y - shift[1] for p in poses], dtype=np.int64)
    ph = np.array([p.heading for p in poses], dtype=np.int64)
    ox, oy = vmap.origin
    gx, gy, visible = kernels.rollout_visibility(vmap.opaque, px - ox, py - oy, ph)
    first: dict[tuple[int, int], int] = {}
    for k in range(len(poses)):
        for x, y in zip(gx[k][visible[k]].tolist(), gy[k][visible[k]].tolist()):
            first.setdefault((x, y), k)
    if not first:
        return 0.0
    cells = np.array(list(first.keys()))
    ks = np.array(list(first.values()))
    wx = cells[:, 0] + ox + shift[0]
    wy = cells[:, 1] + oy + shift[1]
    contrib = disagreement_maps(hyps, wx, wy)[idx[0]]
    return float(np.sum(contrib * np.power(discount, ks)))


__all__ = [
    "Policy", "Weights", "EFEScore", "PlannerConfig", "Hypothesis", "gen_policies",
    "perimeter_paths", "policy_table", "score_policy", "score_batch", "select_policy",
    "select_index", "policy_probabilities", "hypothesis_update", "hypothesis_efe",
    "hypothesis_gain_map", "distance_field", "truncate_batch", "BatchScores",
]
