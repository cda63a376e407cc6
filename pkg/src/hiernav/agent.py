"""One-tick agent loop over the egocentric, allocentric and cognitive-map layers."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from . import kernels
from . import visibility as vis
from .allocentric import PlaceModel, PreferredObservation, event_boundary, place_mismatch
from .beliefs import UNKNOWN_GAIN, CountMap, dirichlet_kl
from .cogmap import CognitiveMap, match_place, place_centre, plan_route, subgoal_observation
from .egocentric import EgoBelief
from .gridworld import Action, Observation, Pose, TileClass, apply_action
from .planner import (EFEScore, Hypothesis, PlannerConfig, Policy, ego_observed_probs,
                      hypothesis_gain_map, make_table, observation_cells, observe_hypotheses,
                      score_batch, select_index)

COMPOSITE_SIZE = 33


def scope_mask(obs: Observation) -> np.ndarray:
    """Visible cells not seen through a door (doors themselves stay visible)."""
    cls = obs.classes
    blocking = (cls == TileClass.WALL) | (cls == TileClass.DOOR)
    return vis.visible_mask(blocking) & (cls >= 0)


class AgentState:
    """Everything the agent carries between ticks."""

    def __init__(self, cfg: PlannerConfig | None = None, room_width: int = 4):
        self.cfg = cfg or PlannerConfig()
        self.ego = EgoBelief(self.cfg.memory_horizon)
        self.composite = PlaceModel(-1, Pose(0, 0, 0), size=COMPOSITE_SIZE, growable=True)
        dist = self.cfg.dist_threshold if self.cfg.dist_threshold is not None else 1.5 * room_width
        self.cmap = CognitiveMap(dist_threshold=dist, sim_threshold=self.cfg.sim_threshold)
        self.place: PlaceModel | None = None
        self.next_place_id = 0
        self.buffer: list = []
        self.replay: list = []
        self.hyps: list[Hypothesis] | None = None
        self.probe: PlaceModel | None = None
        self.hyp_steps = 0
        self.last_door: tuple[int, int] | None = None
        self.tick = 0
        self.rng = np.random.default_rng(self.cfg.seed)
        self.started = False
        self.last_action: int | None = None
        self.plan: tuple[int, ...] = ()  # unexecuted remainder of the last winner
        self.boundaries = 0
        # exploration fallback
        self.frontier: tuple[int, int] | None = None
        self.frontier_best = math.inf
        self.frontier_since = 0
        self.blacklist: set = set()
        # goal routing
        self.reached: set = set()
        self.route_from: int | None = None
        self.subgoal: tuple[int, int] | None = None

    @property
    def pose(self) -> Pose:
        return self.ego.pose

    def new_place(self, origin: Pose) -> PlaceModel:
        z = PlaceModel(self.next_place_id, origin, size=self.cfg.place_size)
        self.next_place_id += 1
        return z

    def reset_pose(self, pose: Pose = Pose(0, 0, 0)) -> None:
        """Re-anchor the pose belief (used after a teleport back to the start)."""
        self.ego.reset_pose(pose)
        self.cmap.reset_pose(pose)
        self.buffer.clear()
        self.replay.clear()
        self.hyps, self.probe = None, None
        self.last_action = None
        self.plan = ()
        self.reached.clear()
        self.subgoal = None
        best = None
        for eid, exp in self.cmap.experiences.items():
            z = self.cmap.places[exp.place_id]
            loc = z.to_local(pose)
            if z.map.contains(loc.x, loc.y):
                r, c, _ = z.map.index(loc.x, loc.y)
                if z.map.total[r, c] > 0:
                    d = math.hypot(exp.centre[0] - pose.x, exp.centre[1] - pose.y)
                    if best is None or d < best[0]:
                        best = (d, eid)
        if best is not None:
            self.cmap.current = best[1]
            self.place = self.cmap.places[self.cmap.experiences[best[1]].place_id]
            self.place.mismatch_history.clear()


# ---------------------------------------------------------------- perception

def observation_surprise(cmap: CountMap, pose: Pose, obs: Observation) -> tuple[float, float]:
    """(realised, expected) information gain of ``obs`` under ``cmap``.

    Realised gain is the Bayesian surprise KL(posterior || prior) of the
    cells the observation reveals; expected gain is the same quantity
    averaged over the predictive, i.e. what the planner scores.
    """
    gx, gy, cls = observation_cells(pose, obs)
    if gx.size == 0:
        return 0.0, 0.0
    row, col, inb = cmap.index(gx, gy)
    prior = np.full((gx.size, cmap.n_classes), cmap.alpha)
    prior[inb] += cmap.counts[row[inb], col[inb]]
    post = prior.copy()
    post[np.arange(gx.size), cls] += 1.0
    realised = float(dirichlet_kl(post, prior).sum())
    expected = float(cmap.gain[row[inb], col[inb]].sum() + (~inb).sum() * UNKNOWN_GAIN)
    return realised, expected


def perceive(state: AgentState, action: int | None, obs: Observation) -> dict:
    """Integrate ``obs`` (taken after ``action``) into every layer."""
    cfg = state.cfg
    events: list[dict] = []
    pose = state.pose
    if action is not None:
        pose = apply_action(pose, action, blocked=obs.collision)
    mask = scope_mask(obs)
    p_ego = ego_observed_probs(state.ego, pose, obs, mask)
    info_gain, expected_gain = observation_surprise(state.composite.map, pose, obs)
    state.ego.update(action, obs)
    if not state.started:
        state.cmap.start(pose)
    elif action is not None and not (action == Action.FORWARD and obs.collision):
        state.cmap.step(action)
    state.composite.update(obs, pose)
    if obs.classes[vis.AGENT_INDEX] == TileClass.DOOR:
        state.last_door = (pose.x, pose.y)
    mismatch = None

    if not state.started:
        z = state.new_place(pose)
        z.update(obs, z.to_local(pose), mask)
        exp = state.cmap.add_experience(z, state.tick)
        state.place = z
        state.started = True
        events.append({"event": "new_experience", "exp": exp.exp_id, "place": z.place_id})
    elif state.hyps is None:
        z = state.place
        local = z.to_local(pose)
        if z.map.contains(local.x, local.y):
            mismatch = place_mismatch(z, obs, local, mask, complete=True)
        else:
            mismatch = 1.0
        z.record_mismatch(mismatch)
        if mismatch > cfg.mismatch_threshold:
            state.buffer.append((obs, pose, mask, p_ego))
            if event_boundary(z.mismatch_history, cfg.mismatch_threshold, cfg.patience):
                state.boundaries += 1
                events.append({"event": "boundary", "exp": state.cmap.current})
                _enter_hypotheses(state, events)
        else:
            state.buffer.clear()
            z.update(obs, local, mask)
            state.cmap.refresh_centre(state.cmap.current)
    else:
        for h in state.hyps:
            if action is not None:
                h.pose = apply_action(h.pose, action, blocked=obs.collision)
        _hyp_observe(state, obs, pose, mask, p_ego)
        state.hyp_steps += 1
        _maybe_resolve(state, events)
    if obs.collision:
        state.plan = ()
    return {"events": events, "info_gain": info_gain, "expected_info_gain": expected_gain,
            "mismatch": mismatch}


def _fresh_reset(state: AgentState):
    def reset():
        z = state.probe.copy()
        return [Hypothesis(None, z, z.to_local(state.pose), 1.0, z.obs_count)]
    return reset


def _hyp_observe(state: AgentState, obs, pose, mask, p_ego) -> None:
    cfg = state.cfg
    for h in state.hyps:
        h.pose = h.place.to_local(pose)
    state.hyps = observe_hypotheses(state.hyps, obs, p_ego, cfg.likelihood_blend, mask,
                                    cfg.prune_below, _fresh_reset(state))
    local = state.probe.to_local(pose)
    if state.probe.map.contains(local.x, local.y):
        state.probe.update(obs, local, mask)
    state.replay.append((obs, pose, mask))


def _enter_hypotheses(state: AgentState, events: list) -> None:
    cfg = state.cfg
    pose0 = state.buffer[0][1]
    fresh = PlaceModel(state.next_place_id, pose0, size=cfg.place_size)
    state.probe = PlaceModel(state.next_place_id, pose0, size=cfg.place_size)
    hyps = [Hypothesis(None, fresh, fresh.to_local(pose0), 1.0)]
    for eid in state.cmap.nearby(state.pose)[: max(cfg.max_hypotheses - 1, 0)]:
        z = state.cmap.places[state.cmap.experiences[eid].place_id]
        hyps.append(Hypothesis(eid, z.copy(), z.to_local(pose0), 1.0))
    for h in hyps:
        h.weight = 1.0 / len(hyps)
    state.hyps = hyps
    state.hyp_steps = 0
    state.replay = []
    for obs, pose, mask, p_ego in state.buffer:
        _hyp_observe(state, obs, pose, mask, p_ego)
    state.buffer.clear()
    events.append({"event": "hypotheses", "candidates": [h.candidate for h in state.hyps]})
    _maybe_resolve(state, events)


def _maybe_resolve(state: AgentState, events: list) -> None:
    cfg = state.cfg
    hyps = state.hyps
    weights = [h.weight for h in hyps]
    local = state.probe.to_local(state.pose)
    stuck = not state.probe.map.contains(local.x, local.y)
    if not (len(hyps) == 1 or max(weights) > cfg.confidence_exit
            or state.hyp_steps >= cfg.hypothesis_steps or stuck):
        return
    best = hyps[int(np.argmax(weights))]
    cmap = state.cmap
    match = None
    if best.candidate is not None and state.probe.obs_count > 0:
        match = match_place(cmap, state.probe, state.pose)
    if match is not None:
        exp = cmap.experiences[match]
        z = cmap.places[exp.place_id]
        for obs, pose, mask in state.replay:
            loc = z.to_local(pose)
            if z.map.contains(loc.x, loc.y):
                z.update(obs, loc, mask)
        previous = cmap.current
        cmap.close_loop(match, state.last_door, tuple(state.pose), cfg.inject_weight)
        cmap.refresh_centre(match)
        events.append({"event": "loop_closure", "exp": match, "from": previous})
    else:
        z = state.probe
        state.next_place_id = max(state.next_place_id, z.place_id + 1)
        exp = cmap.add_experience(z, state.tick, state.last_door)
        events.append({"event": "new_experience", "exp": exp.exp_id, "place": z.place_id})
    z.mismatch_history.clear()
    z.confidence, z._ema = 1.0, 0.0
    state.place = z
    state.hyps, state.probe = None, None
    state.replay = []


# ---------------------------------------------------------------- planning

def frontier_target(state: AgentState) -> tuple[int, int] | None:
    """Nearest reachable known passable cell next to unknown space (not blacklisted)."""
    cm = state.composite.map
    known = cm.total > 0
    passable = known & (cm.map_class != TileClass.WALL)
    unknown = ~known
    ox, oy = cm.origin
    banned = np.zeros_like(unknown)
    for (bx, by) in state.blacklist:
        r, c, inb = cm.index(bx, by)
        if inb:
            banned[r, c] = True
    cross = ndimage.generate_binary_structure(2, 1)
    ortho = passable & ndimage.binary_dilation(unknown, structure=cross)
    front = ortho & ~banned
    if not ortho.any():
        # only room corners are left; they touch the interior diagonally
        front = passable & ~banned & ndimage.binary_dilation(unknown, structure=np.ones((3, 3), bool))
    if not front.any():
        return None
    pose = state.pose
    dist = kernels.grid_distance((cm.opaque != 1).astype(np.uint8), [pose.x - ox], [pose.y - oy])
    d = np.where(front & (dist >= 0), dist, np.iinfo(np.int32).max)
    flat = int(np.argmin(d))
    if d.flat[flat] == np.iinfo(np.int32).max:
        return None
    r, c = divmod(flat, cm.shape[1])
    target = (c + ox, r + oy)
    here = int(d.flat[flat])
    if target != state.frontier:
        state.frontier, state.frontier_best, state.frontier_since = target, here, state.tick
    elif here < state.frontier_best:
        state.frontier_best, state.frontier_since = here, state.tick
    elif state.tick - state.frontier_since > state.cfg.frontier_patience:
        state.blacklist.add(target)
        state.frontier = None
        return frontier_target(state)
    return target


def goal_cell(state: AgentState, goal_class: int, min_mass: float = 2.0):
    """(cell, exp_id) of the remembered goal, searching newest experience first."""
    k = int(goal_class)
    for eid in sorted(state.cmap.experiences, reverse=True):
        z = state.cmap.places[state.cmap.experiences[eid].place_id]
        mass = np.where(z.map.map_class == k, z.map.counts[..., k], 0.0)
        if mass.max(initial=0.0) >= min_mass:
            r, c = np.unravel_index(int(np.argmax(mass)), mass.shape)
            ox, oy = z.frame_origin
            return (int(c) + ox + z.origin.x, int(r) + oy + z.origin.y), eid
    cm = state.composite.map
    mass = np.where(cm.map_class == k, cm.counts[..., k], 0.0)
    if mass.max(initial=0.0) >= min_mass:
        r, c = np.unravel_index(int(np.argmax(mass)), mass.shape)
        return (int(c) + cm.origin[0], int(r) + cm.origin[1]), None
    return None, None


def _route_target(state: AgentState, goal: tuple[int, int], goal_exp: int | None, events: list):
    cmap = state.cmap
    cur = cmap.current
    if cur != state.route_from:
        state.route_from = cur
        state.reached.clear()
    pose = state.pose
    if state.subgoal is not None and (pose.x, pose.y) == state.subgoal:
        state.reached.add(state.subgoal)
    if goal_exp is None or cur is None or goal_exp == cur:
        state.subgoal = None
        return goal
    route = plan_route(cmap, cur, goal_exp)
    if not route.reachable:
        state.subgoal = None
        return goal
    for a, b in zip(route.path, route.path[1:]):
        try:
            _, p = subgoal_observation(cmap, a, b)
        except (KeyError, ValueError):
            continue
        cell = (p.x, p.y)
        if cell in state.reached:
            continue
        if cell != state.subgoal:
            events.append({"event": "subgoal", "from": a, "to": b, "cell": list(cell),
                           "route": route.path})
        state.subgoal = cell
        return cell
    state.subgoal = None
    return goal


def plan(state: AgentState, mode: str = "explore", goal_class: int = TileClass.WHITE,
         events: list | None = None) -> tuple[Policy, EFEScore, dict]:
    cfg = state.cfg
    events = events if events is not None else []
    pose = state.pose
    comp = state.composite
    weights = cfg.weights if mode == "explore" else cfg.goal_weights
    g = None
    info = {"fallback": False, "hypothesis_mode": state.hyps is not None}
    if mode == "goal":
        cell, gexp = goal_cell(state, goal_class)
        if cell is None:
            # a goal tile in direct view is a target even before it is remembered
            cell, gexp = goal_cell(state, goal_class, min_mass=1.0)
        if cell is not None:
            target = _route_target(state, cell, gexp, events)
            cls = goal_class if target == cell else TileClass.DOOR
            g = PreferredObservation(target_class=cls, pose=Pose(target[0], target[1], 0))
            info["target"] = list(target)
        else:
            g = PreferredObservation(target_class=goal_class)
    scores = score_batch(pose, state.ego, comp, cfg, g, weights)
    if (g is None or g.pose is None) and scores.novelty.max() < cfg.fallback_cells:
        target = frontier_target(state)
        if target is not None:
            info["fallback"] = True
            info["target"] = list(target)
            g = PreferredObservation(pose=Pose(target[0], target[1], 0))
            weights = cfg.goal_weights
            scores = score_batch(pose, state.ego, comp, cfg, g, weights)
    gain = None
    if state.hyps is not None and len(state.hyps) > 1:
        gain = hypothesis_gain_map(state.hyps, comp.map, pose)
        scores = score_batch(pose, state.ego, comp, cfg, g, weights, gain_override=gain)
    i = select_index(scores.G, cfg.gamma, cfg.deterministic, state.rng)
    policy, score = scores.policies[i], scores.score(i)
    if state.plan:
        table = make_table((Policy(state.plan),), pose.heading)
        prev = score_batch(pose, state.ego, comp, cfg, g, weights, gain_override=gain, table=table)
        if prev.policies and prev.G[0] <= score.total + cfg.hysteresis * abs(score.total):
            policy, score = prev.policies[0], prev.score(0)
            info["kept_plan"] = True
    state.plan = tuple(policy.actions[1:])
    return policy, score, info


def agent_step(env, mode: str, state: AgentState, goal_class: int = TileClass.WHITE,
               obs: Observation | None = None):
    """Observe, update every layer, re-plan, and return the first action.

    Returns ``(action, state, record)``; the caller applies the action.
    """
    if obs is None:
        obs = env.observe()
    seen = perceive(state, state.last_action, obs)
    policy, score, info = plan(state, mode, goal_class, seen["events"])
    action = int(policy.actions[0])
    record = {
        "tick": state.tick,
        "belief_pose": list(state.pose),
        "action": Action(action).name,
        "G": score.total,
        "components": list(score.components),
        "policy_len": len(policy),
        "info_gain": seen["info_gain"],
        "expected_info_gain": seen["expected_info_gain"],
        "mismatch": seen["mismatch"],
        "events": seen["events"],
        "current_exp": state.cmap.current,
        "experiences": len(state.cmap.experiences),
        "hypotheses": ([[h.candidate, h.weight] for h in state.hyps] if state.hyps else None),
        **info,
    }
    state.last_action = action
    state.tick += 1
    return action, state, record
