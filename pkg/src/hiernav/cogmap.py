"""Topological-metric map: experience graph, attractor-network pose belief, routing."""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import visibility as vis
from .allocentric import PlaceModel, PreferredObservation, support_similarity
from .beliefs import CountMap
from .gridworld import Action, Pose, TileClass

CAN_SIZE = 40
EXCITE_SIGMA = 1.0
INHIBITION = 0.005
SIM_THRESHOLD = 0.9
EDGE_LAMBDA = 1.0


# ---------------------------------------------------------------- attractor network

@dataclass
class CAN:
    """Activity over (x, y, heading) cells, wrapping in x and y."""

    activity: np.ndarray
    sigma: float = EXCITE_SIGMA
    inhibition: float = INHIBITION

    @classmethod
    def at(cls, pose, size: int = CAN_SIZE, **kw) -> "CAN":
        act = np.zeros((size, size, 4))
        can = cls(act, **kw)
        return can_inject(can, pose, 1.0)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.activity.shape

    def copy(self) -> "CAN":
        return CAN(self.activity.copy(), self.sigma, self.inhibition)


def _relax(act: np.ndarray, sigma: float, inhibition: float) -> np.ndarray:
    out = ndimage.gaussian_filter(act, sigma=(sigma, sigma, 0), mode="wrap", truncate=3.0)
    inhibited = np.clip(out - inhibition, 0.0, None)
    if inhibited.sum() > 0:
        out = inhibited
    total = out.sum()
    return out / total if total > 0 else out


def can_step(can: CAN, action: int) -> CAN:
    """Path-integrate one action, then one excite/inhibit pass and renormalisation."""
    act = can.activity
    if action == Action.FORWARD:
        layers = []
        for h in range(4):
            fx, fy = vis.FORWARD[h]
            layers.append(np.roll(act[:, :, h], shift=(int(fx), int(fy)), axis=(0, 1)))
        act = np.stack(layers, axis=2)
    elif action == Action.TURN_LEFT:
        act = np.roll(act, -1, axis=2)
    elif action == Action.TURN_RIGHT:
        act = np.roll(act, 1, axis=2)
    return CAN(_relax(act, can.sigma, can.inhibition), can.sigma, can.inhibition)


def _bump(shape, pose) -> np.ndarray:
    nx, ny, _ = shape
    x, y, h = pose
    dx = (np.arange(nx) - x + nx // 2) % nx - nx // 2
    dy = (np.arange(ny) - y + ny // 2) % ny - ny // 2
    g = np.exp(-(dx[:, None] ** 2 + dy[None, :] ** 2) / (2.0 * EXCITE_SIGMA ** 2))
    out = np.zeros(shape)
    out[:, :, int(h) % 4] = g
    return out


def can_inject(can: CAN, pose, weight) -> CAN:
    """Add a Gaussian bump (sigma 1 cell) at ``pose`` scaled by ``weight``.

    ``pose`` may also be a list of poses with a matching list of weights; the
    bumps are then summed before the single relaxation pass.  A zero weight
    leaves the activity unchanged.
    """
    poses = [pose] if np.ndim(pose) == 1 else list(pose)
    weights = np.atleast_1d(np.asarray(weight, dtype=float))
    if weights.size != len(poses):
        raise ValueError("need one weight per injected pose")
    if (weights < 0).any():
        raise ValueError("inject weight must be >= 0")
    if not weights.any():
        return can.copy()
    nx, ny, _ = can.shape
    act = can.activity.copy()
    for (x, y, h), w in zip(poses, weights):
        act += w * _bump(can.shape, (int(x) % nx, int(y) % ny, h))
    return CAN(_relax(act, can.sigma, can.inhibition), can.sigma, can.inhibition)


def can_decode(can: CAN) -> tuple[tuple[int, int, int], float]:
    """Argmax cell (lowest flat index on ties) and the second/first local-max ratio."""
    act = can.activity
    flat = int(np.argmax(act))
    x, y, h = np.unravel_index(flat, act.shape)
    top = act.flat[flat]
    if top <= 0:
        return (int(x), int(y), int(h)), 1.0
    peaks = act == ndimage.maximum_filter(act, size=(3, 3, 1), mode="wrap")
    vals = act[peaks]
    # a flat plateau yields many equal "peaks"; the ratio is then 1 as required
    vals = np.sort(vals)[::-1]
    second = vals[1] if vals.size > 1 else 0.0
    return (int(x), int(y), int(h)), float(second / top)


# ---------------------------------------------------------------- graph

@dataclass
class Experience:
    exp_id: int
    place_id: int
    global_pose: tuple[int, int, int]
    local_origin: Pose
    created_at: int
    centre: tuple[float, float] = (0.0, 0.0)


@dataclass
class ExpEdge:
    a: int
    b: int
    delta: tuple[float, float, float]
    distance: float
    traversals: int = 1
    crossings: dict = field(default_factory=dict)  # (x, y) -> count

    def cost(self, lam: float = EDGE_LAMBDA) -> float:
        return self.distance * (1.0 + lam / self.traversals)

    def best_crossing(self):
        if not self.crossings:
            return None
        return min(self.crossings.items(), key=lambda kv: (-kv[1], kv[0]))[0]


class Unreachable(Exception):
    pass


@dataclass
class RouteResult:
    path: list[int]
    cost: float

    @property
    def reachable(self) -> bool:
        return bool(self.path)


def _unwrap(prev: int, cur: int, n: int) -> int:
    d = (cur - prev % n + n // 2) % n - n // 2
    return prev + d


class CognitiveMap:
    """Experiences, undirected edges and an attractor network for the global pose."""

    def __init__(self, can_size: int = CAN_SIZE, dist_threshold: float = 6.0,
                 sim_threshold: float = SIM_THRESHOLD, lam: float = EDGE_LAMBDA):
        self.experiences: dict[int, Experience] = {}
        self.places: dict[int, PlaceModel] = {}
        self.edges: dict[tuple[int, int], ExpEdge] = {}
        self.traversal_log: list[tuple[int, int]] = []
        self.can_size = can_size
        self.can: CAN | None = None
        self.current: int | None = None
        self.global_frame_origin: Pose | None = None
        self.dist_threshold = float(dist_threshold)
        self.sim_threshold = float(sim_threshold)
        self.lam = float(lam)
        self._decoded: tuple[int, int, int] | None = None

    # -- pose belief
    def start(self, pose: Pose) -> None:
        """Set the global frame at ``pose`` and seed the attractor there."""
        self.global_frame_origin = Pose(*pose)
        n = self.can_size
        self.can = CAN.at((pose.x % n, pose.y % n, pose.heading), n)
        self._decoded = (pose.x, pose.y, pose.heading)

    def step(self, action: int) -> None:
        if self.can is None:
            self.start(Pose(0, 0, 0))
        self.can = can_step(self.can, action)
        self._track()

    def _track(self) -> None:
        (x, y, h), _ = can_decode(self.can)
        px, py, _ = self._decoded
        n = self.can_size
        self._decoded = (_unwrap(px, x, n), _unwrap(py, y, n), h)

    def pose(self) -> tuple[int, int, int]:
        """Decoded global pose, unwrapped across the network's period."""
        return self._decoded

    def ambiguity(self) -> float:
        return can_decode(self.can)[1]

    def relocalise(self, pose, weight: float = 1.0) -> None:
        n = self.can_size
        self.can = can_inject(self.can, (pose[0] % n, pose[1] % n, pose[2]), weight)
        self._track()

    def reset_pose(self, pose: Pose) -> None:
        n = self.can_size
        self.can = CAN.at((pose.x % n, pose.y % n, pose.heading), n)
        self._decoded = (pose.x, pose.y, pose.heading)

    # -- graph edits
    def add_experience(self, place: PlaceModel, created_at: int = 0,
                       crossing: tuple[int, int] | None = None) -> Experience:
        """New node at the decoded pose, linked to the current node if there is one."""
        if self.can is None:
            self.start(Pose(*place.origin))
        eid = len(self.experiences)
        exp = Experience(eid, place.place_id, tuple(self.pose()), Pose(*place.origin), created_at,
                         place_centre(place))
        self.experiences[eid] = exp
        self.places[place.place_id] = place
        prev = self.current
        if prev is not None:
            self.add_edge(prev, eid, crossing)
        self.current = eid
        return exp

    def add_edge(self, a: int, b: int, crossing: tuple[int, int] | None = None) -> ExpEdge:
        """Record a traversal a -> b; repeats merge (traversals += 1, delta averaged)."""
        if a == b:
            raise ValueError("self edges are not allowed")
        ea, eb = self.experiences[a], self.experiences[b]
        d = (eb.global_pose[0] - ea.global_pose[0], eb.global_pose[1] - ea.global_pose[1],
             (eb.global_pose[2] - ea.global_pose[2]) % 4)
        key = (min(a, b), max(a, b))
        if key[0] != a:
            d = (-d[0], -d[1], (-d[2]) % 4)
        dist = math.hypot(d[0], d[1])
        edge = self.edges.get(key)
        if edge is None:
            edge = ExpEdge(key[0], key[1], tuple(float(v) for v in d), dist)
            self.edges[key] = edge
        else:
            t = edge.traversals
            edge.delta = tuple((old * t + new) / (t + 1) for old, new in zip(edge.delta, d))
            edge.distance = (edge.distance * t + dist) / (t + 1)
            edge.traversals = t + 1
        if crossing is not None:
            c = (int(crossing[0]), int(crossing[1]))
            edge.crossings[c] = edge.crossings.get(c, 0) + 1
        self.traversal_log.append((a, b))
        return edge

    def close_loop(self, exp_id: int, crossing=None, relocalised_pose=None, weight: float = 1.0) -> None:
        """Move to an existing experience: edge from the current node and a CAN inject."""
        if self.current is not None and self.current != exp_id:
            self.add_edge(self.current, exp_id, crossing)
        self.current = exp_id
        if relocalised_pose is not None:
            self.relocalise(relocalised_pose, weight)

    def neighbours(self, eid: int) -> list[int]:
        out = []
        for (a, b) in self.edges:
            if a == eid:
                out.append(b)
            elif b == eid:
                out.append(a)
        return sorted(out)

    def edge(self, a: int, b: int) -> ExpEdge | None:
        return self.edges.get((min(a, b), max(a, b)))

    def nearby(self, pos, dist_threshold: float | None = None) -> list[int]:
        """Experience ids whose place centre lies within the threshold, newest first."""
        thr = self.dist_threshold if dist_threshold is None else dist_threshold
        out = []
        for eid in sorted(self.experiences, reverse=True):
            cx, cy = self.experiences[eid].centre
            if math.hypot(cx - pos[0], cy - pos[1]) <= thr:
                out.append(eid)
        return out

    def refresh_centre(self, eid: int) -> None:
        exp = self.experiences[eid]
        exp.centre = place_centre(self.places[exp.place_id])

    # -- export
    def to_dict(self, place_files: dict[int, str] | None = None) -> dict:
        place_files = place_files or {}
        return {
            "global_frame_origin": list(self.global_frame_origin) if self.global_frame_origin else None,
            "current": self.current,
            "experiences": [
                {"id": e.exp_id, "place_id": e.place_id, "pose": list(e.global_pose),
                 "local_origin": list(e.local_origin), "created_at": e.created_at,
                 "centre": [round(e.centre[0], 3), round(e.centre[1], 3)],
                 "place_file": place_files.get(e.place_id)}
                for e in self.experiences.values()],
            "edges": [
                {"from": e.a, "to": e.b, "delta": [round(v, 6) for v in e.delta],
                 "distance": round(e.distance, 6), "traversals": e.traversals,
                 "crossings": [[list(c), n] for c, n in sorted(e.crossings.items())]}
                for _, e in sorted(self.edges.items())],
        }

    def save_json(self, path: str | Path, place_files: dict[int, str] | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(place_files), indent=1))


def place_centre(place: PlaceModel) -> tuple[float, float]:
    """Global mean position of the place's room-floor cells (all known cells if none)."""
    mc = place.map.map_class
    floor = np.isin(mc, [TileClass.RED, TileClass.GREEN, TileClass.BLUE, TileClass.PURPLE,
                         TileClass.WHITE])
    if not floor.any():
        floor = mc >= 0
    if not floor.any():
        return float(place.origin.x), float(place.origin.y)
    rows, cols = np.nonzero(floor)
    ox, oy = place.frame_origin
    return (float(cols.mean() + ox + place.origin.x), float(rows.mean() + oy + place.origin.y))


def match_place(cmap: CognitiveMap, z: PlaceModel, believed_pose, sim_threshold: float | None = None,
                dist_threshold: float | None = None) -> int | None:
    """Best-matching experience passing both the similarity and the distance gate.

    Distance is measured from ``believed_pose`` to each experience's place
    centre; similarity is :func:`support_similarity` in global coordinates.
    Ties go to the smallest exp_id.
    """
    if z.obs_count < 1:
        raise ValueError("cannot match an empty place")
    sim_thr = cmap.sim_threshold if sim_threshold is None else sim_threshold
    best, best_sim = None, -1.0
    for eid in sorted(cmap.nearby(believed_pose, dist_threshold)):
        ref = cmap.places[cmap.experiences[eid].place_id]
        if ref is z:
            continue
        s = support_similarity(z, ref)
        if s >= sim_thr and s > best_sim + 1e-12:
            best, best_sim = eid, s
    return best


def plan_route(cmap: CognitiveMap, start: int, goal: int,
               unconnected_penalty: float = math.inf) -> RouteResult:
    """Dijkstra over edge costs ``distance * (1 + lam / traversals)``.

    Non-adjacent pairs are admitted with cost ``unconnected_penalty`` times
    their straight-line distance when the penalty is finite.  Among equal-cost
    paths the lexicographically smallest id sequence wins.
    """
    if start not in cmap.experiences or goal not in cmap.experiences:
        raise KeyError("unknown experience id")
    ids = sorted(cmap.experiences)
    adj: dict[int, dict[int, float]] = {i: {} for i in ids}
    for (a, b), e in cmap.edges.items():
        c = e.cost(cmap.lam)
        adj[a][b] = c
        adj[b][a] = c
    if math.isfinite(unconnected_penalty):
        for i in ids:
            for j in ids:
                if i != j and j not in adj[i]:
                    pi, pj = cmap.experiences[i].global_pose, cmap.experiences[j].global_pose
                    adj[i][j] = unconnected_penalty * math.hypot(pi[0] - pj[0], pi[1] - pj[1])
    heap = [(0.0, (start,))]
    done = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == goal:
            return RouteResult(list(path), cost)
        for nb in sorted(adj[node]):
            if nb not in done:
                heapq.heappush(heap, (cost + adj[node][nb], path + (nb,)))
    return RouteResult([], math.inf)


def subgoal_observation(cmap: CognitiveMap, current: int, nxt: int) -> tuple[PreferredObservation, Pose]:
    """Preferred landing on the recorded crossing cell of edge current-next."""
    if current == nxt:
        raise ValueError("sub-goal of a self edge is undefined")
    edge = cmap.edge(current, nxt)
    if edge is None:
        raise KeyError(f"no edge between {current} and {nxt}")
    cell = edge.best_crossing()
    if cell is None:
        raise ValueError(f"edge {current}-{nxt} has no recorded crossing cell")
    g = PreferredObservation(target_class=TileClass.DOOR, pose=Pose(cell[0], cell[1], 0))
    return g, Pose(cell[0], cell[1], 0)


def reconstruct_map(cmap: CognitiveMap, margin: int = 1) -> CountMap:
    """Odometry-frame map pooling every place's counts at its anchor."""
    places = [cmap.places[e.place_id] for e in cmap.experiences.values()]
    places = list({id(z): z for z in places}.values())
    if not places:
        return CountMap(1, 1)
    lo_x = lo_y = math.inf
    hi_x = hi_y = -math.inf
    for z in places:
        ox, oy = z.frame_origin
        h, w = z.map.shape
        lo_x, lo_y = min(lo_x, ox + z.origin.x), min(lo_y, oy + z.origin.y)
        hi_x, hi_y = max(hi_x, ox + z.origin.x + w), max(hi_y, oy + z.origin.y + h)
    out = CountMap(int(hi_y - lo_y) + 2 * margin, int(hi_x - lo_x) + 2 * margin,
                   (int(lo_x) - margin, int(lo_y) - margin), places[0].map.alpha, places[0].map.n_classes)
    for z in places:
        shifted = z.map.copy()
        shifted.origin = (z.map.origin[0] + z.origin.x, z.map.origin[1] + z.origin.y)
        out.add_counts(shifted)
    return out
