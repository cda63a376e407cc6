"""Place model: a Dirichlet tile map over a local frame anchored at ``origin``.

Local coordinates are global (odometry-frame) coordinates minus the anchor
position; frames are axis-aligned with the odometry frame, so converting a
pose only translates it.  The backing grid is ``size`` x ``size`` cells and
is centred on the first pose it integrates.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import digamma

from . import visibility as vis
from .beliefs import ALPHA, CountMap, dirichlet_kl
from .egocentric import (ObservationForecast, forecast, map_info_gain, map_preference,
                         window_cells)
from .gridworld import (N_CLASSES, ROOM_FLOOR_CLASSES, Observation, Pose, Tile, TileClass,
                        tiles_to_text)

PLACE_SIZE = 23
MISMATCH_THRESHOLD = 0.5
PATIENCE = 2
CONFIDENCE_HALF_LIFE = 3.0
GOAL_MIN_MASS = 2.0
EXCLUDED_GOALS = (TileClass.WALL,)
COMPLETION_PROB = 0.9

#: TileClass -> representative Tile, for renders and text dumps
CLASS_TO_TILE = np.array([Tile.WALL, Tile.DOOR_CLOSED, Tile.RED, Tile.GREEN, Tile.BLUE,
                          Tile.PURPLE, Tile.GREY, Tile.WHITE], dtype=np.uint8)
_FLOOR = np.zeros(N_CLASSES + 1, dtype=bool)  # indexed by class + 1 so -1 maps to slot 0
_FLOOR[np.array(ROOM_FLOOR_CLASSES) + 1] = True


@dataclass
class PreferredObservation:
    """Goal specification: a tile class, a 7x7 class window, and/or a target cell.

    ``pose`` (when set) is the preferred landing cell, in the frame of the
    map the preference is evaluated against.
    """

    target_class: int | None = None
    window: np.ndarray | None = None  # (7, 7) TileClass codes, -1 = any
    pose: Pose | None = None

    def __post_init__(self):
        if self.window is not None:
            self.window = np.asarray(self.window, dtype=np.int8).reshape(vis.WINDOW, vis.WINDOW)
        no_window = self.window is None or bool((self.window < 0).all())
        if self.target_class is None and no_window and self.pose is None:
            raise ValueError("a preferred observation needs a target class, window or pose")


class PlaceModel:
    """Per-place tile beliefs plus the bookkeeping for event boundaries."""

    def __init__(self, place_id: int, origin: Pose = Pose(0, 0, 0), size: int = PLACE_SIZE,
                 alpha: float = ALPHA, growable: bool = False):
        self.place_id = int(place_id)
        self.origin = Pose(*origin)
        self.size = int(size)
        self.growable = bool(growable)
        half = self.size // 2
        self.map = CountMap(self.size, self.size, (-half, -half), alpha)
        self.obs_count = 0
        self.mismatch_history: list[float] = []
        self.confidence = 1.0
        self._ema = 0.0
        self._version = 0
        self._completion = None

    def copy(self) -> "PlaceModel":
        new = object.__new__(PlaceModel)
        new.__dict__.update(self.__dict__)
        new.map = self.map.copy()
        new.mismatch_history = list(self.mismatch_history)
        return new

    # -- frames
    def to_local(self, pose: Pose) -> Pose:
        return Pose(pose.x - self.origin.x, pose.y - self.origin.y, pose.heading)

    def to_global(self, pose: Pose) -> Pose:
        return Pose(pose.x + self.origin.x, pose.y + self.origin.y, pose.heading)

    @property
    def counts(self) -> np.ndarray:
        return self.map.counts

    @property
    def frame_origin(self) -> tuple[int, int]:
        """Local coordinates of grid cell ``[0, 0]``."""
        return self.map.origin

    @property
    def alpha(self) -> float:
        return self.map.alpha

    def has_evidence(self) -> bool:
        return bool((self.map.total > 0).any())

    # -- learning
    def update(self, obs: Observation, pose: Pose, mask: np.ndarray | None = None) -> "PlaceModel":
        """In-place ``place_update`` at local ``pose``; ``mask`` restricts the cells used."""
        gx, gy = window_cells(pose)
        cls = obs.classes
        keep = cls >= 0
        if mask is not None:
            keep &= np.asarray(mask, dtype=bool).reshape(-1)
        if self.obs_count == 0 and not self.has_evidence() and not self.growable:
            half = self.size // 2
            self.map.origin = (pose.x - half, pose.y - half)
        if self.growable:
            self.map.ensure(gx[keep] if keep.any() else pose.x, gy[keep] if keep.any() else pose.y)
        elif not self.map.contains(pose.x, pose.y):
            raise ValueError(f"pose {tuple(pose)} lies outside place {self.place_id}'s frame")
        self.map.add(gx[keep], gy[keep], cls[keep])
        self.obs_count += 1
        self._version += 1
        return self

    def record_mismatch(self, m: float) -> None:
        self.mismatch_history.append(float(m))
        rate = 1.0 - 0.5 ** (1.0 / CONFIDENCE_HALF_LIFE)
        self._ema = (1.0 - rate) * self._ema + rate * float(m)
        self.confidence = 1.0 - self._ema

    # -- room completion
    def completion(self) -> np.ndarray:
        """Class guessed for unseen cells from the room outline (-1 = no guess).

        The room is the largest 4-connected patch of room-floor MAP cells.  A
        side of its bounding box counts as closed when at least half of the
        line just outside it is known and none of it is room floor; unseen
        cells past a closed side are guessed Wall and unseen cells inside the
        box the room's dominant colour.
        """
        if self._completion is not None and self._completion[0] == self._version:
            return self._completion[1]
        mc = self.map.map_class
        guess = np.full(mc.shape, -1, dtype=np.int8)
        floor = _FLOOR[mc + 1]
        labels, n = ndimage.label(floor)
        if n > 0:
            sizes = np.bincount(labels.ravel())[1:]
            comp = labels == (int(np.argmax(sizes)) + 1)
            rows, cols = np.nonzero(comp)
            y0, y1, x0, x1 = rows.min(), rows.max(), cols.min(), cols.max()
            known = self.map.total > 0
            h, w = mc.shape

            def closed(line_rows, line_cols) -> bool:
                if line_rows.min() < 0 or line_cols.min() < 0 or line_rows.max() >= h or line_cols.max() >= w:
                    return False
                k = known[line_rows, line_cols]
                if 2 * k.sum() < k.size:
                    return False
                return not floor[line_rows, line_cols][k].any()

            span_r = np.arange(y0, y1 + 1)
            span_c = np.arange(x0, x1 + 1)
            right = closed(span_r, np.full_like(span_r, x1 + 1))
            left = closed(span_r, np.full_like(span_r, x0 - 1))
            bottom = closed(np.full_like(span_c, y1 + 1), span_c)
            top = closed(np.full_like(span_c, y0 - 1), span_c)
            rr, cc = np.mgrid[0:h, 0:w]
            outside = ((right & (cc > x1 + 1)) | (left & (cc < x0 - 1))
                       | (bottom & (rr > y1 + 1)) | (top & (rr < y0 - 1)))
            guess[outside & ~known] = TileClass.WALL
            colors = mc[comp]
            colors = colors[colors != TileClass.WHITE]
            if colors.size:
                dominant = int(np.bincount(colors, minlength=N_CLASSES).argmax())
                inside = (rr >= y0) & (rr <= y1) & (cc >= x0) & (cc <= x1)
                guess[inside & ~known] = dominant
        self._completion = (self._version, guess)
        return guess

    def predictive_cells(self, x, y, complete: bool = False):
        """(probs (n, C), has_prediction (n,)) at local coords.

        Cells without evidence get the prior, or the completion guess when
        ``complete`` is set and a guess exists.
        """
        x = np.atleast_1d(x)
        y = np.atleast_1d(y)
        probs = self.map.predictive_at(x, y)
        row, col, inb = self.map.index(x, y)
        defined = np.zeros(x.shape[0], dtype=bool)
        defined[inb] = self.map.total[row[inb], col[inb]] > 0
        if complete:
            guess = np.full(x.shape[0], -1, dtype=np.int8)
            guess[inb] = self.completion()[row[inb], col[inb]]
            fill = (guess >= 0) & ~defined
            if fill.any():
                p = np.full((int(fill.sum()), self.map.n_classes), (1.0 - COMPLETION_PROB) / self.map.n_classes)
                p[np.arange(p.shape[0]), guess[fill]] += COMPLETION_PROB
                probs[fill] = p
                defined |= fill
        return probs, defined


# ---------------------------------------------------------------- operations

def place_update(z: PlaceModel, obs: Observation, pose: Pose, mask=None) -> PlaceModel:
    """Pure update returning a new place."""
    return z.copy().update(obs, pose, mask)


def place_predict(z: PlaceModel, pose: Pose, complete: bool = False) -> ObservationForecast:
    """Window forecast at local ``pose``; occlusion from the MAP map."""
    out = forecast(z.map, pose)
    if complete:
        gx, gy = window_cells(pose)
        probs, defined = z.predictive_cells(gx, gy, complete=True)
        out = ObservationForecast(probs.reshape(out.probs.shape), out.visible,
                                  defined.reshape(out.evidence.shape))
    return out


def observed_probability(z: PlaceModel, obs: Observation, pose: Pose, mask=None,
                         complete: bool = False):
    """Predictive probability of each visible observed class, and which have predictions."""
    cls = obs.classes
    keep = cls >= 0
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool).reshape(-1)
    gx, gy = window_cells(pose)
    probs, defined = z.predictive_cells(gx[keep], gy[keep], complete)
    p = probs[np.arange(probs.shape[0]), cls[keep]]
    return p, defined


def place_mismatch(z: PlaceModel, obs: Observation, pose: Pose, mask=None,
                   complete: bool = False) -> float:
    """1 - mean predictive probability of the observed classes over predicted cells."""
    p, defined = observed_probability(z, obs, pose, mask, complete)
    if not defined.any():
        return 0.0
    return float(1.0 - p[defined].mean())


def event_boundary(history: Sequence[float], threshold: float = MISMATCH_THRESHOLD,
                   patience: int = PATIENCE) -> bool:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    if patience < 1 or len(history) < patience:
        return False
    return all(m > threshold for m in list(history)[-patience:])


def place_descriptor(z: PlaceModel) -> np.ndarray:
    """Unit vector: one-hot MAP class per cell scaled by the cell's evidence mass."""
    total = z.map.total
    if z.obs_count < 1 or not (total > 0).any():
        raise ValueError("descriptor of an empty place is undefined")
    vec = np.zeros(z.map.counts.shape)
    r, c = np.nonzero(total > 0)
    vec[r, c, z.map.map_class[r, c]] = total[r, c]
    vec = vec.reshape(-1)
    return vec / np.linalg.norm(vec)


def support_similarity(query: PlaceModel, ref: PlaceModel) -> float:
    """Cosine between ``query`` and ``ref`` over the query's known cells.

    Both places are compared in global coordinates; each cell is weighted by
    the query's evidence mass, so the score is the mass-weighted agreement of
    MAP classes.  Query cells unknown to ``ref`` count as disagreement; 0 when
    the two places share no known cell.
    """
    rows, cols = np.nonzero(query.map.total > 0)
    if rows.size == 0:
        return 0.0
    ox, oy = query.frame_origin
    gx = cols + ox + query.origin.x - ref.origin.x
    gy = rows + oy + query.origin.y - ref.origin.y
    rr, rc, inb = ref.map.index(gx, gy)
    wq = query.map.total[rows, cols]
    qc = query.map.map_class[rows, cols]
    rcls = np.full(rows.size, -1, dtype=np.int8)
    rcls[inb] = ref.map.map_class[rr[inb], rc[inb]]
    if not (rcls >= 0).any():
        return 0.0
    agree = (rcls == qc)
    # vectors: q = w * onehot(qc), r = w * onehot(rc) (zero where ref unknown)
    num = float(np.sum(wq ** 2 * agree))
    nq = float(np.sqrt(np.sum(wq ** 2)))
    nr = float(np.sqrt(np.sum((wq ** 2)[rcls >= 0])))
    return num / (nq * nr)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def allo_info_gain(z: PlaceModel, poses: Sequence[Pose], discount: float = 1.0) -> float:
    """Expected gain of the cells newly revealed along local ``poses``."""
    return map_info_gain(z.map, poses, discount)


def allo_preference(z: PlaceModel, poses: Sequence[Pose], g: PreferredObservation,
                    cells: str = "landing") -> float:
    if g.target_class is None:
        return 0.0
    return map_preference(z.map, poses, g.target_class, cells)


def place_contains_goal(z: PlaceModel, g: PreferredObservation,
                        min_mass: float = GOAL_MIN_MASS) -> tuple[bool, Pose | None]:
    """Whether some cell's MAP class is the goal class with enough evidence.

    The returned pose (local frame) stands on a known passable neighbour of the
    best such cell and faces it; if no neighbour is known, the goal cell itself.
    """
    k = g.target_class
    if k is None or k in EXCLUDED_GOALS:
        return False, None
    mass = np.where(z.map.map_class == k, z.map.counts[..., k], 0.0)
    if mass.max(initial=0.0) < min_mass:
        return False, None
    r, c = np.unravel_index(int(np.argmax(mass)), mass.shape)
    ox, oy = z.frame_origin
    x, y = int(c) + ox, int(r) + oy
    for h, (fx, fy) in enumerate(vis.FORWARD):
        nx, ny = x - int(fx), y - int(fy)
        if z.map.contains(nx, ny):
            rr, cc, _ = z.map.index(nx, ny)
            cls = int(z.map.map_class[rr, cc])
            if cls >= 0 and cls != TileClass.WALL:
                return True, Pose(nx, ny, h)
    return True, Pose(x, y, 0)


def free_energy(z: PlaceModel, batch: Iterable[tuple[Observation, Pose]]) -> tuple[float, float]:
    """(complexity, accuracy) of ``z`` on ``batch``.

    complexity = sum over cells of KL(Dir(n + alpha) || Dir(alpha));
    accuracy = sum over observed cells of E_q[log theta_k] = psi(a_k) - psi(a_0).
    When ``z`` holds exactly the batch, F = complexity - accuracy equals the
    negative log marginal likelihood of the batch.
    """
    a = z.alpha
    known = z.map.total > 0
    complexity = 0.0
    if known.any():
        post = z.map.counts[known] + a
        complexity = float(dirichlet_kl(post, np.full_like(post, a)).sum())
    accuracy = 0.0
    n_cls = z.map.n_classes
    for obs, pose in batch:
        cls = obs.classes
        keep = cls >= 0
        gx, gy = window_cells(pose)
        row, col, inb = z.map.index(gx[keep], gy[keep])
        k = cls[keep][inb]
        post = z.map.counts[row[inb], col[inb]] + a
        a0 = post.sum(axis=-1)
        accuracy += float(np.sum(digamma(post[np.arange(k.size), k]) - digamma(a0)))
        # out-of-frame cells are scored under the prior
        accuracy += float((~inb).sum() * (digamma(a) - digamma(n_cls * a)))
    return complexity, accuracy


# ---------------------------------------------------------------- serialization

_MAGIC = b"HNPL"
_VERSION = 1
_HEADER = struct.Struct("<4sHq3q2q3qd")


def place_to_bytes(z: PlaceModel) -> bytes:
    """Versioned blob: id, anchor pose, frame origin, grid shape, counts, obs count."""
    h, w, c = z.map.counts.shape
    head = _HEADER.pack(_MAGIC, _VERSION, z.place_id, *z.origin, *z.frame_origin,
                        h, w, c, float(z.obs_count))
    return head + np.ascontiguousarray(z.map.counts, dtype="<f8").tobytes()


def place_from_bytes(data: bytes) -> PlaceModel:
    magic, version, pid, x, y, hd, fx, fy, h, w, c, obs_count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a place blob")
    if version != _VERSION:
        raise ValueError(f"unsupported place blob version {version}")
    counts = np.frombuffer(data, dtype="<f8", count=h * w * c, offset=_HEADER.size).reshape(h, w, c)
    z = PlaceModel(pid, Pose(x, y, hd), size=max(h, w), growable=(h != w))
    z.size = h
    z.map = CountMap(h, w, (fx, fy), z.alpha, c)
    ys, xs = np.nonzero(counts.sum(axis=-1) > 0)
    if ys.size:
        z.map.counts[ys, xs] = counts[ys, xs]
        z.map.total[ys, xs] = counts[ys, xs].sum(axis=-1)
        z.map._refresh(ys, xs)
    z.obs_count = int(obs_count)
    return z


def save_place(z: PlaceModel, path: str | Path) -> None:
    Path(path).write_bytes(place_to_bytes(z))


def load_place(path: str | Path) -> PlaceModel:
    return place_from_bytes(Path(path).read_bytes())


def map_tiles(cmap: CountMap) -> np.ndarray:
    """MAP map as Tile codes (HIDDEN where unknown)."""
    tiles = np.full(cmap.shape, Tile.HIDDEN, dtype=np.uint8)
    known = cmap.map_class >= 0
    tiles[known] = CLASS_TO_TILE[cmap.map_class[known]]
    return tiles


def place_text(z: PlaceModel) -> str:
    """MAP map in the maze text layout; header ``rows cols 0 0 0 place_id``, ``?`` unknown."""
    tiles = map_tiles(z.map)
    h, w = tiles.shape
    buf = io.StringIO()
    buf.write(f"{h} {w} 0 0 0 {z.place_id}\n")
    for line in tiles_to_text(tiles):
        buf.write(line + "\n")
    return buf.getvalue()
