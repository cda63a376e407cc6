"""Dirichlet-categorical tile beliefs over a dense grid of cells.

Every cell holds observation counts ``n_k`` over the tile classes and a
symmetric Dirichlet prior ``alpha``.  The posterior predictive is
``(n_k + alpha) / (n + C * alpha)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln

from .gridworld import N_CLASSES, TileClass

ALPHA = 0.1

OPAQUE_CLEAR, OPAQUE_WALL, OPAQUE_DOOR = 0, 1, 2


def predictive(counts: np.ndarray, alpha: float = ALPHA) -> np.ndarray:
    """Posterior predictive over the last axis."""
    a = counts + alpha
    return a / a.sum(axis=-1, keepdims=True)


def expected_info_gain(counts: np.ndarray, alpha: float = ALPHA) -> np.ndarray:
    """Expected KL(posterior after one draw || current posterior), per cell.

    For ``a = counts + alpha`` and one categorical draw ``k``:
    ``KL(Dir(a + e_k) || Dir(a)) = ln(a0 / a_k) + psi(a_k + 1) - psi(a0 + 1)``,
    averaged under the predictive ``a_k / a0``.
    """
    a = counts + alpha
    a0 = a.sum(axis=-1, keepdims=True)
    terms = (a / a0) * (np.log(a0 / a) + digamma(a + 1.0) - digamma(a0 + 1.0))
    return np.maximum(terms.sum(axis=-1), 0.0)


def dirichlet_kl(beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """KL(Dir(beta) || Dir(alpha)) over the last axis."""
    b0 = beta.sum(axis=-1)
    a0 = alpha.sum(axis=-1)
    return (gammaln(b0) - gammaln(beta).sum(axis=-1) - gammaln(a0) + gammaln(alpha).sum(axis=-1)
            + ((beta - alpha) * (digamma(beta) - digamma(b0)[..., None])).sum(axis=-1))


#: expected gain of a never-observed cell
UNKNOWN_GAIN = float(expected_info_gain(np.zeros(N_CLASSES)))


class CountMap:
    """Dense count grid addressed in world coordinates offset by ``origin``.

    Derived per-cell caches (expected gain, MAP class, opacity) are kept in
    sync with the counts on every write.
    """

    def __init__(self, height: int, width: int, origin: tuple[int, int] = (0, 0),
                 alpha: float = ALPHA, n_classes: int = N_CLASSES):
        self.alpha = float(alpha)
        self.origin = (int(origin[0]), int(origin[1]))
        self.counts = np.zeros((height, width, n_classes), dtype=np.float64)
        self.total = np.zeros((height, width), dtype=np.float64)
        unknown = float(expected_info_gain(np.zeros(n_classes), alpha))
        self.gain = np.full((height, width), unknown, dtype=np.float64)
        self.map_class = np.full((height, width), -1, dtype=np.int8)
        self.opaque = np.zeros((height, width), dtype=np.uint8)

    @property
    def shape(self) -> tuple[int, int]:
        return self.total.shape

    @property
    def n_classes(self) -> int:
        return self.counts.shape[2]

    def copy(self) -> "CountMap":
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        for name in ("counts", "total", "gain", "map_class", "opaque"):
            setattr(new, name, getattr(self, name).copy())
        return new

    # -- addressing
    def index(self, x, y):
        """Array indices (row, col) and an in-bounds mask for world coords."""
        col = np.asarray(x) - self.origin[0]
        row = np.asarray(y) - self.origin[1]
        h, w = self.shape
        inb = (col >= 0) & (col < w) & (row >= 0) & (row < h)
        return row, col, inb

    def contains(self, x: int, y: int) -> bool:
        return bool(self.index(x, y)[2])

    def ensure(self, x, y, margin: int = 8) -> bool:
        """Grow the grid so every ``(x, y)`` lies at least ``margin`` cells inside.

        Returns True when the arrays were reallocated.
        """
        x = np.atleast_1d(x)
        y = np.atleast_1d(y)
        h, w = self.shape
        ox, oy = self.origin
        lo_x, hi_x = int(x.min()) - margin, int(x.max()) + margin
        lo_y, hi_y = int(y.min()) - margin, int(y.max()) + margin
        if lo_x >= ox and hi_x < ox + w and lo_y >= oy and hi_y < oy + h:
            return False
        nx0, ny0 = min(ox, lo_x), min(oy, lo_y)
        nx1, ny1 = max(ox + w, hi_x + 1), max(oy + h, hi_y + 1)
        dx, dy = ox - nx0, oy - ny0
        unknown = float(expected_info_gain(np.zeros(self.n_classes), self.alpha))
        fills = {"counts": 0.0, "total": 0.0, "gain": unknown, "map_class": -1, "opaque": 0}
        for name, fill in fills.items():
            old = getattr(self, name)
            new = np.full((ny1 - ny0, nx1 - nx0) + old.shape[2:], fill, dtype=old.dtype)
            new[dy:dy + h, dx:dx + w] = old
            setattr(self, name, new)
        self.origin = (nx0, ny0)
        return True

    # -- writes
    def add(self, x, y, cls, weight: float = 1.0) -> None:
        row, col, inb = self.index(x, y)
        row, col, cls = row[inb], col[inb], np.asarray(cls)[inb]
        if row.size == 0:
            return
        np.add.at(self.counts, (row, col, cls), weight)
        np.add.at(self.total, (row, col), weight)
        self._refresh(row, col)

    def add_counts(self, other: "CountMap") -> None:
        """Accumulate another map's counts at matching world coordinates."""
        oh, ow = other.shape
        ys, xs = np.nonzero(other.total > 0)
        wx, wy = xs + other.origin[0], ys + other.origin[1]
        row, col, inb = self.index(wx, wy)
        if not inb.any():
            return
        self.counts[row[inb], col[inb]] += other.counts[ys[inb], xs[inb]]
        self.total[row[inb], col[inb]] += other.total[ys[inb], xs[inb]]
        self._refresh(row[inb], col[inb])

    def clear_cells(self, row: np.ndarray, col: np.ndarray) -> None:
        self.counts[row, col] = 0.0
        self.total[row, col] = 0.0
        self._refresh(row, col)

    def _refresh(self, row: np.ndarray, col: np.ndarray) -> None:
        c = self.counts[row, col]
        self.gain[row, col] = expected_info_gain(c, self.alpha)
        known = self.total[row, col] > 0
        cls = np.where(known, c.argmax(axis=-1), -1).astype(np.int8)
        self.map_class[row, col] = cls
        self.opaque[row, col] = np.select(
            [cls == TileClass.WALL, cls == TileClass.DOOR], [OPAQUE_WALL, OPAQUE_DOOR], OPAQUE_CLEAR)

    # -- reads
    def predictive_at(self, x, y) -> np.ndarray:
        """(n, C) predictive at world coords; out-of-frame cells get the prior."""
        row, col, inb = self.index(np.atleast_1d(x), np.atleast_1d(y))
        out = np.full((row.shape[0], self.n_classes), 1.0 / self.n_classes)
        if inb.any():
            out[inb] = predictive(self.counts[row[inb], col[inb]], self.alpha)
        return out

    def class_prob(self, x, y, k: int) -> np.ndarray:
        row, col, inb = self.index(np.atleast_1d(x), np.atleast_1d(y))
        out = np.full(row.shape[0], 1.0 / self.n_classes)
        if inb.any():
            r, c = row[inb], col[inb]
            out[inb] = (self.counts[r, c, k] + self.alpha) / (self.total[r, c] + self.n_classes * self.alpha)
        return out

    def wall_prob(self, x, y) -> np.ndarray:
        return self.class_prob(x, y, TileClass.WALL)
