"""Pure NumPy implementations of the rollout kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled version is tested against.

Opacity codes: 0 clear, 1 wall, 2 door (clear only when directly ahead).
"""
from __future__ import annotations

import numpy as np

from . import visibility as vis

_BLOCK_T = vis.BLOCK_MATRIX.T.astype(np.int32)
_NOT_AHEAD = np.ones(vis.N_CELLS, dtype=bool)
_NOT_AHEAD[vis.AHEAD_INDEX] = False


def rollout_visibility(opaque: np.ndarray, px: np.ndarray, py: np.ndarray, ph: np.ndarray):
    """Window visibility for each pose: returns (gx, gy, visible) of shape (N, 49)."""
    h, w = opaque.shape
    gx = px[:, None] + vis.OFFSETS[ph, 0]
    gy = py[:, None] + vis.OFFSETS[ph, 1]
    inb = (gx >= 0) & (gx < w) & (gy >= 0) & (gy < h)
    cx = np.where(inb, gx, 0)
    cy = np.where(inb, gy, 0)
    code = np.where(inb, opaque[cy, cx], 1)
    blocking = (code == 1) | ((code == 2) & _NOT_AHEAD)
    blocked = blocking.astype(np.int32) @ _BLOCK_T
    visible = (blocked == 0) & inb
    visible[:, vis.AGENT_INDEX] = inb[:, vis.AGENT_INDEX]
    return gx, gy, visible


def policy_gains(gain: np.ndarray, opaque: np.ndarray, px: np.ndarray, py: np.ndarray,
                 ph: np.ndarray, ptr: np.ndarray, discount: float = 1.0) -> np.ndarray:
    """Sum of ``gain`` over the cells each policy reveals, each cell counted once.

    Poses of policy ``p`` are ``ptr[p]:ptr[p+1]``; the k-th pose of a policy
    is weighted ``discount**k`` and a cell is credited at its first reveal.
    """
    n_pol = len(ptr) - 1
    out = np.zeros(n_pol, dtype=np.float64)
    n = int(ptr[-1])
    if n == 0:
        return out
    h, w = opaque.shape
    gx, gy, visible = rollout_visibility(opaque, px[:n], py[:n], ph[:n])
    lengths = np.diff(ptr)
    pol = np.repeat(np.arange(n_pol), lengths)
    k = np.arange(n) - np.repeat(ptr[:-1], lengths)
    weight = np.power(float(discount), k)
    rows, cols = np.nonzero(visible)
    cell = gy[rows, cols] * w + gx[rows, cols]
    key = pol[rows].astype(np.int64) * (h * w) + cell
    _, first = np.unique(key, return_index=True)
    r = rows[first]
    c = cell[first]
    vals = gain.reshape(-1)[c] * weight[r]
    np.add.at(out, pol[r], vals)
    return out


def grid_distance(passable: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """4-connected BFS steps from the source cells over ``passable`` (-1 unreachable)."""
    h, w = passable.shape
    free = passable.astype(bool)
    dist = np.full((h, w), -1, dtype=np.int32)
    ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    sx, sy = sx[ok], sy[ok]
    dist[sy, sx] = 0
    front = np.zeros((h, w), dtype=bool)
    front[sy, sx] = True
    d = 0
    while front.any():
        d += 1
        grow = np.zeros_like(front)
        grow[1:, :] |= front[:-1, :]
        grow[:-1, :] |= front[1:, :]
        grow[:, 1:] |= front[:, :-1]
        grow[:, :-1] |= front[:, 1:]
        grow &= free & (dist < 0)
        dist[grow] = d
        front = grow
    return dist
