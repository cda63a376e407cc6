"""Window geometry and line-of-sight tables for the 7x7 egocentric view.

The window is indexed ``[row, col]`` with row 0 the farthest row ahead and
the agent fixed at ``(6, 3)``.  In agent coordinates a cell is ``(f, r)``:
``f`` tiles forward and ``r`` tiles to the right.

A window cell is visible when the segment joining the agent's cell centre
to the target cell centre crosses the open interior of no opaque cell.  The
segment test is symmetric and depends only on the relative offset, so the
blocking sets are computed once here and shared by the environment and by
every imagined rollout.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

WINDOW = 7
AGENT_ROW = WINDOW - 1
AGENT_COL = WINDOW // 2
N_CELLS = WINDOW * WINDOW
AGENT_INDEX = AGENT_ROW * WINDOW + AGENT_COL

# heading -> forward vector, right vector (x grows east, y grows south)
FORWARD = np.array([(0, -1), (1, 0), (0, 1), (-1, 0)], dtype=np.int64)
RIGHT = np.array([(1, 0), (0, 1), (-1, 0), (0, -1)], dtype=np.int64)

_rows, _cols = np.divmod(np.arange(N_CELLS), WINDOW)
#: forward distance of each window cell
WIN_F = (AGENT_ROW - _rows).astype(np.int64)
#: lateral (right-positive) offset of each window cell
WIN_R = (_cols - AGENT_COL).astype(np.int64)


def window_offsets(heading: int) -> tuple[np.ndarray, np.ndarray]:
    """Global (dx, dy) of every window cell for an agent facing ``heading``."""
    fx, fy = FORWARD[heading]
    rx, ry = RIGHT[heading]
    return WIN_F * fx + WIN_R * rx, WIN_F * fy + WIN_R * ry


#: OFFSETS[h] = (dx[49], dy[49])
OFFSETS = np.stack([np.stack(window_offsets(h)) for h in range(4)])


def _crosses_interior(tx: int, ty: int, cx: int, cy: int) -> bool:
    """Does the segment (0,0)->(tx,ty) meet the open unit square at (cx,cy)?"""
    lo, hi = Fraction(0), Fraction(1)
    for d, c in ((tx, cx), (ty, cy)):
        a, b = Fraction(2 * c - 1, 2), Fraction(2 * c + 1, 2)
        if d == 0:
            if not (a < 0 < b):
                return False
            continue
        t0, t1 = a / d, b / d
        if t0 > t1:
            t0, t1 = t1, t0
        lo, hi = max(lo, t0), min(hi, t1)
    return lo < hi


def _build_blockers() -> list[list[int]]:
    blockers: list[list[int]] = []
    for t in range(N_CELLS):
        tf, tr = int(WIN_F[t]), int(WIN_R[t])
        cells = []
        for b in range(N_CELLS):
            if b == t or b == AGENT_INDEX:
                continue
            bf, br = int(WIN_F[b]), int(WIN_R[b])
            if _crosses_interior(tr, tf, br, bf):
                cells.append(b)
        blockers.append(cells)
    return blockers


BLOCKERS: list[list[int]] = _build_blockers()
#: dense form, BLOCK_MATRIX[t, b] is True when b lies on the sight line to t
BLOCK_MATRIX = np.zeros((N_CELLS, N_CELLS), dtype=np.uint8)
for _t, _bs in enumerate(BLOCKERS):
    BLOCK_MATRIX[_t, _bs] = 1
#: CSR form for the compiled kernels
BLOCK_PTR = np.zeros(N_CELLS + 1, dtype=np.int32)
BLOCK_PTR[1:] = np.cumsum([len(b) for b in BLOCKERS])
BLOCK_IDX = np.array([b for bs in BLOCKERS for b in bs], dtype=np.int32)
#: the cell straight ahead of the agent; a door there is held open
AHEAD_INDEX = (AGENT_ROW - 1) * WINDOW + AGENT_COL


def visible_mask(opaque: np.ndarray) -> np.ndarray:
    """Visibility of the 49 window cells given their opacity flags."""
    blocked = BLOCK_MATRIX @ opaque.astype(np.uint8)
    vis = blocked == 0
    vis[AGENT_INDEX] = True
    return vis
