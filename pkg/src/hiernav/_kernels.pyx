# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

from . import visibility as vis

cnp.import_array()

cdef cnp.int64_t[:, :, :] _OFF = np.ascontiguousarray(vis.OFFSETS, dtype=np.int64)
cdef cnp.int32_t[:] _BPTR = vis.BLOCK_PTR
cdef cnp.int32_t[:] _BIDX = vis.BLOCK_IDX
cdef int _AHEAD = vis.AHEAD_INDEX
cdef int _AGENT = vis.AGENT_INDEX
cdef int _NC = vis.N_CELLS


cdef inline bint _cell_visible(const cnp.uint8_t[:, :] opaque, int h, int w,
                               long x, long y, int head, int t,
                               long* gx, long* gy) noexcept nogil:
    cdef long bx, by
    cdef int j, b
    cdef cnp.uint8_t code
    gx[0] = x + _OFF[head, 0, t]
    gy[0] = y + _OFF[head, 1, t]
    if gx[0] < 0 or gx[0] >= w or gy[0] < 0 or gy[0] >= h:
        return False
    if t == _AGENT:
        return True
    for j in range(_BPTR[t], _BPTR[t + 1]):
        b = _BIDX[j]
        bx = x + _OFF[head, 0, b]
        by = y + _OFF[head, 1, b]
        if bx < 0 or bx >= w or by < 0 or by >= h:
            return False
        code = opaque[by, bx]
        if code == 1 or (code == 2 and b != _AHEAD):
            return False
    return True


def rollout_visibility(const cnp.uint8_t[:, :] opaque, const cnp.int64_t[:] px,
                       const cnp.int64_t[:] py, const cnp.int64_t[:] ph):
    cdef Py_ssize_t n = px.shape[0], i
    cdef int h = opaque.shape[0], w = opaque.shape[1], t
    cdef long cx, cy
    gx = np.empty((n, _NC), dtype=np.int64)
    gy = np.empty((n, _NC), dtype=np.int64)
    visible = np.empty((n, _NC), dtype=bool)
    cdef cnp.int64_t[:, :] gxv = gx
    cdef cnp.int64_t[:, :] gyv = gy
    cdef cnp.uint8_t[:, :] vv = visible.view(np.uint8)
    with nogil:
        for i in range(n):
            for t in range(_NC):
                vv[i, t] = _cell_visible(opaque, h, w, px[i], py[i], <int>ph[i], t, &cx, &cy)
                gxv[i, t] = cx
                gyv[i, t] = cy
    return gx, gy, visible


def policy_gains(const double[:, :] gain, const cnp.uint8_t[:, :] opaque,
                 const cnp.int64_t[:] px, const cnp.int64_t[:] py,
                 const cnp.int64_t[:] ph, const cnp.int64_t[:] ptr,
                 double discount=1.0):
    cdef Py_ssize_t n_pol = ptr.shape[0] - 1, p, i
    cdef int h = opaque.shape[0], w = opaque.shape[1], t
    cdef long cx, cy, cell
    cdef double weight, acc
    out = np.zeros(n_pol, dtype=np.float64)
    cdef double[:] outv = out
    stamp_arr = np.full(h * w, -1, dtype=np.int64)
    cdef cnp.int64_t[:] stamp = stamp_arr
    with nogil:
        for p in range(n_pol):
            acc = 0.0
            weight = 1.0
            for i in range(ptr[p], ptr[p + 1]):
                for t in range(_NC):
                    if not _cell_visible(opaque, h, w, px[i], py[i], <int>ph[i], t, &cx, &cy):
                        continue
                    cell = cy * w + cx
                    if stamp[cell] != p:
                        stamp[cell] = p
                        acc = acc + weight * gain[cy, cx]
                weight = weight * discount
            outv[p] = acc
    return out


def grid_distance(const cnp.uint8_t[:, :] passable, const cnp.int64_t[:] sx,
                  const cnp.int64_t[:] sy):
    cdef int h = passable.shape[0], w = passable.shape[1]
    cdef Py_ssize_t n = sx.shape[0], i, head = 0, tail = 0
    dist_arr = np.full((h, w), -1, dtype=np.int32)
    cdef cnp.int32_t[:, :] dist = dist_arr
    queue_arr = np.empty(h * w, dtype=np.int64)
    cdef cnp.int64_t[:] queue = queue_arr
    cdef long cell, x, y, nx, ny
    cdef int k
    cdef int dxs[4]
    cdef int dys[4]
    dxs[:] = [1, -1, 0, 0]
    dys[:] = [0, 0, 1, -1]
    with nogil:
        for i in range(n):
            x = sx[i]
            y = sy[i]
            if x < 0 or x >= w or y < 0 or y >= h or dist[y, x] == 0:
                continue
            dist[y, x] = 0
            queue[tail] = y * w + x
            tail += 1
        while head < tail:
            cell = queue[head]
            head += 1
            y = cell // w
            x = cell - y * w
            for k in range(4):
                nx = x + dxs[k]
                ny = y + dys[k]
                if nx < 0 or nx >= w or ny < 0 or ny >= h:
                    continue
                if passable[ny, nx] == 0 or dist[ny, nx] >= 0:
                    continue
                dist[ny, nx] = dist[y, x] + 1
                queue[tail] = ny * w + nx
                tail += 1
    return dist_arr
