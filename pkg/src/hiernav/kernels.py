"""Backend selection for the rollout kernels.

The compiled extension is preferred; set ``HIERNAV_PURE_PYTHON=1`` to force
the NumPy fallback.  ``BACKEND`` names the active one.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("HIERNAV_PURE_PYTHON"):
        raise ImportError("pure python requested")
    from . import _kernels as _impl  # type: ignore[attr-defined]
    BACKEND = "compiled"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"


def _i64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def rollout_visibility(opaque, px, py, ph, impl=None):
    impl = impl or _impl
    return impl.rollout_visibility(np.ascontiguousarray(opaque, dtype=np.uint8),
                                   _i64(px), _i64(py), _i64(ph))


def policy_gains(gain, opaque, px, py, ph, ptr, discount=1.0, impl=None):
    impl = impl or _impl
    return impl.policy_gains(np.ascontiguousarray(gain, dtype=np.float64),
                             np.ascontiguousarray(opaque, dtype=np.uint8),
                             _i64(px), _i64(py), _i64(ph), _i64(ptr), float(discount))


def grid_distance(passable, sx, sy, impl=None):
    """BFS step distance from the source cells; -1 where unreachable."""
    impl = impl or _impl
    return impl.grid_distance(np.ascontiguousarray(passable, dtype=np.uint8),
                              _i64(np.atleast_1d(sx)), _i64(np.atleast_1d(sy)))
