"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when importable; otherwise, or
when ``IMIT2D_PURE_PYTHON=1``, the pure-Python twin is used. ``BACKEND``
names the active one.
"""
import os

from imit2d import _kernels_py

if os.environ.get("IMIT2D_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from imit2d import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

ball_rollout = _impl.ball_rollout
ball_flight_at = _impl.ball_flight_at
dtw = _impl.dtw
mean_shift = _impl.mean_shift


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    out = {"python": _kernels_py}
    try:
        from imit2d import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
