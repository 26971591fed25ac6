"""Kernel backend selection: compiled extension if available, numpy otherwise.

``FCNET_BACKEND`` forces a choice: ``native``, ``python``, or ``auto``
(default).  Asking for ``native`` when the extension failed to build is an
ImportError rather than a silent fallback.
"""

from __future__ import annotations

import os

from . import pyref

_FUNCS = (
    "conv2d_fwd",
    "conv2d_bwd",
    "maxpool2_fwd",
    "maxpool2_bwd",
    "roi_pool_max",
    "roi_pool_max_argmax",
    "roi_pool_scatter",
)

try:
    from . import _native
except ImportError:  # extension not built; pure-python install
    _native = None

_requested = os.environ.get("FCNET_BACKEND", "auto").lower()
if _requested not in ("auto", "native", "python"):
    raise ValueError(f"FCNET_BACKEND must be auto, native, or python, got {_requested!r}")
if _requested == "native" and _native is None:
    raise ImportError("FCNET_BACKEND=native but the compiled extension is not available")

_active = pyref if (_requested == "python" or _native is None) else _native


def backend() -> str:
    """Name of the backend currently answering kernel calls."""
    return "python" if _active is pyref else "native"


def available_backends() -> tuple[str, ...]:
    return ("python", "native") if _native is not None else ("python",)


def set_backend(name: str) -> None:
    """Switch backends at runtime (used by tests and benchmarks)."""
    global _active
    if name == "python":
        _active = pyref
    elif name == "native":
        if _native is None:
            raise ImportError("compiled extension is not available")
        _active = _native
    else:
        raise ValueError(f"unknown backend {name!r}")


def conv2d_fwd(x, k, b):
    return _active.conv2d_fwd(x, k, b)


def conv2d_bwd(x, k, d_y):
    return _active.conv2d_bwd(x, k, d_y)


def maxpool2_fwd(x):
    return _active.maxpool2_fwd(x)


def maxpool2_bwd(idx, d_y, h, w):
    return _active.maxpool2_bwd(idx, d_y, h, w)


def roi_pool_max(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask, p_r, p_c):
    return _active.roi_pool_max(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask, p_r, p_c)


def roi_pool_max_argmax(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask, p_r, p_c):
    return _active.roi_pool_max_argmax(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask, p_r, p_c)


def roi_pool_scatter(arg, d_out, m, n):
    return _active.roi_pool_scatter(arg, d_out, m, n)
