"""Convolution kernel backend selection.

Two interchangeable implementations of the direct convolution kernels live in
this package: a pure-numpy path (tap-loop over kernel offsets, vectorized over
batch and space) and a numba ``@njit`` path with explicit loops. The active
backend is chosen once at import time from the ``MKSNET_BACKEND`` environment
variable: ``numba`` (default when numba is importable) or ``numpy``.
"""

from __future__ import annotations

import os

from . import kernels_numpy

BACKEND = os.environ.get("MKSNET_BACKEND", "").strip().lower()

if BACKEND not in ("", "numpy", "numba"):
    raise RuntimeError(f"MKSNET_BACKEND must be 'numpy' or 'numba', got {BACKEND!r}")

_impl = kernels_numpy
if BACKEND != "numpy":
    try:
        from . import kernels_numba as _numba_impl

        _impl = _numba_impl
        BACKEND = "numba"
    except ImportError:
        if BACKEND == "numba":
            raise
        BACKEND = "numpy"
else:
    BACKEND = "numpy"


def get_backend() -> str:
    return BACKEND


def conv2d_raw(xp, w, stride, dilation, groups, h_out, w_out):
    """Convolve a pre-padded input xp (B, Cin, Hp, Wp) with w (Cout, Cin/g, kh, kw)."""
    return _impl.conv2d_raw(xp, w, stride, dilation, groups, h_out, w_out)


def conv2d_grad_input_raw(grad_out, w, stride, dilation, groups, hp, wp):
    """Gradient w.r.t. the padded input, shape (B, Cin, Hp, Wp)."""
    return _impl.conv2d_grad_input_raw(grad_out, w, stride, dilation, groups, hp, wp)


def conv2d_grad_weight_raw(grad_out, xp, stride, dilation, groups, kh, kw):
    """Gradient w.r.t. the weight, shape (Cout, Cin/g, kh, kw)."""
    return _impl.conv2d_grad_weight_raw(grad_out, xp, stride, dilation, groups, kh, kw)
