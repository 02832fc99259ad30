"""Kernel backend selection.

The compiled extension is preferred when present; the pure-numpy fallback
is bit-identical and always available. Set ``FRAGMENTA_PURE_PYTHON=1`` to
force the fallback (used by the benchmark and the parity tests).
"""

import os

from . import _pure

if os.environ.get("FRAGMENTA_PURE_PYTHON") == "1":
    _impl = _pure
    BACKEND = "pure-python"
else:
    try:
        from . import _speedups as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure-python"

trace_boundary = _impl.trace_boundary
ring_window_sum = _impl.ring_window_sum
erode_antidiagonal_raw = _impl.erode_antidiagonal_raw
dilate_antidiagonal_raw = _impl.dilate_antidiagonal_raw

__all__ = [
    "BACKEND",
    "trace_boundary",
    "ring_window_sum",
    "erode_antidiagonal_raw",
    "dilate_antidiagonal_raw",
]
