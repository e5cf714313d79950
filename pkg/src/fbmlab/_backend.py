"""Kernel backend selection.

``FBMLAB_NO_NUMBA=1`` in the environment forces the pure-numpy kernels;
otherwise the numba kernels are used whenever numba imports cleanly.
The choice is made once, at import.
"""
from __future__ import annotations

import os

_FLAG = "FBMLAB_NO_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


if _numba_requested():
    try:
        from . import _kernels_numba as kernels
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        from . import _kernels_numpy as kernels
        BACKEND = "numpy"
else:
    from . import _kernels_numpy as kernels
    BACKEND = "numpy"

__all__ = ["kernels", "BACKEND"]
