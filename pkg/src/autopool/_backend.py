"""Select the kernel implementation at import time.

The compiled ``_kernels`` extension is preferred; the NumPy twin is used
when the extension is unavailable or ``AUTOPOOL_PURE_PYTHON`` is set to a
non-empty value other than ``0``.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("AUTOPOOL_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = kernels.NAME


def as_batch(a):
    """Return a C-contiguous float64 ``(B, m, C)`` view plus whether it was 2-D."""
    a = np.asarray(a, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    return np.ascontiguousarray(a), squeeze
