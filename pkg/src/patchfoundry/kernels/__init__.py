"""Resampling kernel with backend selection at import time.

Prefers the compiled extension; falls back to NumPy when it is missing or
when ``PATCHFOUNDRY_FORCE_FALLBACK=1`` is set (used by the benchmark and
the backend-equivalence tests).
"""

import os

import numpy as np

from . import fallback

if os.environ.get("PATCHFOUNDRY_FORCE_FALLBACK") == "1":
    _impl = fallback
    BACKEND = "fallback"
else:
    try:
        from . import _native as _impl

        BACKEND = "native"
    except ImportError:
        _impl = fallback
        BACKEND = "fallback"


def warp_perspective(src, h, out_h, out_w, clamp=False):
    """Inverse-map `src` through `h` onto an (out_h, out_w) grid.

    `h` sends output pixel coordinates (x, y, 1) to source coordinates.
    Returns (out, valid) where `valid` is a boolean mask of output pixels
    whose source point lies inside the raster ([0, w-1] x [0, h-1]);
    invalid pixels are 0.  With clamp=True, out-of-raster source points
    are clamped to the border instead and all pixels are valid.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {h.shape}")
    out, valid = _impl.warp_perspective(src, h, int(out_h), int(out_w), bool(clamp))
    return out, valid.astype(bool)
