"""Pure-NumPy resampling kernel, used when the compiled extension is absent.

Computes the same arithmetic expression as ``_native.pyx`` so the two
backends agree to floating-point rounding.
"""

import numpy as np


def warp_perspective(src, h, out_h, out_w, clamp=False):
    sh, sw = src.shape
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    w = h[2, 0] * xs + h[2, 1] * ys + h[2, 2]
    finite = np.abs(w) >= 1e-12
    w_safe = np.where(finite, w, 1.0)
    sx = (h[0, 0] * xs + h[0, 1] * ys + h[0, 2]) / w_safe
    sy = (h[1, 0] * xs + h[1, 1] * ys + h[1, 2]) / w_safe

    if clamp:
        sx = np.clip(sx, 0.0, sw - 1.0)
        sy = np.clip(sy, 0.0, sh - 1.0)
        valid = finite
    else:
        inside = (sx >= 0.0) & (sx <= sw - 1.0) & (sy >= 0.0) & (sy <= sh - 1.0)
        valid = finite & inside
        sx = np.where(valid, sx, 0.0)
        sy = np.where(valid, sy, 0.0)

    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = sx - x0
    fy = sy - y0
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)

    top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
    bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
    out = (1.0 - fy) * top + fy * bot
    out[~valid] = 0.0
    return out, valid.astype(np.uint8)
