# cython: boundscheck=False, wraparound=False, cdivision=True, nonecheck=False
"""Compiled bilinear resampling kernel.

This is the hot inner loop of the whole pipeline: photometric registration
iterates it per pyramid level, patch extraction calls it once per patch per
view member, and the deregistration experiment re-extracts entire datasets.
`patchfoundry.kernels.fallback` holds the equivalent NumPy implementation;
both compute the same arithmetic expression so results agree to rounding.
"""

import numpy as np

from libc.math cimport floor


def warp_perspective(double[:, ::1] src, double[:, ::1] h,
                     int out_h, int out_w, bint clamp=False):
    """Sample `src` at h @ (x, y, 1) for every output pixel (x, y).

    Returns (out, valid) with invalid pixels left at 0.  With clamp=True
    source coordinates are clamped to the raster instead, and every pixel
    is valid.
    """
    cdef int sh = src.shape[0]
    cdef int sw = src.shape[1]
    out_arr = np.zeros((out_h, out_w), dtype=np.float64)
    valid_arr = np.zeros((out_h, out_w), dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef unsigned char[:, ::1] valid = valid_arr
    cdef double h00 = h[0, 0], h01 = h[0, 1], h02 = h[0, 2]
    cdef double h10 = h[1, 0], h11 = h[1, 1], h12 = h[1, 2]
    cdef double h20 = h[2, 0], h21 = h[2, 1], h22 = h[2, 2]
    cdef double xmax = sw - 1.0
    cdef double ymax = sh - 1.0
    cdef int x, y, x0, y0, x1, y1
    cdef double w, sx, sy, fx, fy, top, bot

    with nogil:
        for y in range(out_h):
            for x in range(out_w):
                w = h20 * x + h21 * y + h22
                if w < 1e-12 and w > -1e-12:
                    continue
                sx = (h00 * x + h01 * y + h02) / w
                sy = (h10 * x + h11 * y + h12) / w
                if clamp:
                    if sx < 0.0:
                        sx = 0.0
                    elif sx > xmax:
                        sx = xmax
                    if sy < 0.0:
                        sy = 0.0
                    elif sy > ymax:
                        sy = ymax
                elif sx < 0.0 or sx > xmax or sy < 0.0 or sy > ymax:
                    continue
                x0 = <int>floor(sx)
                y0 = <int>floor(sy)
                fx = sx - x0
                fy = sy - y0
                x1 = x0 + 1
                if x1 > sw - 1:
                    x1 = sw - 1
                y1 = y0 + 1
                if y1 > sh - 1:
                    y1 = sh - 1
                top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
                bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
                out[y, x] = (1.0 - fy) * top + fy * bot
                valid[y, x] = 1
    return out_arr, valid_arr
