"""Saliency response and probability masks for patch-center selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..imgcore import GrayImage

log = logging.getLogger(__name__)

# Three ways to turn a view into one sampling density:
#   average-then-response   mean image first, response on it
#   response-then-average   response per image, mean of the outputs
#   reference-only          response on the reference image alone
MASK_MODES = ("average-then-response", "response-then-average", "reference-only")


@dataclass(eq=False)
class ResponseMask:
    """Nonnegative per-pixel weights summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("mask weights must be finite and nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"mask must sum to 1, got {total}")
        self.weights = w

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def height(self) -> int:
        return self.weights.shape[0]


def hessian_response(img: GrayImage, sigma: float = 2.0) -> np.ndarray:
    """|det of the intensity Hessian| after Gaussian pre-smoothing.

    Second derivatives by central differences; the 1-px border where the
    stencils are undefined is zeroed.
    """
    if img.height < 7 or img.width < 7:
        raise ValueError("image must be at least 7x7")
    p = gaussian_filter(img.pixels, sigma, mode="nearest")
    ixx = np.zeros_like(p)
    iyy = np.zeros_like(p)
    ixy = np.zeros_like(p)
    ixx[1:-1, 1:-1] = p[1:-1, 2:] - 2.0 * p[1:-1, 1:-1] + p[1:-1, :-2]
    iyy[1:-1, 1:-1] = p[2:, 1:-1] - 2.0 * p[1:-1, 1:-1] + p[:-2, 1:-1]
    ixy[1:-1, 1:-1] = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    return np.abs(ixx * iyy - ixy**2)


def build_probability_mask(registered, mode: str = "reference-only",
                           sigma: float = 2.0) -> ResponseMask:
    """Sampling density over the reference frame of a registered view.

    `registered` is an iterable of (warped member, validity mask) pairs,
    reference first; it is consumed streaming, so a generator keeps the
    memory footprint at one frame.  Pixels invalid in any member carry
    zero weight.  An all-zero response degrades to a uniform density
    over the valid region (with a warning) so sampling stays possible.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}; expected one of {MASK_MODES}")

    pixel_sum = None
    response_sum = None
    first_response = None
    valid_all = None
    count = 0
    for img, valid in registered:
        count += 1
        if valid_all is None:
            valid_all = valid.astype(bool).copy()
        else:
            valid_all &= valid.astype(bool)
        if mode == "average-then-response":
            pixel_sum = img.pixels.copy() if pixel_sum is None else pixel_sum + img.pixels
        elif mode == "response-then-average":
            r = hessian_response(img, sigma)
            response_sum = r if response_sum is None else response_sum + r
        elif first_response is None:
            first_response = hessian_response(img, sigma)
    if count == 0:
        raise ValueError("view has no registered members")

    if mode == "average-then-response":
        response = hessian_response(GrayImage(pixel_sum / count), sigma)
    elif mode == "response-then-average":
        response = response_sum / count
    else:
        response = first_response
    response = np.where(valid_all, response, 0.0)

    total = float(response.sum())
    if total <= 0.0:
        log.warning("all-zero response; falling back to a uniform mask over "
                    "the valid region")
        if not valid_all.any():
            raise ValueError("no pixel is valid in every member")
        response = valid_all.astype(np.float64)
        total = float(response.sum())
    return ResponseMask(response / total)
