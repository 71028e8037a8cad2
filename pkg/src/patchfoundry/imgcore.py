"""Core raster types and pixel-level primitives shared by every stage.

Images are 2-D float64 rasters with intensities nominally in [0, 255].
Homographies are 3x3 projective maps normalized so the (3, 3) entry is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

# Rec. 601 luma weights.
DEFAULT_GRAY_WEIGHTS = (0.299, 0.587, 0.114)

LAPLACIAN_KERNEL = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)


@dataclass(eq=False)
class GrayImage:
    """Owned 2-D intensity raster; the unit flowing through every stage."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected a nonempty 2-D raster, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite intensities")
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(eq=False)
class Homography:
    """3x3 projective map, normalized so h[2, 2] == 1."""

    h: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.h, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got {m.shape}")
        if abs(m[2, 2]) < 1e-12:
            raise ValueError("homography cannot be normalized: h33 ~ 0")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is singular")
        self.h = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def compose(self, other: "Homography") -> "Homography":
        """Return self o other (apply `other` first)."""
        return Homography(self.h @ other.h)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of (x, y) points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        ones = np.ones((pts.shape[0], 1))
        q = np.hstack([pts, ones]) @ self.h.T
        return q[:, :2] / q[:, 2:3]


@dataclass(frozen=True)
class FilterThresholds:
    """Camera-selection constants: sky cover, sharpness, brightness, size,
    and the m-of-n sampling rule."""

    sky_max: float = 0.5
    lap_var_min: float = 180.0
    mean_min: float = 30.0
    min_width: int = 700
    min_height: int = 700
    sample_size: int = 20
    pass_min: int = 14

    def __post_init__(self):
        if self.pass_min > self.sample_size:
            raise ValueError("pass_min must not exceed sample_size")
        for name in ("sky_max", "lap_var_min", "mean_min", "min_width",
                     "min_height", "sample_size", "pass_min"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def to_gray(raster: np.ndarray, weights=DEFAULT_GRAY_WEIGHTS) -> GrayImage:
    """Collapse a 1- or 3-channel raster to one channel.

    3-channel input is reduced by a per-pixel dot product with `weights`
    (normalized by their sum, so constant inputs stay constant).
    """
    arr = np.asarray(raster, dtype=np.float64)
    if arr.ndim == 2:
        return GrayImage(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        return GrayImage(arr[:, :, 0])
    if arr.ndim == 3 and arr.shape[2] == 3:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (3,):
            raise ValueError("weights must be 3 reals")
        return GrayImage(arr @ (w / w.sum()))
    raise ValueError(f"unsupported channel layout: shape {arr.shape}")


def laplacian_response(img: GrayImage) -> np.ndarray:
    """4-neighbor Laplacian of the interior pixels, shape (h-2, w-2)."""
    if img.height < 3 or img.width < 3:
        raise ValueError("image must be at least 3x3")
    p = img.pixels
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
            - 4.0 * p[1:-1, 1:-1])


def laplacian_variance(img: GrayImage) -> float:
    """Population variance of the 4-neighbor Laplacian over interior pixels.

    Borders are excluded; the sharpness threshold is calibrated for this
    kernel and would need recalibration for another discretization.
    """
    resp = laplacian_response(img)
    return float(np.var(resp))


def mean_intensity(img: GrayImage) -> float:
    return float(np.mean(img.pixels))


def warp_image(img: GrayImage, h: Homography, out_w: int, out_h: int):
    """Warp `img` onto an (out_h, out_w) grid by inverse mapping.

    `h` sends output coordinates to source coordinates; output pixels
    whose source point falls outside the raster are 0 and flagged invalid
    in the returned mask (content is never fabricated by clamping).
    """
    out, valid = kernels.warp_perspective(img.pixels, h.h, out_h, out_w)
    return GrayImage(out), valid


def sad_to_identity(h: Homography) -> float:
    """Sum of absolute differences between `h` and the 3x3 identity."""
    return float(np.abs(h.h - np.eye(3)).sum())
