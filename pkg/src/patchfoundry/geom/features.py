"""Harris corners, normalized-patch descriptors, and ratio-test matching.

A deliberately simple stand-in detector/descriptor pair: webcam frames of
the same view differ photometrically far more than geometrically, so
affine-intensity-invariant patches matched under a ratio test are enough
to drive robust homography estimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from .. import kernels
from ..imgcore import GrayImage

DESCRIPTOR_SIDE = 16
DESCRIPTOR_DIM = DESCRIPTOR_SIDE * DESCRIPTOR_SIDE
HARRIS_K = 0.04
HARRIS_SIGMA = 1.5


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    response: float
    scale: float = 2.0 * HARRIS_SIGMA


@dataclass
class TentativeMatches:
    """One-to-one tentative correspondences after the ratio test."""

    pairs: list[tuple[int, int, float]]  # (index into A, index into B, distance)

    def __len__(self) -> int:
        return len(self.pairs)

    def indices(self) -> tuple[np.ndarray, np.ndarray]:
        ia = np.array([p[0] for p in self.pairs], dtype=np.intp)
        ib = np.array([p[1] for p in self.pairs], dtype=np.intp)
        return ia, ib


def harris_response(px: np.ndarray, k: float = HARRIS_K,
                    sigma: float = HARRIS_SIGMA) -> np.ndarray:
    dy, dx = np.gradient(px)
    sxx = gaussian_filter(dx * dx, sigma)
    syy = gaussian_filter(dy * dy, sigma)
    sxy = gaussian_filter(dx * dy, sigma)
    return (sxx * syy - sxy**2) - k * (sxx + syy) ** 2


def _subpixel_offset(r: np.ndarray, y: int, x: int) -> tuple[float, float]:
    """Quadratic fit to the 3x3 response neighborhood; clamped to +-0.5."""
    gx = 0.5 * (r[y, x + 1] - r[y, x - 1])
    gy = 0.5 * (r[y + 1, x] - r[y - 1, x])
    hxx = r[y, x + 1] - 2.0 * r[y, x] + r[y, x - 1]
    hyy = r[y + 1, x] - 2.0 * r[y, x] + r[y - 1, x]
    hxy = 0.25 * (r[y + 1, x + 1] - r[y + 1, x - 1] - r[y - 1, x + 1] + r[y - 1, x - 1])
    det = hxx * hyy - hxy * hxy
    if not np.isfinite(det) or abs(det) < 1e-12:
        return 0.0, 0.0
    ox = -(hyy * gx - hxy * gy) / det
    oy = -(hxx * gy - hxy * gx) / det
    if not (np.isfinite(ox) and np.isfinite(oy)):
        return 0.0, 0.0
    return float(np.clip(ox, -0.5, 0.5)), float(np.clip(oy, -0.5, 0.5))


def detect_keypoints(img: GrayImage, max_kp: int = 2000) -> list[Keypoint]:
    """Harris corners with 3x3 non-maximum suppression and subpixel
    refinement; strongest `max_kp` responses, deterministic order."""
    if img.height < 32 or img.width < 32:
        raise ValueError("image must be at least 32x32")
    r = harris_response(img.pixels)
    interior = np.zeros_like(r, dtype=bool)
    interior[2:-2, 2:-2] = True
    rmax = float(r[interior].max())
    if not np.isfinite(rmax) or rmax <= 0.0:
        return []
    threshold = max(1e-10, 1e-6 * rmax)
    peaks = (r >= maximum_filter(r, size=3)) & (r > threshold) & interior
    ys, xs = np.nonzero(peaks)
    if ys.size == 0:
        return []
    order = np.lexsort((xs, ys, -r[ys, xs]))[:max_kp]
    kps = []
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        ox, oy = _subpixel_offset(r, y, x)
        kps.append(Keypoint(x=x + ox, y=y + oy, response=float(r[y, x])))
    return kps


def describe_keypoints(img: GrayImage, kps: list[Keypoint],
                       side: int = DESCRIPTOR_SIDE):
    """Mean/std-normalized `side`x`side` patch around each keypoint,
    flattened and L2-normalized.

    Keypoints whose sampling window leaves the raster are dropped; returns
    (descriptors, kept) where `kept` maps descriptor rows back to input
    keypoint indices.
    """
    half = (side - 1) / 2.0
    descs = []
    kept = []
    h = np.eye(3)
    for i, kp in enumerate(kps):
        x0, y0 = kp.x - half, kp.y - half
        if x0 < 0 or y0 < 0 or x0 + side - 1 > img.width - 1 or y0 + side - 1 > img.height - 1:
            continue
        h[0, 2] = x0
        h[1, 2] = y0
        patch, _ = kernels.warp_perspective(img.pixels, h, side, side)
        v = patch.ravel()
        v = v - v.mean()
        v = v / max(float(v.std()), 1e-8)
        norm = float(np.linalg.norm(v))
        if norm < 1e-12:
            v = np.full(side * side, 1.0 / side)  # structureless patch
        else:
            v = v / norm
        descs.append(v.astype(np.float32))
        kept.append(i)
    if not descs:
        return np.zeros((0, side * side), dtype=np.float32), np.array([], dtype=np.intp)
    return np.vstack(descs), np.array(kept, dtype=np.intp)


def match_ratio(desc_a: np.ndarray, desc_b: np.ndarray,
                ratio: float = 0.8) -> TentativeMatches:
    """Lowe ratio test with one-to-one enforcement.

    For each A row, the nearest and second-nearest B rows; kept when
    d1 < ratio * d2 (equidistant neighbors are rejected).  Conflicting
    claims on a B row are resolved in favor of the smaller distance.
    """
    if desc_a.shape[0] == 0 or desc_b.shape[0] == 0:
        raise ValueError("descriptor sets must be nonempty")
    if desc_b.shape[0] < 2:
        raise ValueError("need at least 2 descriptors in B for the ratio test")
    a = desc_a.astype(np.float64)
    b = desc_b.astype(np.float64)
    d2 = np.maximum(
        (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T), 0.0
    )
    dist = np.sqrt(d2)
    nearest2 = np.argpartition(dist, 1, axis=1)[:, :2]
    rows = np.arange(dist.shape[0])
    pairdists = dist[rows[:, None], nearest2]
    swap = pairdists[:, 0] > pairdists[:, 1]
    nearest2[swap] = nearest2[swap][:, ::-1]
    pairdists[swap] = pairdists[swap][:, ::-1]

    candidates = [
        (float(pairdists[i, 0]), i, int(nearest2[i, 0]))
        for i in range(dist.shape[0])
        if pairdists[i, 0] < ratio * pairdists[i, 1]
    ]
    candidates.sort()
    used_b = set()
    pairs = []
    for d, ia, ib in candidates:
        if ib in used_b:
            continue
        used_b.add(ib)
        pairs.append((ia, ib, d))
    pairs.sort()
    return TentativeMatches(pairs)
