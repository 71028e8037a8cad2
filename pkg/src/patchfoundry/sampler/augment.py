"""Training-time patch augmentation: random affine, then a random-scale
center crop resampled to 32x32.

The full chain composes into one sampling transform so the output is
interpolated exactly once.  With all parameters at their neutral values
the result is the exact central 32x32 crop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels

IN_SIZE = 96
CENTER_REGION = 64
OUT_SIZE = 32

ROTATION_RANGE_DEG = (-25.0, 25.0)
SCALE_RANGE = (0.8, 1.4)
SHEAR_RANGE = (-0.2, 0.2)
CROP_RANGE = (32.0, 64.0)


@dataclass(frozen=True)
class AugmentParams:
    rotation: float  # radians
    scale: float
    shear_x: float
    shear_y: float
    crop_side: float

    @classmethod
    def neutral(cls) -> "AugmentParams":
        return cls(0.0, 1.0, 0.0, 0.0, float(OUT_SIZE))


def draw_augment_params(rng: np.random.Generator) -> AugmentParams:
    lo, hi = ROTATION_RANGE_DEG
    return AugmentParams(
        rotation=float(np.deg2rad(rng.uniform(lo, hi))),
        scale=float(rng.uniform(*SCALE_RANGE)),
        shear_x=float(rng.uniform(*SHEAR_RANGE)),
        shear_y=float(rng.uniform(*SHEAR_RANGE)),
        crop_side=float(rng.uniform(*CROP_RANGE)),
    )


def _affine_about_center(params: AugmentParams, size: int) -> np.ndarray:
    c = (size - 1) / 2.0
    cos, sin = np.cos(params.rotation), np.sin(params.rotation)
    rot = np.array([[cos, -sin], [sin, cos]])
    scale = params.scale * np.eye(2)
    shear = np.array([[1.0, params.shear_x], [params.shear_y, 1.0]])
    lin = shear @ scale @ rot
    m = np.eye(3)
    m[:2, :2] = lin
    m[:2, 2] = np.array([c, c]) - lin @ np.array([c, c])
    return m


def augment_patch(patch: np.ndarray, rng: np.random.Generator | int,
                  params: AugmentParams | None = None) -> np.ndarray:
    """96x96 -> 32x32 augmented patch.

    Applies rotation/scale/shear about the patch center, then crops a
    random-side square from the central 64x64 region and resamples it to
    32x32.  Extreme parameter combinations can reach just past the input
    border; those reads are border-clamped so the output is always
    defined and finite.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[0] < IN_SIZE or patch.shape[1] < IN_SIZE:
        raise ValueError(f"augment needs a >= {IN_SIZE}x{IN_SIZE} patch")
    if params is None:
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        params = draw_augment_params(rng)
    if not (CROP_RANGE[0] <= params.crop_side <= CROP_RANGE[1]):
        raise ValueError("crop side outside the supported range")

    c = (patch.shape[0] - 1) / 2.0
    step = params.crop_side / OUT_SIZE
    half_out = (OUT_SIZE - 1) / 2.0
    crop = np.eye(3)
    crop[0, 0] = crop[1, 1] = step
    crop[:2, 2] = c - step * half_out

    affine = _affine_about_center(params, patch.shape[0])
    m = np.linalg.inv(affine) @ crop
    out, _ = kernels.warp_perspective(patch, m, OUT_SIZE, OUT_SIZE, clamp=True)
    return out
