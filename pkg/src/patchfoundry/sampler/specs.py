"""Patch specs: where/how large/how rotated a patch is cut, and the
aligned extraction of one patch per view member."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..geom.views import View
from ..imgcore import GrayImage
from .masks import ResponseMask

DEFAULT_PATCH_SIZE = 96


@dataclass(frozen=True)
class PatchSpec:
    """Patch placement in the view's reference frame.

    `scale` is the physical side length in source pixels; the extracted
    raster is resampled to the requested output size.
    """

    x: float
    y: float
    scale: float
    angle: float  # radians

    def similarity(self, out_size: int) -> np.ndarray:
        """Map patch-grid coordinates (u, v) to reference-frame coordinates."""
        step = self.scale / out_size
        c, s = np.cos(self.angle), np.sin(self.angle)
        half = (out_size - 1) / 2.0
        rot_scale = np.array([[c * step, -s * step], [s * step, c * step]])
        offset = np.array([self.x, self.y]) - rot_scale @ np.array([half, half])
        m = np.eye(3)
        m[:2, :2] = rot_scale
        m[:2, 2] = offset
        return m

    def corners(self) -> np.ndarray:
        """The rotated scale x scale square's corners in the reference frame."""
        half = self.scale / 2.0
        c, s = np.cos(self.angle), np.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        local = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
        return local @ rot.T + np.array([self.x, self.y])

    def shifted(self, dx: float, dy: float) -> "PatchSpec":
        return PatchSpec(self.x + dx, self.y + dy, self.scale, self.angle)


@dataclass(eq=False)
class PatchSet:
    """One spec applied to every registered image of a view: all pairs
    inside the set are ground-truth positives."""

    view_id: str
    spec: PatchSpec
    patches: np.ndarray  # (n_members, out, out) float64

    def __post_init__(self):
        if self.patches.ndim != 3 or self.patches.shape[1] != self.patches.shape[2]:
            raise ValueError("patches must be (n, s, s)")

    def __len__(self) -> int:
        return self.patches.shape[0]


def spec_fits_members(spec: PatchSpec, view: View,
                      image_sizes: dict[str, tuple[int, int]]) -> bool:
    """True when the spec's square lands fully inside every member raster.

    `image_sizes` maps member image id to (width, height).  Corners are
    mapped through each member's reference->member homography; a convex
    raster contains the projected quadrilateral iff it contains all four
    corners (near-identity warps keep the quad on the finite side).
    """
    corners = spec.corners()
    ones = np.ones((4, 1))
    for member in view.members:
        w, h = image_sizes[member.image_id]
        hm = np.linalg.inv(member.h_to_ref.h)
        q = np.hstack([corners, ones]) @ hm.T
        if np.any(q[:, 2] <= 1e-12):
            return False
        pts = q[:, :2] / q[:, 2:3]
        if (pts[:, 0].min() < 0 or pts[:, 0].max() > w - 1
                or pts[:, 1].min() < 0 or pts[:, 1].max() > h - 1):
            return False
    return True


def sample_patch_specs(mask: ResponseMask, n: int,
                       scale_range: tuple[float, float],
                       angle_range: tuple[float, float],
                       seed: int, accept=None,
                       max_attempts_factor: int = 100) -> list[PatchSpec]:
    """Draw `n` specs: centers i.i.d. from the mask (inverse CDF over the
    flattened weights), scale log-uniform, angle uniform.

    Specs failing `accept` (e.g. the inside-every-member check) are
    rejected and redrawn, up to `max_attempts_factor * n` attempts in
    total; exhausting that budget raises, which signals a mask whose mass
    sits too close to the borders.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo_s, hi_s = scale_range
    lo_a, hi_a = angle_range
    if not (0 < lo_s <= hi_s) or lo_a > hi_a:
        raise ValueError("empty scale or angle range")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(mask.weights.ravel())
    cdf /= cdf[-1]
    specs = []
    attempts = 0
    budget = max_attempts_factor * n
    while len(specs) < n:
        if attempts >= budget:
            raise RuntimeError(
                f"rejection budget exhausted after {attempts} attempts "
                f"({len(specs)}/{n} specs placed)"
            )
        attempts += 1
        flat = int(np.searchsorted(cdf, rng.random(), side="right"))
        flat = min(flat, mask.weights.size - 1)
        y, x = divmod(flat, mask.width)
        scale = float(np.exp(rng.uniform(np.log(lo_s), np.log(hi_s))))
        angle = float(rng.uniform(lo_a, hi_a))
        spec = PatchSpec(float(x), float(y), scale, angle)
        if accept is None or accept(spec):
            specs.append(spec)
    return specs


def extract_view_patch_stacks(view: View, get_image, specs: list[PatchSpec],
                              out_size: int = DEFAULT_PATCH_SIZE,
                              quantize: bool = True) -> list[np.ndarray]:
    """Batched extraction for a whole view: loads each member image once
    and cuts every spec from it (same arithmetic as extract_patch_set,
    member-outer for I/O efficiency).  Returns one (n_members, out, out)
    stack per spec, uint8 when `quantize` else float64."""
    dtype = np.uint8 if quantize else np.float64
    stacks = [np.empty((len(view.members), out_size, out_size), dtype=dtype)
              for _ in specs]
    sims = [spec.similarity(out_size) for spec in specs]
    for i, member in enumerate(view.members):
        img = get_image(member.image_id)
        h_inv = np.linalg.inv(member.h_to_ref.h)
        for j, (spec, sim) in enumerate(zip(specs, sims)):
            patch, valid = kernels.warp_perspective(img.pixels, h_inv @ sim,
                                                    out_size, out_size)
            if not valid.all():
                raise ValueError(
                    f"spec at ({spec.x:.1f}, {spec.y:.1f}) reads outside member "
                    f"{member.image_id}; inside-every-member invariant violated"
                )
            if quantize:
                patch = np.clip(np.rint(patch), 0, 255)
            stacks[j][i] = patch
    return stacks


def extract_patch_set(view: View, get_image, spec: PatchSpec,
                      out_size: int = DEFAULT_PATCH_SIZE) -> PatchSet:
    """Cut the spec's patch from every member, aligned through the member's
    homography; patch order equals member order.

    Raises when any sampled pixel is invalid: that means the spec violates
    its inside-every-member invariant.
    """
    sim = spec.similarity(out_size)
    patches = np.empty((len(view.members), out_size, out_size))
    for i, member in enumerate(view.members):
        img = get_image(member.image_id)
        m = np.linalg.inv(member.h_to_ref.h) @ sim
        patch, valid = kernels.warp_perspective(img.pixels, m, out_size, out_size)
        if not valid.all():
            raise ValueError(
                f"spec at ({spec.x:.1f}, {spec.y:.1f}) reads outside member "
                f"{member.image_id}; inside-every-member invariant violated"
            )
        patches[i] = patch
    return PatchSet(view.view_id, spec, patches)
