"""Viewpoint clustering: split a camera archive into views.

A view is a maximal episode of frames related to a reference frame by a
near-identity homography.  The first remaining frame becomes the
reference; every other remaining frame joins when matching yields more
than `min_inliers` inliers and the normalized homography sits within
`max_sad` (sum of absolute differences) of the identity.  Joined frames
leave the pool and the loop repeats, so the result partitions the input;
frames matching nothing end up as singleton views.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..imgcore import GrayImage, Homography, sad_to_identity
from ..util import derive_rng
from .features import describe_keypoints, detect_keypoints, match_ratio
from .ransac import estimate_homography_ransac

log = logging.getLogger(__name__)

VIEW_STATUSES = ("raw", "registered", "accepted", "rejected")


@dataclass(frozen=True)
class ViewClusterRule:
    min_inliers: int = 50  # join requires strictly more
    max_sad: float = 50.0  # join requires strictly less

    def __post_init__(self):
        if self.min_inliers <= 0 or self.max_sad <= 0:
            raise ValueError("rule thresholds must be positive")

    def admits(self, n_inliers: int, h_ref_to_other: Homography) -> bool:
        return (n_inliers > self.min_inliers
                and sad_to_identity(h_ref_to_other) < self.max_sad)


@dataclass
class ViewMember:
    image_id: str
    h_to_ref: Homography  # maps this member's coordinates to the reference


@dataclass
class View:
    view_id: str
    reference_image_id: str
    members: list[ViewMember]
    status: str = "raw"

    def __post_init__(self):
        if self.status not in VIEW_STATUSES:
            raise ValueError(f"unknown view status {self.status!r}")
        if not self.members or self.members[0].image_id != self.reference_image_id:
            raise ValueError("reference must be the first member")
        if sad_to_identity(self.members[0].h_to_ref) > 1e-12:
            raise ValueError("reference member must carry the identity homography")
        ids = [m.image_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError("member ids must be distinct")

    def member_ids(self) -> list[str]:
        return [m.image_id for m in self.members]

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class MatchResult:
    n_inliers: int
    h_ref_to_other: Homography


@dataclass(frozen=True)
class MatcherConfig:
    max_keypoints: int = 2000
    ratio: float = 0.8
    inlier_px: float = 2.0
    ransac_max_iters: int = 2000
    ransac_confidence: float = 0.999


class ImageMatcher:
    """Two-view matcher with per-image feature caching.

    Features are extracted once per image id; pixel data is not retained.
    Per-pair RANSAC seeds derive from (seed, id_a, id_b) so results do not
    depend on evaluation order.
    """

    def __init__(self, load, config: MatcherConfig = MatcherConfig(), seed: int = 0):
        self._load = load
        self.config = config
        self.seed = seed
        self._features: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def features(self, image_id: str):
        if image_id not in self._features:
            img = self._load(image_id)
            kps = detect_keypoints(img, self.config.max_keypoints)
            descs, kept = describe_keypoints(img, kps)
            xy = np.array([[kps[i].x, kps[i].y] for i in kept], dtype=np.float64)
            xy = xy.reshape(-1, 2)
            self._features[image_id] = (xy, descs)
        return self._features[image_id]

    def __call__(self, id_a: str, id_b: str) -> MatchResult | None:
        xy_a, desc_a = self.features(id_a)
        xy_b, desc_b = self.features(id_b)
        if len(desc_a) == 0 or len(desc_b) < 2:
            return None
        matches = match_ratio(desc_a, desc_b, self.config.ratio)
        if len(matches) < 4:
            return None
        ia, ib = matches.indices()
        pair_rng = derive_rng(self.seed, "pair", id_a, id_b)
        result = estimate_homography_ransac(
            xy_a[ia], xy_b[ib],
            inlier_px=self.config.inlier_px,
            max_iters=self.config.ransac_max_iters,
            seed=int(pair_rng.integers(2**63)),
            confidence=self.config.ransac_confidence,
        )
        if result is None:
            return None
        return MatchResult(result.n_inliers, result.homography)


def cluster_views(image_ids: list[str], rule: ViewClusterRule, match_pair,
                  view_prefix: str = "v") -> list[View]:
    """Partition `image_ids` into views; `match_pair(ref_id, other_id)`
    returns a MatchResult or None."""
    if not image_ids:
        raise ValueError("need at least one image")
    remaining = list(image_ids)
    views = []
    while remaining:
        ref = remaining[0]
        members = [ViewMember(ref, Homography.identity())]
        rest = []
        for other in remaining[1:]:
            result = match_pair(ref, other)
            if result is not None and rule.admits(result.n_inliers, result.h_ref_to_other):
                members.append(ViewMember(other, result.h_ref_to_other.inverse()))
            else:
                rest.append(other)
        views.append(View(f"{view_prefix}{len(views):03d}", ref, members))
        remaining = rest
    return views


def keep_dominant_view(views: list[View], min_size: int = 50, cap: int = 50,
                       seed: int = 0) -> View | None:
    """The largest view (ties to the earliest reference), kept only when
    strictly larger than `min_size`, subsampled to `cap` members with the
    reference always retained."""
    if not views:
        return None
    best = max(views, key=len)  # max() keeps the earliest on ties
    if len(best) <= min_size:
        log.info("no dominant view: largest has %d members (need > %d)",
                 len(best), min_size)
        return None
    if len(best) <= cap:
        return best
    rng = derive_rng(seed, "dominant", best.view_id, best.reference_image_id)
    picks = rng.choice(len(best) - 1, size=cap - 1, replace=False)
    members = [best.members[0]] + [best.members[1 + i] for i in sorted(picks)]
    return replace(best, members=members)
