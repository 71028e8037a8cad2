"""Two-view matching, robust homography estimation, viewpoint clustering,
and photometric registration with view-level pruning."""

from .features import (
    Keypoint,
    TentativeMatches,
    describe_keypoints,
    detect_keypoints,
    match_ratio,
)
from .ransac import RansacResult, estimate_homography_ransac
from .register import RefineResult, refine_registration, verify_view_registration
from .views import (
    ImageMatcher,
    MatcherConfig,
    MatchResult,
    View,
    ViewClusterRule,
    ViewMember,
    cluster_views,
    keep_dominant_view,
)

__all__ = [
    "Keypoint", "TentativeMatches", "detect_keypoints", "describe_keypoints",
    "match_ratio", "RansacResult", "estimate_homography_ransac",
    "RefineResult", "refine_registration", "verify_view_registration",
    "ImageMatcher", "MatcherConfig", "MatchResult", "View", "ViewClusterRule",
    "ViewMember", "cluster_views", "keep_dominant_view",
]
