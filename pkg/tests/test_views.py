import numpy as np
import pytest

from patchfoundry.geom import (
    ImageMatcher,
    MatcherConfig,
    MatchResult,
    View,
    ViewClusterRule,
    ViewMember,
    cluster_views,
    keep_dominant_view,
)
from patchfoundry.imgcore import GrayImage, Homography

from conftest import textured_image


def make_view(view_id, n, prefix="img"):
    members = [ViewMember(f"{prefix}{i:03d}", Homography.identity()) for i in range(n)]
    return View(view_id, members[0].image_id, members)


class FakeMatcher:
    """Injected matcher returning scripted (inliers, sad-translation) pairs."""

    def __init__(self, table):
        self.table = table  # (a, b) -> (n_inliers, tx) or None

    def __call__(self, a, b):
        entry = self.table.get((a, b))
        if entry is None:
            return None
        n_inliers, tx = entry
        return MatchResult(n_inliers, Homography.translation(tx, 0.0))


class TestClusterRule:
    def test_inlier_boundary_is_strict(self):
        rule = ViewClusterRule(min_inliers=50, max_sad=50.0)
        near_identity = Homography.translation(1.0, 0.0)
        assert not rule.admits(50, near_identity)
        assert rule.admits(51, near_identity)

    def test_sad_boundary_is_strict(self):
        rule = ViewClusterRule(min_inliers=50, max_sad=50.0)
        assert not rule.admits(100, Homography.translation(30.0, 20.0))  # SAD == 50
        assert rule.admits(100, Homography.translation(30.0, 19.9))


class TestClusterViews:
    def test_identical_images_form_one_view(self, tmp_path):
        img = textured_image(128, 128, seed=0, smooth=1.0)
        ids = [f"f{i:02d}" for i in range(8)]
        matcher = ImageMatcher(lambda _id: img, MatcherConfig(max_keypoints=500), seed=0)
        views = cluster_views(ids, ViewClusterRule(), matcher)
        assert len(views) == 1
        assert views[0].member_ids() == ids

    def test_two_viewpoint_camera_splits_in_two(self):
        # one base scene seen from two viewpoints 120 px apart
        base = textured_image(240, 420, seed=3, smooth=1.5)
        view_a = GrayImage(base.pixels[:, :240])
        view_b = GrayImage(base.pixels[:, 120:360])
        frames = {}
        order = []
        for i in range(10):
            fid = f"f{i:02d}"
            frames[fid] = view_a if i % 2 == 0 else view_b
            order.append(fid)
        matcher = ImageMatcher(lambda fid: frames[fid],
                               MatcherConfig(max_keypoints=800), seed=1)
        views = cluster_views(order, ViewClusterRule(), matcher)
        assert len(views) == 2
        assert set(views[0].member_ids()) == {f"f{i:02d}" for i in range(0, 10, 2)}
        assert set(views[1].member_ids()) == {f"f{i:02d}" for i in range(1, 10, 2)}

    def test_partition_property(self):
        ids = ["a", "b", "c", "d"]
        table = {("a", "b"): (100, 0.5), ("a", "c"): None, ("a", "d"): (10, 0.1),
                 ("c", "d"): (100, 0.2)}
        views = cluster_views(ids, ViewClusterRule(), FakeMatcher(table))
        seen = [m for v in views for m in v.member_ids()]
        assert sorted(seen) == sorted(ids)
        assert len(views) == 2

    def test_singletons_from_failed_matches(self):
        ids = ["a", "b", "c"]
        views = cluster_views(ids, ViewClusterRule(), FakeMatcher({}))
        assert [len(v) for v in views] == [1, 1, 1]

    def test_membership_stable_under_shuffle_of_rest(self):
        ids = ["r", "m1", "m2", "m3", "m4"]
        table = {("r", m): (80, 0.1) for m in ids[1:]}
        table[("r", "m3")] = None
        views_fwd = cluster_views(ids, ViewClusterRule(), FakeMatcher(table))
        shuffled = ["r", "m4", "m2", "m1", "m3"]
        views_rev = cluster_views(shuffled, ViewClusterRule(), FakeMatcher(table))
        assert set(views_fwd[0].member_ids()) == set(views_rev[0].member_ids())

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            cluster_views([], ViewClusterRule(), FakeMatcher({}))


class TestKeepDominantView:
    def test_largest_kept_and_capped(self):
        views = [make_view("v0", 60, "a"), make_view("v1", 10, "b")]
        kept = keep_dominant_view(views, min_size=50, cap=50, seed=0)
        assert kept is not None
        assert kept.view_id == "v0"
        assert len(kept) == 50
        assert kept.members[0].image_id == kept.reference_image_id
        assert len(set(kept.member_ids())) == 50

    def test_boundary_50_not_kept(self):
        views = [make_view("v0", 50, "a"), make_view("v1", 30, "b")]
        assert keep_dominant_view(views, min_size=50, cap=50, seed=0) is None

    def test_51_kept_with_reference(self):
        views = [make_view("v0", 51, "a")]
        kept = keep_dominant_view(views, min_size=50, cap=50, seed=3)
        assert len(kept) == 50
        assert kept.members[0].image_id == "a000"

    def test_tie_goes_to_earliest(self):
        views = [make_view("v0", 60, "a"), make_view("v1", 60, "b")]
        kept = keep_dominant_view(views, min_size=50, cap=50, seed=0)
        assert kept.view_id == "v0"

    def test_deterministic_subsample(self):
        views = [make_view("v0", 80, "a")]
        k1 = keep_dominant_view(views, seed=9)
        k2 = keep_dominant_view(views, seed=9)
        assert k1.member_ids() == k2.member_ids()


class TestViewInvariants:
    def test_reference_must_lead(self):
        with pytest.raises(ValueError):
            View("v", "x", [ViewMember("y", Homography.identity())])

    def test_reference_identity_required(self):
        with pytest.raises(ValueError):
            View("v", "x", [ViewMember("x", Homography.translation(1, 0))])

    def test_distinct_members(self):
        with pytest.raises(ValueError):
            View("v", "x", [ViewMember("x", Homography.identity()),
                            ViewMember("x", Homography.identity())])
