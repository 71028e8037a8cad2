import numpy as np
import pytest

from patchfoundry.geom import (
    View,
    ViewMember,
    refine_registration,
    verify_view_registration,
)
from patchfoundry.imgcore import GrayImage, Homography, warp_image

from conftest import textured_image


def crop_from_base(base, warp, size=128):
    """Sample a `size` window of `base` through `warp` (member -> base coords
    composed with the window offset); every pixel is real content."""
    offset = Homography.translation(16, 16)
    img, valid = warp_image(base, offset.compose(warp), size, size)
    assert valid.all()
    return img


def max_corner_residual(h_est, h_true, size=128):
    corners = np.array([[0.0, 0.0], [size - 1.0, 0.0], [0.0, size - 1.0],
                        [size - 1.0, size - 1.0]])
    return float(np.max(np.linalg.norm(h_est.apply(corners) - h_true.apply(corners), axis=1)))


@pytest.fixture
def base():
    return textured_image(176, 176, seed=21, smooth=2.5)


class TestRefineRegistration:
    def test_identity_on_identical_images(self, base):
        ref = crop_from_base(base, Homography.identity())
        res = refine_registration(ref, ref, Homography.identity())
        assert res.success
        assert res.ncc == pytest.approx(1.0, abs=1e-9)
        assert max_corner_residual(res.homography, Homography.identity()) < 1e-6

    def test_recovers_3px_shift(self, base):
        ref = crop_from_base(base, Homography.identity())
        moving = crop_from_base(base, Homography.translation(3, 0))
        res = refine_registration(ref, moving, Homography.identity())
        assert res.success
        assert abs(res.homography.h[0, 2] - 3.0) < 0.2
        assert abs(res.homography.h[1, 2]) < 0.2

    def test_unrelated_image_fails(self):
        a = textured_image(128, 128, seed=1, smooth=1.0)
        b = textured_image(128, 128, seed=2, smooth=1.0)
        res = refine_registration(a, b, Homography.identity())
        assert not res.success
        assert res.ncc < 0.5

    def test_level_costs_never_increase(self, base):
        ref = crop_from_base(base, Homography.identity())
        moving = crop_from_base(base, Homography.translation(2.3, -1.7))
        res = refine_registration(ref, moving, Homography.identity())
        assert res.success
        for entry, exit_ in res.level_costs:
            assert exit_ <= entry + 1e-9

    def test_subpixel_jitter_warp(self, base):
        ref = crop_from_base(base, Homography.identity())
        jitter = Homography(np.array([
            [1.002, -0.001, 0.4],
            [0.0015, 0.998, -0.3],
            [1e-6, -1e-6, 1.0],
        ]))
        moving = crop_from_base(base, jitter)
        res = refine_registration(ref, moving, Homography.identity())
        assert res.success
        assert max_corner_residual(res.homography, jitter) < 0.5


class TestVerifyViewRegistration:
    def test_identical_members_kept(self, base):
        ref = crop_from_base(base, Homography.identity())
        view = View("v0", "a", [
            ViewMember("a", Homography.identity()),
            ViewMember("b", Homography.identity()),
            ViewMember("c", Homography.identity()),
        ])
        registered, reason = verify_view_registration(view, lambda _id: ref)
        assert reason is None
        assert registered.status == "registered"
        for m in registered.members:
            assert max_corner_residual(m.h_to_ref, Homography.identity()) < 1e-6

    def test_planted_unrelated_member_removes_view(self, base):
        ref = crop_from_base(base, Homography.identity())
        rogue = textured_image(128, 128, seed=99, smooth=1.0)
        images = {"a": ref, "b": ref, "bad": rogue}
        view = View("v0", "a", [
            ViewMember("a", Homography.identity()),
            ViewMember("b", Homography.identity()),
            ViewMember("bad", Homography.identity()),
        ])
        registered, reason = verify_view_registration(view, images.__getitem__)
        assert registered is None
        assert "bad" in reason

    def test_jittered_members_reregistered(self, base):
        ref = crop_from_base(base, Homography.identity())
        rng = np.random.default_rng(5)
        images = {"ref": ref}
        true_h = {}
        members = [ViewMember("ref", Homography.identity())]
        for i in range(4):
            m = np.eye(3)
            m[:2, 2] = rng.uniform(-0.5, 0.5, 2)
            m[0, 0] += rng.uniform(-2e-3, 2e-3)
            m[1, 1] += rng.uniform(-2e-3, 2e-3)
            h = Homography(m)
            mid = f"m{i}"
            images[mid] = crop_from_base(base, h)
            true_h[mid] = h
            members.append(ViewMember(mid, Homography.identity()))
        view = View("v0", "ref", members)
        registered, reason = verify_view_registration(view, images.__getitem__)
        assert reason is None
        for m in registered.members[1:]:
            assert max_corner_residual(m.h_to_ref, true_h[m.image_id]) < 0.5
