import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from patchfoundry.imgcore import GrayImage
from patchfoundry.sampler import DatasetView, PatchDataset, PatchSetRecord, PatchSpec


def textured_image(h, w, seed=0, smooth=2.0):
    """Smooth random texture in [0, 255]; enough structure for corners,
    gradients and registration to latch onto."""
    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.uniform(0.0, 1.0, (h, w)), smooth)
    lo, hi = noise.min(), noise.max()
    px = 255.0 * (noise - lo) / (hi - lo)
    return GrayImage(px)


def make_patch_dataset(n_views=4, sets_per_view=12, set_size=5, patch=96,
                       seed=0, splits=None, noise=4.0):
    """In-memory dataset: each set holds noisy copies of one base patch,
    so members of a set correspond and different sets do not."""
    rng = np.random.default_rng(seed)
    views = []
    sets = []
    set_id = 0
    for v in range(n_views):
        split = splits[v] if splits else ("train" if v % 2 == 0 else "test")
        views.append(DatasetView(v, f"view{v:02d}", f"cam{v:02d}",
                                 [f"m{k}" for k in range(set_size)], split))
        for _ in range(sets_per_view):
            base = textured_image(patch, patch, seed=int(rng.integers(2**31)),
                                  smooth=1.5).pixels
            stack = np.clip(
                base[None] + rng.normal(0, noise, (set_size, patch, patch)),
                0, 255,
            ).astype(np.uint8)
            sets.append(PatchSetRecord(set_id, v, PatchSpec(48.0, 48.0, 96.0, 0.0),
                                       stack))
            set_id += 1
    return PatchDataset(views, sets, patch_size=patch, set_size=set_size)


def make_registered_fixture(n_views=2, members=4, sets_per_view=10, size=200,
                            patch=96, seed=0, gain_spread=0.15, noise=2.0,
                            splits=None):
    """Registered views with real image backing: identical geometry per
    view, per-member photometric variation.  Returns (dataset, ctx) for
    evaluation and deregistration runs."""
    from patchfoundry.evalbench import DeregContext
    from patchfoundry.geom import View, ViewMember
    from patchfoundry.imgcore import GrayImage, Homography
    from patchfoundry.sampler import (
        ResponseMask,
        extract_patch_set,
        sample_patch_specs,
        spec_fits_members,
    )
    from patchfoundry.sampler.export import quantize_patches

    rng = np.random.default_rng(seed)
    views = []
    records = []
    images = {}
    sizes = {}
    views_by_id = {}
    set_id = 0
    for v in range(n_views):
        base = textured_image(size, size, seed=seed * 101 + v, smooth=1.5).pixels
        member_ids = []
        view_members = []
        for m in range(members):
            mid = f"view{v:02d}/m{m}"
            gain = 1.0 + rng.uniform(-gain_spread, gain_spread)
            bias = rng.uniform(-10, 10)
            px = np.clip(gain * base + bias + rng.normal(0, noise, base.shape), 0, 255)
            images[mid] = GrayImage(px)
            sizes[mid] = (size, size)
            member_ids.append(mid)
            view_members.append(ViewMember(mid, Homography.identity()))
        view = View(f"view{v:02d}", member_ids[0], view_members, status="accepted")
        views_by_id[view.view_id] = view
        uniform = ResponseMask(np.full((size, size), 1.0 / size**2))
        specs = sample_patch_specs(
            uniform, sets_per_view, (64.0, 96.0), (-0.2, 0.2),
            seed=seed * 7 + v,
            accept=lambda s, _view=view: spec_fits_members(s, _view, sizes),
        )
        split = splits[v] if splits else ("train" if v % 2 == 0 else "test")
        views.append(DatasetView(v, view.view_id, f"cam{v:02d}", member_ids, split))
        for spec in specs:
            ps = extract_patch_set(view, images.__getitem__, spec, out_size=patch)
            records.append(PatchSetRecord(set_id, v, spec,
                                          quantize_patches(ps.patches)))
            set_id += 1
    dataset = PatchDataset(views, records, patch_size=patch, set_size=members)
    ctx = DeregContext(views_by_id=views_by_id, get_image=images.__getitem__,
                       image_sizes=sizes)
    return dataset, ctx


@pytest.fixture
def texture():
    return textured_image
