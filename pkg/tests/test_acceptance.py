"""Acceptance suite: one test per exit criterion, at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to get one PASS line per
criterion.  Fixture scale is desk-size; every expected value is either
derived from an in-test oracle or a documented constant.
"""

import io
import json
import time
import urllib.request

import numpy as np
import pytest

from patchfoundry.cluster import EmbeddingSet, kmeans
from patchfoundry.evalbench import (
    DescriptorMatrix,
    batch_composition_report,
    deregistration_experiment,
    match_task_ap,
    run_matching_eval,
)
from patchfoundry.geom import (
    View,
    ViewMember,
    ViewClusterRule,
    cluster_views,
    estimate_homography_ransac,
    verify_view_registration,
)
from patchfoundry.imgcore import GrayImage, Homography, warp_image
from patchfoundry.pipeline import (
    Manifest,
    PipelineConfig,
    make_synthetic_cameras,
    run_stage,
    verify_manifest,
)
from patchfoundry.pipeline.manifest import PruneDecision
from patchfoundry.pipeline.review import ReviewServer
from patchfoundry.sampler import (
    MASK_MODES,
    ResponseMask,
    assemble_batch,
    build_probability_mask,
    hard_in_batch_triplet_loss,
    read_dataset,
    sample_patch_specs,
)

from conftest import make_patch_dataset, make_registered_fixture, textured_image
from test_batches_loss import brute_force_loss, unit_rows
from test_cluster import brute_force_site_cost, make_sites_instance
from test_evalbench import brute_force_matching_ap
from test_ransac import H_TRUE, corner_error, synthetic_instance
from test_views import FakeMatcher


def _pass(name):
    print(f"\nACCEPTANCE {name}: PASS")


# ---------------------------------------------------------------------------


def test_criterion_ransac_recovery():
    """100 seeded instances, 100 correspondences, 30% outliers, 2 px
    threshold: < 0.5 px corner error in >= 95; total runtime < 30 s."""
    t0 = time.time()
    good = 0
    for seed in range(100):
        pts_a, pts_b, _ = synthetic_instance(seed, n=100, outlier_frac=0.3)
        res = estimate_homography_ransac(pts_a, pts_b, inlier_px=2.0,
                                         max_iters=2000, seed=seed)
        if res is not None and corner_error(res.homography.h, H_TRUE) < 0.5:
            good += 1
    elapsed = time.time() - t0
    assert good >= 95, f"only {good}/100 instances recovered"
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    _pass(f"ransac-recovery ({good}/100 in {elapsed:.1f}s)")


def test_criterion_view_clustering_fidelity(tmp_path):
    """2-view switch camera (25+25) -> exactly 2 views, exact membership;
    inliers = 50 and SAD = 50 boundaries exclude."""
    from patchfoundry.geom import ImageMatcher, MatcherConfig
    from patchfoundry.imageio import load_gray, list_images

    make_synthetic_cameras(tmp_path, n_cameras=1, frames=50, seed=21,
                           size=256, profiles=["two_view"])
    cam = tmp_path / "cam_000"
    paths = {p.name: p for p in list_images(cam)}
    ids = sorted(paths)
    truth = json.loads((cam / "ground_truth.json").read_text())
    switched = {f"frame_{k:03d}.png" for k in truth["switch_frames"]}
    assert len(switched) == 25

    matcher = ImageMatcher(lambda fid: load_gray(paths[fid]),
                           MatcherConfig(max_keypoints=700), seed=0)
    views = cluster_views(ids, ViewClusterRule(), matcher)
    assert len(views) == 2, f"expected 2 views, got {len(views)}"
    assert set(views[0].member_ids()) == set(ids) - switched
    assert set(views[1].member_ids()) == switched

    # strictness boundaries, scripted matcher
    rule = ViewClusterRule(min_inliers=50, max_sad=50.0)
    at_inlier_boundary = cluster_views(
        ["r", "x"], rule, FakeMatcher({("r", "x"): (50, 1.0)}))
    assert [len(v) for v in at_inlier_boundary] == [1, 1]
    at_sad_boundary = cluster_views(
        ["r", "x"], rule, FakeMatcher({("r", "x"): (100, 50.0)}))
    assert [len(v) for v in at_sad_boundary] == [1, 1]
    _pass("view-clustering-fidelity")


def _jittered_view(base, n_members, seed, size=128):
    offset = Homography.translation(16, 16)
    rng = np.random.default_rng(seed)
    images = {}
    true_h = {}
    members = []
    for i in range(n_members):
        mid = "ref" if i == 0 else f"m{i:02d}"
        if i == 0:
            h = Homography.identity()
        else:
            m = np.eye(3)
            m[:2, 2] = rng.uniform(-0.5, 0.5, 2)
            m[0, 0] += rng.uniform(-2e-3, 2e-3)
            m[1, 1] += rng.uniform(-2e-3, 2e-3)
            h = Homography(m)
        img, valid = warp_image(base, offset.compose(h), size, size)
        assert valid.all()
        images[mid] = img
        true_h[mid] = h
        members.append(ViewMember(mid, Homography.identity()))
    return View("v0", "ref", members), images, true_h


def test_criterion_registration_pruning():
    """A planted unrelated frame removes the whole 50-frame view; without
    the plant the view is kept with < 0.5 px max corner residual."""
    base = textured_image(176, 176, seed=33, smooth=2.5)
    view, images, true_h = _jittered_view(base, 50, seed=7)

    registered, reason = verify_view_registration(view, images.__getitem__)
    assert reason is None
    corners = np.array([[0.0, 0.0], [127.0, 0.0], [0.0, 127.0], [127.0, 127.0]])
    worst = 0.0
    for m in registered.members[1:]:
        err = np.max(np.linalg.norm(
            m.h_to_ref.apply(corners) - true_h[m.image_id].apply(corners), axis=1))
        worst = max(worst, float(err))
    assert worst < 0.5, f"max corner residual {worst:.3f}"

    images["plant"] = textured_image(128, 128, seed=99, smooth=1.0)
    planted = View("v0", "ref",
                   view.members + [ViewMember("plant", Homography.identity())])
    removed, why = verify_view_registration(planted, images.__getitem__)
    assert removed is None
    assert "plant" in why
    _pass(f"registration-pruning (residual {worst:.3f} px)")


def test_criterion_kmeans():
    """Lloyd cost non-increasing over 50 seeded runs; K=N cost 0; the
    4-site instance recovers the generating partition."""
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, (60, 5))
        emb = EmbeddingSet([f"i{j}" for j in range(60)], x)
        c = kmeans(emb, 7, seed=seed)
        assert np.all(np.diff(c.cost_history) <= 1e-9), f"seed {seed} not monotone"

    rng = np.random.default_rng(1)
    x = rng.normal(0, 1, (15, 3))
    emb = EmbeddingSet([f"i{j}" for j in range(15)], x)
    assert kmeans(emb, 15, seed=0).cost == pytest.approx(0.0, abs=1e-9)

    emb, truth, _ = make_sites_instance(seed=5)
    c = kmeans(emb, 4, seed=42)
    labels = np.array([c.assignments[i] for i in emb.image_ids])
    for s in range(4):
        assert len(set(labels[truth == s])) == 1
    assert len(set(labels[[0, 10, 20, 30]])) == 4
    assert c.cost == pytest.approx(brute_force_site_cost(emb.vectors, truth), rel=1e-9)
    _pass("kmeans")


def test_criterion_mask_and_sampling():
    """Masks sum to 1 +- 1e-6 on every construction path; 1e5 samples sit
    within L1 distance 0.05 of the mask."""
    img = textured_image(48, 48, seed=3, smooth=1.0)
    valid = np.ones((48, 48), dtype=bool)
    valid[:, :8] = False
    for mode in MASK_MODES:
        mask = build_probability_mask([(img, np.ones_like(valid)), (img, valid)],
                                      mode=mode)
        assert abs(mask.weights.sum() - 1.0) <= 1e-6
    flat = build_probability_mask([(GrayImage(np.full((16, 16), 9.0)),
                                    np.ones((16, 16), dtype=bool))])
    assert abs(flat.weights.sum() - 1.0) <= 1e-6

    rng = np.random.default_rng(0)
    w = rng.uniform(0.2, 1.0, (12, 12))
    mask = ResponseMask(w / w.sum())
    specs = sample_patch_specs(mask, 100_000, (10, 10), (0, 0), seed=4)
    hist = np.zeros((12, 12))
    for s in specs:
        hist[int(s.y), int(s.x)] += 1
    l1 = float(np.abs(hist / hist.sum() - mask.weights).sum())
    assert l1 < 0.05, f"L1 distance {l1:.4f}"
    _pass(f"mask-and-sampling (L1 {l1:.4f})")


def test_criterion_loss_oracle():
    """Brute-force agreement within 1e-6 on 100 random batches; the three
    worked examples reproduce within 1e-4."""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 65))
        dim = int(rng.integers(2, 17))
        a = unit_rows(rng, n, dim)
        p = unit_rows(rng, n, dim)
        loss, _ = hard_in_batch_triplet_loss(a, p)
        assert loss == pytest.approx(brute_force_loss(a, p), abs=1e-6)

    eye = np.eye(2)
    assert hard_in_batch_triplet_loss(eye, eye)[0] == pytest.approx(0.0, abs=1e-4)
    same = np.tile([[1.0, 0.0]], (3, 1))
    assert hard_in_batch_triplet_loss(same, same)[0] == pytest.approx(1.0, abs=1e-4)
    pair = np.array([[1.0, 0.0], [np.cos(np.pi / 6), np.sin(np.pi / 6)]])
    assert hard_in_batch_triplet_loss(pair, pair)[0] == pytest.approx(0.4824, abs=1e-4)
    _pass("loss-oracle")


def test_criterion_ap_oracle():
    """match_task_ap equals the exhaustive-definition AP on 1000 random
    instances with N <= 6; a perfect descriptor set scores exactly 1.0."""
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        va = unit_rows(rng, n, 6)
        vb = unit_rows(rng, n, 6)
        gt = rng.permutation(n)
        a = DescriptorMatrix([f"a{i}" for i in range(n)], va)
        b = DescriptorMatrix([f"b{i}" for i in range(n)], vb)
        assert match_task_ap(a, b, gt) == pytest.approx(
            brute_force_matching_ap(va, vb, gt), abs=1e-12), f"seed {seed}"

    perfect = DescriptorMatrix([f"d{i}" for i in range(5)], np.eye(5))
    assert match_task_ap(perfect, perfect, np.arange(5)) == 1.0
    _pass("ap-oracle")


def test_criterion_deregistration_shape():
    """mAP at 16 px shift below mAP at 0 px in 10 of 10 seeded runs."""
    drops = []
    for seed in range(10):
        dataset, ctx = make_registered_fixture(
            n_views=2, members=3, sets_per_view=8, seed=seed,
            splits=["test", "test"])
        maps, _ = deregistration_experiment(dataset, [0, 16], ctx, seed=seed)
        assert maps[16] < maps[0], f"seed {seed}: {maps}"
        drops.append(maps[0] - maps[16])
    _pass(f"deregistration-shape (mean drop {np.mean(drops):.3f})")


def test_criterion_batch_composition_harness(tmp_path):
    """views_per_batch in {1, 6, all} produces a report artifact with the
    settings in order and finite recorded values."""
    n_views = 8
    ds = make_patch_dataset(n_views=n_views, sets_per_view=10, set_size=4,
                            splits=["train"] * n_views)
    settings = [1, 6, n_views]
    rows = batch_composition_report(ds, settings, batch_size=8, n_batches=2)
    artifact = tmp_path / "batch_composition.txt"
    artifact.write_text("".join(f"{v} {loss:.6f}\n" for v, loss in rows))

    assert [v for v, _ in rows] == settings
    assert all(np.isfinite(loss) and loss >= 0 for _, loss in rows)
    recorded = artifact.read_text().splitlines()
    assert len(recorded) == 3
    _pass("batch-composition-harness " + str([round(l, 4) for _, l in rows]))


# ---------------------------------------------------------------------------
# end-to-end and parallelism criteria share fixtures


def e2e_config(root, jobs=4) -> PipelineConfig:
    return PipelineConfig(
        input_root=str(root / "in"), output_root=str(root / "out"),
        seed=5, jobs=jobs, max_keypoints=1000, n_patch_sets=120,
        eval_max_pairs_per_view=60,
    )


def accept_all_views(config, ts="2000-01-01T00:00:00+00:00"):
    manifest = Manifest(config.output_root)
    for vid in sorted(manifest.views(("registered",))):
        manifest.record_decision(
            PruneDecision(vid, "accepted", reason="scripted", reviewer="e2e", ts=ts))


def test_criterion_end_to_end(tmp_path):
    """synth -> gate -> cluster -> views -> register -> accept-all ->
    sample -> export -> eval on 3 cameras x 60 frames in < 2 min, with
    >= 100 patch sets of 50 x 96x96 patches, a hash-consistent manifest,
    and a no-op rerun."""
    t0 = time.time()
    make_synthetic_cameras(tmp_path / "in", n_cameras=3, frames=60, seed=5, size=720)
    config = e2e_config(tmp_path)
    for stage in ("gate", "cluster", "views", "register"):
        run_stage(stage, config)
    accept_all_views(config)
    for stage in ("sample", "export", "eval"):
        run_stage(stage, config)
    elapsed = time.time() - t0
    assert elapsed < 120.0, f"pipeline took {elapsed:.1f}s"

    ds = read_dataset(tmp_path / "out" / "dataset")
    assert len(ds.sets) >= 100
    assert ds.set_size == 50
    assert ds.patch_size == 96
    for rec in ds.sets[:5]:
        assert rec.patches.shape == (50, 96, 96)

    assert verify_manifest(tmp_path / "out") == []

    manifest_text = (tmp_path / "out" / "manifest.jsonl").read_text()
    for stage in ("gate", "views", "export", "eval"):
        run_stage(stage, config)
    assert (tmp_path / "out" / "manifest.jsonl").read_text() == manifest_text
    _pass(f"end-to-end ({elapsed:.1f}s, {len(ds.sets)} sets)")


def strip_volatile(manifest_text: str) -> list:
    records = []
    for line in manifest_text.splitlines():
        rec = json.loads(line)
        rec.pop("ts", None)
        records.append(rec)
    return records


def test_criterion_parallelism_invariance(tmp_path):
    """jobs=1 and jobs=8 produce byte-identical datasets and manifests
    (modulo timestamps)."""
    make_synthetic_cameras(tmp_path / "in", n_cameras=2, frames=12, seed=1, size=180)
    outputs = {}
    for jobs in (1, 8):
        config = PipelineConfig(
            input_root=str(tmp_path / "in"),
            output_root=str(tmp_path / f"out{jobs}"),
            seed=7, jobs=jobs, min_width=150, min_height=150, sample_size=8,
            pass_min=6, max_keypoints=600, view_min_size=8, view_cap=10,
            n_patch_sets=24, scale_min=40.0, scale_max=80.0,
            eval_max_pairs_per_view=20, train_fraction=0.5,
        )
        for stage in ("gate", "cluster", "views", "register"):
            run_stage(stage, config)
        accept_all_views(config)
        for stage in ("sample", "export", "eval", "dereg"):
            run_stage(stage, config)
        outputs[jobs] = tmp_path / f"out{jobs}"

    a, b = outputs[1], outputs[8]
    assert (a / "dataset" / "patches.amps").read_bytes() == \
           (b / "dataset" / "patches.amps").read_bytes()
    assert (a / "dataset" / "manifest.jsonl").read_bytes() == \
           (b / "dataset" / "manifest.jsonl").read_bytes()
    assert strip_volatile((a / "manifest.jsonl").read_text()) == \
           strip_volatile((b / "manifest.jsonl").read_text())
    _pass("parallelism-invariance")


def test_criterion_secondary_review_round_trip(tmp_path):
    """[SECONDARY] decisions made over HTTP persist, survive restart, and
    gate the sample stage; the reference-vs-self overlay is black.  Runs
    with no UI: scripted calls against the HTTP API."""
    from PIL import Image

    make_synthetic_cameras(tmp_path / "in", n_cameras=1, frames=12, seed=2, size=180)
    config = PipelineConfig(
        input_root=str(tmp_path / "in"), output_root=str(tmp_path / "out"),
        seed=7, min_width=150, min_height=150, sample_size=8, pass_min=6,
        max_keypoints=600, view_min_size=8, view_cap=10, n_patch_sets=12,
        scale_min=40.0, scale_max=80.0, train_fraction=1.0,
    )
    for stage in ("gate", "cluster", "views", "register"):
        run_stage(stage, config)

    server = ReviewServer(config, port=0)
    server.start()
    try:
        with urllib.request.urlopen(
                f"http://127.0.0.1:{server.port}/api/views") as resp:
            views = json.loads(resp.read())
        vid = views[0]["view_id"]
        with urllib.request.urlopen(
                f"http://127.0.0.1:{server.port}/api/views/{vid}/overlay/0") as resp:
            overlay = np.asarray(Image.open(io.BytesIO(resp.read())))
        assert overlay.max() == 0

        req = urllib.request.Request(
            f"http://127.0.0.1:{server.port}/api/views/{vid}/decision",
            data=json.dumps({"verdict": "accepted", "reason": "scripted",
                             "reviewer": "acceptance"}).encode(),
            headers={"Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req) as resp:
            assert json.loads(resp.read())["ok"]
    finally:
        server.stop()

    # decisions survive restart
    server2 = ReviewServer(config, port=0)
    server2.start()
    try:
        with urllib.request.urlopen(
                f"http://127.0.0.1:{server2.port}/api/views") as resp:
            views = json.loads(resp.read())
        assert views[0]["status"] == "accepted"
    finally:
        server2.stop()

    # and they gate the sample stage
    summary = run_stage("sample", config)
    assert summary["specs"] == 12
    _pass("secondary-review-round-trip")
