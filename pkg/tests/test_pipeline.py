import json

import numpy as np
import pytest

from patchfoundry.pipeline import (
    ConfigMismatchError,
    Manifest,
    MissingStageError,
    PipelineConfig,
    make_synthetic_cameras,
    run_stage,
    verify_manifest,
)
from patchfoundry.pipeline.config import config_hash, config_text, load_config, parse_config, save_config
from patchfoundry.pipeline.manifest import PruneDecision
from patchfoundry.sampler import read_dataset


def small_config(root, **overrides) -> PipelineConfig:
    base = dict(
        input_root=str(root / "in"), output_root=str(root / "out"), seed=7,
        min_width=150, min_height=150, sample_size=8, pass_min=6,
        max_keypoints=600, view_min_size=8, view_cap=10,
        n_patch_sets=24, scale_min=40.0, scale_max=80.0,
        eval_max_pairs_per_view=20, train_fraction=0.5,
    )
    base.update(overrides)
    return PipelineConfig(**base)


def accept_all(config: PipelineConfig, reviewer="script"):
    manifest = Manifest(config.output_root)
    for vid in sorted(manifest.views(("registered",))):
        manifest.record_decision(PruneDecision(vid, "accepted", reviewer=reviewer))


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """One small archive run through the full stage chain."""
    root = tmp_path_factory.mktemp("chain")
    make_synthetic_cameras(root / "in", n_cameras=2, frames=12, seed=1, size=180)
    config = small_config(root)
    for stage in ("gate", "cluster", "views", "register"):
        run_stage(stage, config)
    accept_all(config)
    for stage in ("sample", "export", "eval", "dereg"):
        run_stage(stage, config)
    return root, config


class TestConfig:
    def test_round_trip(self, tmp_path):
        config = PipelineConfig(seed=5, kmeans_k=40, mask_mode="response-then-average")
        path = tmp_path / "pipeline.cfg"
        save_config(path, config)
        assert load_config(path) == config

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("not_a_key = 3\n")

    def test_bool_and_comments(self):
        config = parse_config("# comment\nl2_normalize_embeddings = true\n\nseed = 9\n")
        assert config.l2_normalize_embeddings is True
        assert config.seed == 9

    def test_hash_ignores_execution_fields(self):
        a = PipelineConfig(output_root="x", jobs=1, seed=3)
        b = PipelineConfig(output_root="y", jobs=8, seed=3)
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(PipelineConfig(seed=4))

    def test_paper_defaults(self):
        c = PipelineConfig()
        assert (c.sky_max, c.lap_var_min, c.mean_min) == (0.5, 180.0, 30.0)
        assert (c.min_width, c.min_height) == (700, 700)
        assert (c.sample_size, c.pass_min) == (20, 14)
        assert c.kmeans_k == 120
        assert (c.min_inliers, c.max_sad) == (50, 50.0)
        assert (c.view_min_size, c.view_cap) == (50, 50)
        assert c.n_patch_sets == 30000
        assert c.patch_size == 96
        assert (c.batch_size, c.views_per_batch) == (1024, 6)


@pytest.fixture(scope="module")
def archive(tmp_path_factory):
    root = tmp_path_factory.mktemp("profiles")
    make_synthetic_cameras(
        root / "in", n_cameras=4, frames=12, seed=3, size=180,
        profiles=["static", "black", "dynamic_detected", "corrupt"])
    config = small_config(root)
    run_stage("gate", config)
    return Manifest(root / "out")


class TestSynthProfiles:
    def test_black_camera_dropped_on_brightness(self, archive):
        rec = archive.camera_records()["cam_001"]
        assert not rec["kept"]
        assert rec["failure_counts"]["f4"] == 8

    def test_dynamic_camera_dropped_on_detections(self, archive):
        rec = archive.camera_records()["cam_002"]
        assert not rec["kept"]
        assert rec["failure_counts"]["f2"] > 0

    def test_corrupt_frame_counted(self, archive):
        rec = archive.camera_records()["cam_003"]
        assert rec["failure_counts"]["corrupt"] in (0, 1)  # sampled or not

    def test_static_camera_kept(self, archive):
        assert archive.camera_records()["cam_000"]["kept"]


class TestStageChain:
    def test_views_and_registration(self, chain):
        root, _ = chain
        manifest = Manifest(root / "out")
        views = manifest.views(("registered",))
        assert len(views) == 2
        for view in views.values():
            assert 8 < len(view.members) <= 10

    def test_exported_dataset(self, chain):
        root, config = chain
        ds = read_dataset(root / "out" / "dataset")
        assert len(ds.sets) == 24
        assert ds.patch_size == 96
        assert {v.split for v in ds.views} == {"train", "test"}

    def test_eval_report_artifact(self, chain):
        root, _ = chain
        text = (root / "out" / "eval" / "report.txt").read_text()
        assert text.strip().splitlines()[-1].startswith("mAP ")

    def test_dereg_report_artifact(self, chain):
        root, config = chain
        lines = (root / "out" / "dereg" / "report.txt").read_text().splitlines()
        assert len(lines) == len(config.shifts())
        first = float(lines[0].split()[1])
        last = float(lines[-1].split()[1])
        assert last < first  # 16 px shift hurts

    def test_manifest_hashes_verify(self, chain):
        root, _ = chain
        assert verify_manifest(root / "out") == []

    def test_tampering_detected(self, chain):
        root, _ = chain
        artifact = root / "out" / "gate" / "kept_cameras.txt"
        original = artifact.read_text()
        artifact.write_text(original + "tampered\n")
        try:
            problems = verify_manifest(root / "out")
            assert any("kept_cameras" in p for p in problems)
        finally:
            artifact.write_text(original)

    def test_rerun_is_noop(self, chain):
        root, config = chain
        before = (root / "out" / "manifest.jsonl").read_text()
        run_stage("gate", config)
        run_stage("export", config)
        assert (root / "out" / "manifest.jsonl").read_text() == before

    def test_config_change_requires_force(self, chain):
        root, config = chain
        changed = small_config(root, seed=99)
        with pytest.raises(ConfigMismatchError):
            run_stage("gate", changed)

    def test_stage_requires_predecessor(self, tmp_path):
        make_synthetic_cameras(tmp_path / "in", n_cameras=1, frames=4,
                               seed=0, size=180)
        config = small_config(tmp_path)
        with pytest.raises(MissingStageError):
            run_stage("cluster", config)

    def test_unknown_stage(self, chain):
        _, config = chain
        with pytest.raises(ValueError):
            run_stage("polish", config)


class TestDecisionsGate:
    def test_sample_requires_accepted_views(self, tmp_path):
        make_synthetic_cameras(tmp_path / "in", n_cameras=1, frames=12,
                               seed=2, size=180)
        config = small_config(tmp_path)
        for stage in ("gate", "cluster", "views", "register"):
            run_stage(stage, config)
        with pytest.raises(MissingStageError, match="accepted"):
            run_stage("sample", config)

        # reject-all changes nothing
        manifest = Manifest(config.output_root)
        for vid in manifest.views(("registered",)):
            manifest.record_decision(PruneDecision(vid, "rejected", reason="test"))
        with pytest.raises(MissingStageError):
            run_stage("sample", config)

        # a later accept overrides and unblocks
        for vid in manifest.views(("registered",)):
            manifest.record_decision(PruneDecision(vid, "accepted"))
        summary = run_stage("sample", config)
        assert summary["specs"] == config.n_patch_sets

    def test_decision_validation(self):
        with pytest.raises(ValueError):
            PruneDecision("v", "maybe")


class TestTwoViewCamera:
    def test_switch_detected(self, tmp_path):
        make_synthetic_cameras(tmp_path / "in", n_cameras=1, frames=16, seed=5,
                               size=180, profiles=["two_view"])
        config = small_config(tmp_path, view_min_size=6, view_cap=8)
        for stage in ("gate", "cluster", "views"):
            run_stage(stage, config)
        manifest = Manifest(config.output_root)
        cam_views = [r for r in manifest.records() if r.get("type") == "camera_views"]
        assert cam_views[0]["view_sizes"][:2] == [8, 8]
