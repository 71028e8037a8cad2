"""Stage runner: the gate -> cluster -> views -> register -> sample ->
export -> eval/dereg DAG with content-hash idempotence.

Re-running a completed stage with the same semantic config and the same
input chain is a no-op; a config change without --force is an error.
Per-item work fans out to a bounded thread pool; every random choice
derives from (seed, item id), so the worker count never changes results.
Records are appended in sorted item order after the parallel section.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from dataclasses import replace

from .. import evalbench, gate
from ..cluster import l2_normalize, read_embeddings, reduce_camera
from ..evalbench import DeregContext, baseline_descriptor
from ..geom import (
    ImageMatcher,
    ViewMember,
    cluster_views,
    keep_dominant_view,
    refine_registration,
)
from ..imgcore import Homography
from ..imageio import list_images, load_gray
from ..imgcore import GrayImage
from ..sampler import (
    ExportView,
    build_probability_mask,
    read_dataset,
    sample_patch_specs,
    spec_fits_members,
    split_views,
)
from ..sampler.specs import PatchSpec, extract_view_patch_stacks
from ..util import derive_rng, sha256_text
from .config import PipelineConfig, config_hash
from .manifest import (
    Manifest,
    hash_outputs,
    now_iso,
    removed_view_record,
    view_to_record,
)

log = logging.getLogger(__name__)

STAGE_ORDER = ("gate", "cluster", "views", "register", "sample", "export",
               "eval", "dereg")
PREDECESSOR = {
    "gate": None, "cluster": "gate", "views": "cluster", "register": "views",
    "sample": "register", "export": "sample", "eval": "export", "dereg": "export",
}


class MissingStageError(RuntimeError):
    pass


class ConfigMismatchError(RuntimeError):
    pass


def make_loader(input_root: Path):
    @lru_cache(maxsize=16)
    def load(image_id: str) -> GrayImage:
        return load_gray(Path(input_root) / image_id)

    return load


def _pool_map(fn, items, jobs: int):
    # BLAS is pinned to one thread for stage work under every jobs value:
    # our pool provides the parallelism, and a fixed BLAS thread count
    # keeps floating-point summation order (hence results) identical
    # between jobs=1 and jobs=N
    with threadpool_limits(limits=1):
        if jobs <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))


def _input_listing_hash(input_root: Path) -> str:
    entries = []
    for cam_dir in sorted(p for p in Path(input_root).iterdir() if p.is_dir()):
        for f in sorted(cam_dir.iterdir()):
            if f.is_file():
                entries.append(f"{cam_dir.name}/{f.name}:{f.stat().st_size}")
    return sha256_text("\n".join(entries))


def _input_hash(stage: str, manifest: Manifest, config: PipelineConfig) -> str:
    pred = PREDECESSOR[stage]
    if pred is None:
        return _input_listing_hash(Path(config.input_root))
    rec = manifest.stage_record(pred)
    if rec is None or rec.get("status") != "done":
        raise MissingStageError(f"stage {stage!r} requires completed stage {pred!r}")
    chain = {"stage": pred, "config_hash": rec["config_hash"],
             "input_hash": rec["input_hash"], "outputs": rec["outputs"]}
    return sha256_text(json.dumps(chain, sort_keys=True))


def run_stage(stage: str, config: PipelineConfig, force: bool = False) -> dict:
    """Execute one pipeline stage; returns its summary dict."""
    if stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGE_ORDER}")
    if not config.input_root or not config.output_root:
        raise ValueError("config must set input_root and output_root")
    out_root = Path(config.output_root)
    manifest = Manifest(out_root)

    chash = config_hash(config)
    ihash = _input_hash(stage, manifest, config)
    existing = manifest.stage_record(stage)
    if existing is not None and existing.get("status") == "done":
        if existing["config_hash"] == chash and existing["input_hash"] == ihash:
            log.info("stage %s already complete with identical config and "
                     "inputs; no-op", stage)
            return existing["summary"]
        if not force:
            raise ConfigMismatchError(
                f"stage {stage!r} was completed with a different "
                f"config/input hash; rerun with --force to redo it")

    runner = _STAGES[stage]
    rel_outputs, summary, records = runner(config, manifest)
    manifest.append_many(records + [{
        "type": "stage", "stage": stage, "status": "done",
        "config_hash": chash, "input_hash": ihash,
        "config": config.semantic_dict(),
        "outputs": hash_outputs(out_root, rel_outputs),
        "summary": summary, "ts": now_iso(),
    }])
    log.info("stage %s done: %s", stage, summary)
    return summary


# -- individual stages -------------------------------------------------------


def _stage_gate(config: PipelineConfig, manifest: Manifest):
    input_root = Path(config.input_root)
    camera_dirs = sorted(p for p in input_root.iterdir() if p.is_dir())
    if not camera_dirs:
        raise ValueError(f"{input_root}: no camera directories")
    th = config.thresholds()
    lenient = config.missing_sidecar_policy == "lenient"

    def work(cam_dir: Path):
        return gate.decide_camera(
            cam_dir.name, cam_dir, th, config.seed,
            confidence_floor=config.detection_confidence_floor,
            missing_sidecar_ok=lenient)

    decisions = _pool_map(work, camera_dirs, config.jobs)
    decisions.sort(key=lambda d: d.camera_id)

    records = [{
        "type": "camera", "camera_id": d.camera_id, "kept": d.kept,
        "sampled": d.sampled_image_ids,
        "n_pass": sum(r.passed for r in d.reports),
        "failure_counts": d.failure_counts,
    } for d in decisions]

    kept = [d.camera_id for d in decisions if d.kept]
    artifact = Path(config.output_root) / "gate" / "kept_cameras.txt"
    artifact.parent.mkdir(parents=True, exist_ok=True)
    artifact.write_text("".join(f"{c}\n" for c in kept))
    summary = {"cameras": len(decisions), "kept": len(kept)}
    return ["gate/kept_cameras.txt"], summary, records


def _stage_cluster(config: PipelineConfig, manifest: Manifest):
    input_root = Path(config.input_root)
    kept = manifest.kept_cameras()

    def work(camera_id: str):
        emb = read_embeddings(input_root / camera_id / "embeddings.amem")
        if config.l2_normalize_embeddings:
            emb = l2_normalize(emb)
        seed = int(derive_rng(config.seed, "kmeans", camera_id).integers(2**63))
        ids = reduce_camera(emb, config.kmeans_k, seed,
                            max_iters=config.kmeans_max_iters,
                            tol=config.kmeans_tol)
        return camera_id, ids

    results = sorted(_pool_map(work, kept, config.jobs))
    records = [{"type": "camera_images", "camera_id": cid, "image_ids": ids}
               for cid, ids in results]
    lines = [f"{cid}\t{img}" for cid, ids in results for img in ids]
    artifact = Path(config.output_root) / "cluster" / "representatives.txt"
    artifact.parent.mkdir(parents=True, exist_ok=True)
    artifact.write_text("".join(f"{l}\n" for l in lines))
    summary = {"cameras": len(results),
               "images": sum(len(ids) for _, ids in results)}
    return ["cluster/representatives.txt"], summary, records


def _stage_views(config: PipelineConfig, manifest: Manifest):
    camera_images = manifest.camera_images()
    rule = config.cluster_rule()
    loader = make_loader(Path(config.input_root))

    def work(camera_id: str):
        ids = sorted(camera_images[camera_id])
        matcher = ImageMatcher(loader, config.matcher_config(), seed=config.seed)
        views = cluster_views(ids, rule, matcher, view_prefix=f"{camera_id}.v")
        seed = int(derive_rng(config.seed, "dominant", camera_id).integers(2**63))
        dominant = keep_dominant_view(views, min_size=config.view_min_size,
                                      cap=config.view_cap, seed=seed)
        sizes = sorted((len(v) for v in views), reverse=True)
        return camera_id, dominant, sizes

    results = sorted(_pool_map(work, sorted(camera_images), config.jobs),
                     key=lambda r: r[0])
    records = []
    n_views = 0
    for camera_id, dominant, sizes in results:
        records.append({"type": "camera_views", "camera_id": camera_id,
                        "view_sizes": sizes,
                        "dominant": dominant.view_id if dominant else None})
        if dominant is not None:
            records.append(view_to_record(dominant, camera_id, status="raw"))
            n_views += 1
    lines = [json.dumps({"camera_id": c, "view_sizes": s,
                         "dominant": d.view_id if d else None}, sort_keys=True)
             for c, d, s in results]
    artifact = Path(config.output_root) / "views" / "view_summary.jsonl"
    artifact.parent.mkdir(parents=True, exist_ok=True)
    artifact.write_text("".join(f"{l}\n" for l in lines))
    summary = {"cameras": len(results), "views": n_views}
    return ["views/view_summary.jsonl"], summary, records


def _camera_of(view_id: str) -> str:
    return view_id.split(".", 1)[0]


def _stage_register(config: PipelineConfig, manifest: Manifest):
    views = manifest.views(statuses=("raw",))
    loader = make_loader(Path(config.input_root))

    # flat (view, member) tasks: balances the pool even with few views;
    # the whole-view removal rule is applied after the parallel section
    tasks = [(view_id, i) for view_id in sorted(views)
             for i in range(1, len(views[view_id].members))]

    def work(task):
        view_id, i = task
        view = views[view_id]
        member = view.members[i]
        result = refine_registration(
            loader(view.reference_image_id), loader(member.image_id),
            member.h_to_ref, levels=config.pyramid_levels,
            max_iters=config.register_max_iters, ncc_floor=config.ncc_floor)
        return view_id, i, result

    by_view: dict[str, dict[int, object]] = {vid: {} for vid in views}
    for view_id, i, result in _pool_map(work, tasks, config.jobs):
        by_view[view_id][i] = result

    results = []
    for view_id in sorted(views):
        view = views[view_id]
        failure = None
        members = [ViewMember(view.reference_image_id, Homography.identity())]
        for i in range(1, len(view.members)):
            result = by_view[view_id][i]
            if not result.success:
                failure = (f"registration failed for "
                           f"{view.members[i].image_id}: {result.reason}")
                break
            members.append(ViewMember(view.members[i].image_id, result.homography))
        if failure is None:
            results.append((view_id, replace(view, members=members,
                                             status="registered"), None))
        else:
            log.info("view %s removed: %s", view_id, failure)
            results.append((view_id, None, failure))

    records = []
    kept = 0
    for view_id, registered, reason in results:
        if registered is None:
            records.append(removed_view_record(view_id, _camera_of(view_id), reason))
        else:
            records.append(view_to_record(registered, _camera_of(view_id)))
            kept += 1
    lines = [json.dumps({"view_id": vid, "registered": reg is not None,
                         "reason": reason or ""}, sort_keys=True)
             for vid, reg, reason in results]
    artifact = Path(config.output_root) / "register" / "registration.jsonl"
    artifact.parent.mkdir(parents=True, exist_ok=True)
    artifact.write_text("".join(f"{l}\n" for l in lines))
    summary = {"views": len(results), "registered": kept,
               "removed": len(results) - kept}
    return ["register/registration.jsonl"], summary, records


def registered_member_stream(view, loader):
    """Yield (warped member, validity) pairs in member order, streaming."""
    from .. import kernels

    ref = loader(view.reference_image_id)
    for member in view.members:
        img = loader(member.image_id)
        g = np.linalg.inv(member.h_to_ref.h)
        out, valid = kernels.warp_perspective(img.pixels, g / g[2, 2],
                                              ref.height, ref.width)
        yield GrayImage(out), valid


def _accepted_views(config: PipelineConfig, manifest: Manifest):
    views = manifest.views(statuses=("registered",))
    accepted_ids = [vid for vid in manifest.accepted_view_ids() if vid in views]
    if not accepted_ids:
        raise MissingStageError(
            "sample requires at least one accepted review decision; "
            "run the review service (or record decisions) first")
    return {vid: views[vid] for vid in sorted(accepted_ids)}


def _allocate(total: int, n: int) -> list[int]:
    counts = [total // n] * n
    for i in range(total % n):
        counts[i] += 1
    return counts


def _stage_sample(config: PipelineConfig, manifest: Manifest):
    accepted = _accepted_views(config, manifest)
    loader = make_loader(Path(config.input_root))
    ordered_ids = sorted(accepted)
    counts = dict(zip(ordered_ids, _allocate(config.n_patch_sets, len(ordered_ids))))

    def work(view_id: str):
        view = accepted[view_id]
        sizes = {m.image_id: (loader(m.image_id).width, loader(m.image_id).height)
                 for m in view.members}
        mask = build_probability_mask(
            registered_member_stream(view, loader),
            mode=config.mask_mode, sigma=config.mask_sigma)
        seed = int(derive_rng(config.seed, "specs", view_id).integers(2**63))
        specs = sample_patch_specs(
            mask, counts[view_id], config.scale_range(), config.angle_range(),
            seed=seed, accept=lambda s: spec_fits_members(s, view, sizes))
        return view_id, specs

    results = sorted(_pool_map(work, ordered_ids, config.jobs))
    artifact = Path(config.output_root) / "sample" / "specs.jsonl"
    artifact.parent.mkdir(parents=True, exist_ok=True)
    with open(artifact, "w") as f:
        for view_id, specs in results:
            for s in specs:
                f.write(json.dumps({"view_id": view_id, "x": s.x, "y": s.y,
                                    "scale": s.scale, "angle": s.angle},
                                   sort_keys=True) + "\n")
    summary = {"views": len(results),
               "specs": sum(len(s) for _, s in results)}
    return ["sample/specs.jsonl"], summary, []


def _load_specs(config: PipelineConfig) -> dict[str, list[PatchSpec]]:
    path = Path(config.output_root) / "sample" / "specs.jsonl"
    specs: dict[str, list[PatchSpec]] = {}
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        specs.setdefault(rec["view_id"], []).append(
            PatchSpec(rec["x"], rec["y"], rec["scale"], rec["angle"]))
    return specs


def _stage_export(config: PipelineConfig, manifest: Manifest):
    accepted = _accepted_views(config, manifest)
    specs_by_view = _load_specs(config)
    loader = make_loader(Path(config.input_root))
    assignment = split_views(sorted(accepted), config.train_fraction, config.seed)

    def work(view_id: str):
        view = accepted[view_id]
        specs = specs_by_view.get(view_id, [])
        stacks = extract_view_patch_stacks(view, loader, specs,
                                           out_size=config.patch_size)
        return ExportView(
            view_id=view_id, camera_id=_camera_of(view_id),
            member_ids=view.member_ids(), split=assignment[view_id],
            specs=specs, patch_stacks=stacks)

    exports = sorted(_pool_map(work, sorted(accepted), config.jobs),
                     key=lambda e: e.view_id)
    out_dir = Path(config.output_root) / "dataset"
    from ..sampler import export_dataset

    export_dataset(out_dir, exports)
    summary = {"views": len(exports),
               "patch_sets": sum(len(e.specs) for e in exports),
               "train_views": sum(e.split == "train" for e in exports),
               "test_views": sum(e.split == "test" for e in exports)}
    return ["dataset/patches.amps", "dataset/manifest.jsonl"], summary, []


def _stage_eval(config: PipelineConfig, manifest: Manifest):
    dataset = read_dataset(Path(config.output_root) / "dataset")
    max_pairs = config.eval_max_pairs_per_view or None
    report = evalbench.run_matching_eval(
        dataset, baseline_descriptor, split="test",
        max_pairs_per_view=max_pairs, seed=config.seed)

    eval_dir = Path(config.output_root) / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    (eval_dir / "report.txt").write_text(evalbench.format_report(report))

    pr = _verification_curve(dataset, config)
    outputs = ["eval/report.txt"]
    if pr is not None:
        (eval_dir / "pr_curve.txt").write_text(evalbench.format_pr_curve(pr))
        outputs.append("eval/pr_curve.txt")
    summary = {"map": report.map, "pairs": len(report.pair_aps)}
    if pr is not None:
        summary["verification_ap"] = pr.ap
    return outputs, summary, []


def _verification_curve(dataset, config: PipelineConfig, n_pairs: int = 1000):
    """Same-set vs cross-set patch pairs scored by descriptor distance."""
    rng = derive_rng(config.seed, "verification")
    test_sets = [s for s in dataset.sets
                 if dataset.views[s.view_ordinal].split == "test"]
    if len(test_sets) < 2:
        return None
    pairs = []
    for _ in range(n_pairs):
        positive = bool(rng.random() < 0.5)
        rec = test_sets[int(rng.integers(len(test_sets)))]
        i = int(rng.integers(dataset.set_size))
        if positive:
            j = int(rng.integers(dataset.set_size - 1))
            j = j + 1 if j >= i else j
            other, k = rec, j
        else:
            other = test_sets[int(rng.integers(len(test_sets) - 1))]
            if other is rec:
                other = test_sets[-1]
            k = int(rng.integers(dataset.set_size))
        da = baseline_descriptor(evalbench.patch_to_descriptor_input(rec.patches[i]))
        db = baseline_descriptor(evalbench.patch_to_descriptor_input(other.patches[k]))
        pairs.append((-float(np.linalg.norm(da - db)), positive))
    labels = {p for _, p in pairs}
    if len(labels) < 2:
        return None
    return evalbench.verification_pr(pairs)


def _stage_dereg(config: PipelineConfig, manifest: Manifest):
    dataset = read_dataset(Path(config.output_root) / "dataset")
    accepted = _accepted_views(config, manifest)
    loader = make_loader(Path(config.input_root))
    sizes = {}
    for view in accepted.values():
        for m in view.members:
            img = loader(m.image_id)
            sizes[m.image_id] = (img.width, img.height)
    ctx = DeregContext(views_by_id=accepted, get_image=loader, image_sizes=sizes)
    max_pairs = config.eval_max_pairs_per_view or None
    maps, dropped = evalbench.deregistration_experiment(
        dataset, config.shifts(), ctx, split="test", seed=config.seed,
        max_pairs_per_view=max_pairs)

    dereg_dir = Path(config.output_root) / "dereg"
    dereg_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{shift} {maps[shift]:.6f} dropped={dropped[shift]}"
             for shift in config.shifts()]
    (dereg_dir / "report.txt").write_text("".join(f"{l}\n" for l in lines))
    summary = {"maps": {str(k): v for k, v in maps.items()},
               "dropped": {str(k): v for k, v in dropped.items()}}
    return ["dereg/report.txt"], summary, []


_STAGES = {
    "gate": _stage_gate,
    "cluster": _stage_cluster,
    "views": _stage_views,
    "register": _stage_register,
    "sample": _stage_sample,
    "export": _stage_export,
    "eval": _stage_eval,
    "dereg": _stage_dereg,
}
