"""Descriptor evaluation: matching-task mAP, verification-task PR curves,
test-split runner, deregistration experiment, and the batch-composition
harness.

The matching task pits two equally sized patch sets against each other:
a predicted bijection is built greedily from the globally sorted distance
list, ranked by distance, and scored with average precision over the
correct-match positions.  The verification task ranks patch pairs by
score and integrates the precision-recall curve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .sampler.augment import OUT_SIZE
from .sampler.batches import assemble_batch, hard_in_batch_triplet_loss
from .sampler.export import PatchDataset, quantize_patches
from .sampler.specs import extract_patch_set, spec_fits_members
from .util import derive_rng

log = logging.getLogger(__name__)

BASELINE_DIM = OUT_SIZE * OUT_SIZE


@dataclass(eq=False)
class DescriptorMatrix:
    ids: list[str]
    vectors: np.ndarray  # (N, D), unit rows

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.ids):
            raise ValueError("one unit row per id required")
        if not np.all(np.isfinite(v)):
            raise ValueError("descriptors must be finite")
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise ValueError("rows must be unit-norm within 1e-4")
        self.vectors = v


@dataclass
class PRCurve:
    precision: np.ndarray
    recall: np.ndarray
    ap: float


@dataclass
class EvalReport:
    pair_aps: list[tuple[str, float]]
    map: float
    pr: PRCurve | None = None
    config: dict = field(default_factory=dict)


def patch_to_descriptor_input(patch: np.ndarray, side: int = OUT_SIZE) -> np.ndarray:
    """Box-downsample a stored patch to the descriptor input size."""
    patch = np.asarray(patch, dtype=np.float64)
    h, w = patch.shape
    if h == side and w == side:
        return patch
    if h % side or w % side:
        raise ValueError(f"patch {h}x{w} not an integer multiple of {side}")
    fh, fw = h // side, w // side
    return patch.reshape(side, fh, side, fw).mean(axis=(1, 3))


def baseline_descriptor(patch: np.ndarray) -> np.ndarray:
    """Mean/variance-normalized flattened patch, L2-normalized.

    Invariant to affine intensity changes by construction; a perfectly
    constant patch maps to the all-entries-equal unit vector.
    """
    p = np.asarray(patch, dtype=np.float64)
    if p.shape != (OUT_SIZE, OUT_SIZE):
        raise ValueError(f"expected a {OUT_SIZE}x{OUT_SIZE} patch, got {p.shape}")
    v = p.ravel() - p.mean()
    v = v / max(float(v.std()), 1e-8)
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        return np.full(BASELINE_DIM, 1.0 / OUT_SIZE)
    return v / norm


def match_task_ap(desc_a: DescriptorMatrix, desc_b: DescriptorMatrix,
                  gt: dict[int, int] | np.ndarray) -> float:
    """AP of the greedy distance-ranked bijection against `gt`.

    All |A| x |B| distances are sorted ascending; a pair is accepted when
    both endpoints are still unused, which yields a bijection ranked by
    distance.  AP sums precision at each correct match times the 1/N
    recall step.
    """
    a, b = desc_a.vectors, desc_b.vectors
    n = a.shape[0]
    if n != b.shape[0] or n < 2:
        raise ValueError("need two equally sized sets with >= 2 descriptors")
    gt_map = {int(k): int(v) for k, v in (gt.items() if isinstance(gt, dict)
                                          else enumerate(gt))}
    if len(gt_map) != n or sorted(gt_map.values()) != list(range(n)):
        raise ValueError("gt must be a bijection over the sets")

    d = np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T, 0)
    order = np.argsort(d, axis=None, kind="stable")
    used_a = np.zeros(n, dtype=bool)
    used_b = np.zeros(n, dtype=bool)
    correct_flags = []
    for flat in order:
        ia, ib = divmod(int(flat), n)
        if used_a[ia] or used_b[ib]:
            continue
        used_a[ia] = True
        used_b[ib] = True
        correct_flags.append(gt_map[ia] == ib)
        if len(correct_flags) == n:
            break
    precision_sum = 0.0
    n_correct = 0
    for rank, is_correct in enumerate(correct_flags, start=1):
        if is_correct:
            n_correct += 1
            precision_sum += n_correct / rank
    return precision_sum / n


def verification_pr(pair_scores: list[tuple[float, bool]]) -> PRCurve:
    """Precision-recall over score-ranked pairs, AP by trapezoidal
    integration across the recall levels (one per positive), anchored at
    the first positive's precision.  Ties keep input order."""
    labels = np.array([bool(is_pos) for _, is_pos in pair_scores])
    scores = np.array([float(s) for s, _ in pair_scores])
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("need at least one positive and one negative pair")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    tp = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    precision = tp / ranks
    recall = tp / n_pos

    pos_ranks = np.flatnonzero(ranked)
    p = precision[pos_ranks]
    r = recall[pos_ranks]
    prev_p, prev_r = p[0], 0.0
    ap = 0.0
    for pi, ri in zip(p, r):
        ap += (ri - prev_r) * (pi + prev_p) / 2.0
        prev_p, prev_r = pi, ri
    return PRCurve(precision=precision, recall=recall, ap=float(ap))


def _descriptor_rows(dataset: PatchDataset, records, member: int,
                     descriptor_fn, external: DescriptorMatrix | None):
    if external is not None:
        index = {eid: i for i, eid in enumerate(external.ids)}
        rows = [external.vectors[index[f"{rec.set_id}:{member}"]] for rec in records]
        return DescriptorMatrix([f"{rec.set_id}:{member}" for rec in records],
                                np.vstack(rows))
    rows = [descriptor_fn(patch_to_descriptor_input(rec.patches[member]))
            for rec in records]
    return DescriptorMatrix([f"{rec.set_id}:{member}" for rec in records],
                            np.vstack(rows))


def iter_member_pairs(set_size: int, max_pairs: int | None, rng) -> list[tuple[int, int]]:
    pairs = [(i, j) for i in range(set_size) for j in range(set_size) if i != j]
    if max_pairs is not None and max_pairs < len(pairs):
        picks = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[int(k)] for k in sorted(picks)]
    return pairs


def run_matching_eval(dataset: PatchDataset, descriptor_fn=baseline_descriptor,
                      external: DescriptorMatrix | None = None,
                      split: str = "test", max_pairs_per_view: int | None = None,
                      seed: int = 0, b_records_override=None) -> EvalReport:
    """Matching-task mAP over every ordered image pair of every view in
    the split; ground truth is the identity bijection between the i-th
    and j-th patches of the view's sets."""
    views = dataset.split_views(split)
    if not views:
        raise ValueError(f"split {split!r} is empty")
    pair_aps = []
    for view in views:
        records = dataset.sets_for_view(view.ordinal)
        if len(records) < 2:
            log.warning("view %s has %d patch sets; skipped", view.view_id,
                        len(records))
            continue
        b_records = records if b_records_override is None else b_records_override[view.view_id]
        rng = derive_rng(seed, "evalpairs", view.view_id)
        member_pairs = iter_member_pairs(dataset.set_size, max_pairs_per_view, rng)
        desc_cache_a = {}
        desc_cache_b = {}
        gt = np.arange(len(records))
        for i, j in member_pairs:
            if i not in desc_cache_a:
                desc_cache_a[i] = _descriptor_rows(dataset, records, i,
                                                   descriptor_fn, external)
            if j not in desc_cache_b:
                desc_cache_b[j] = _descriptor_rows(dataset, b_records, j,
                                                   descriptor_fn, external)
            ap = match_task_ap(desc_cache_a[i], desc_cache_b[j], gt)
            pair_aps.append((f"{view.view_id}/{i}-{j}", ap))
    if not pair_aps:
        raise ValueError("no evaluable pair in the split")
    mean_ap = float(np.mean([ap for _, ap in pair_aps]))
    return EvalReport(pair_aps=pair_aps, map=mean_ap,
                      config={"split": split, "n_pairs": len(pair_aps)})


@dataclass
class DeregContext:
    """What the deregistration experiment needs beyond the exported
    dataset: the registered views and access to the source images."""

    views_by_id: dict
    get_image: callable
    image_sizes: dict[str, tuple[int, int]]


def deregistration_experiment(dataset: PatchDataset, shifts: list[float],
                              ctx: DeregContext,
                              descriptor_fn=baseline_descriptor,
                              split: str = "test", seed: int = 0,
                              max_pairs_per_view: int | None = None):
    """mAP as a function of patch displacement.

    For each shift the B-side patches are re-extracted from specs moved
    by that many pixels in a per-patch random direction (fixed seed, so
    directions agree across shifts); out-of-bounds specs are dropped and
    counted.  Shift 0 reproduces the baseline evaluation exactly.
    """
    if 0 not in shifts and 0.0 not in shifts:
        raise ValueError("shifts must include 0")
    from .sampler.export import PatchSetRecord

    results = {}
    dropped = {}
    for shift in shifts:
        b_override = {}
        n_dropped = 0
        keep_ids = set()
        for view in dataset.split_views(split):
            geom_view = ctx.views_by_id[view.view_id]
            displaced = []
            for rec in dataset.sets_for_view(view.ordinal):
                rng = derive_rng(seed, "dereg-dir", rec.set_id)
                theta = rng.uniform(0.0, 2.0 * np.pi)
                spec = rec.spec.shifted(shift * np.cos(theta), shift * np.sin(theta))
                if not spec_fits_members(spec, geom_view, ctx.image_sizes):
                    n_dropped += 1
                    continue
                ps = extract_patch_set(geom_view, ctx.get_image, spec,
                                       out_size=dataset.patch_size)
                displaced.append(PatchSetRecord(rec.set_id, rec.view_ordinal,
                                                spec, quantize_patches(ps.patches)))
                keep_ids.add(rec.set_id)
            b_override[view.view_id] = displaced

        surviving = [s for s in dataset.sets if s.set_id in keep_ids]
        trimmed = PatchDataset(dataset.views, surviving, dataset.patch_size,
                               dataset.set_size)
        report = run_matching_eval(trimmed, descriptor_fn, split=split,
                                   max_pairs_per_view=max_pairs_per_view,
                                   seed=seed, b_records_override=b_override)
        results[shift] = report.map
        dropped[shift] = n_dropped
    return results, dropped


def batch_composition_report(dataset: PatchDataset, settings: list[int],
                             batch_size: int, n_batches: int = 3,
                             seed: int = 0, split: str = "train",
                             margin: float = 1.0):
    """Mean triplet loss per views-per-batch setting (the batch-negative
    hardness knob); rows come back in the order of `settings`."""
    rows = []
    for views_per_batch in settings:
        losses = []
        for b in range(n_batches):
            batch = assemble_batch(dataset, batch_size=batch_size,
                                   views_per_batch=views_per_batch,
                                   seed=int(derive_rng(seed, "bc", views_per_batch,
                                                       b).integers(2**63)),
                                   split=split)
            anchors = np.vstack([baseline_descriptor(p) for p in batch.anchors])
            positives = np.vstack([baseline_descriptor(p) for p in batch.positives])
            loss, _ = hard_in_batch_triplet_loss(anchors, positives, margin=margin)
            losses.append(loss)
        rows.append((views_per_batch, float(np.mean(losses))))
    return rows


def format_report(report: EvalReport) -> str:
    lines = [f"{pair_id}\t{ap:.6f}" for pair_id, ap in report.pair_aps]
    lines.append(f"mAP {report.map:.6f}")
    return "\n".join(lines) + "\n"


def format_pr_curve(pr: PRCurve) -> str:
    lines = [f"{r:.6f} {p:.6f}" for r, p in zip(pr.recall, pr.precision)]
    lines.append(f"AP {pr.ap:.6f}")
    return "\n".join(lines) + "\n"
