"""Training-batch assembly and the hard-in-batch triplet margin loss.

Batches draw each patch set at most once, so every off-diagonal element
of the in-batch distance matrix is a true negative; the number of source
views per batch is a knob because fewer views mean harder same-scene
negatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..util import derive_rng
from .augment import augment_patch
from .export import PatchDataset


@dataclass(eq=False)
class TrainBatch:
    anchors: np.ndarray    # (n, 32, 32)
    positives: np.ndarray  # (n, 32, 32)
    provenance: list[tuple[str, int]]  # (view_id, set_id) per element

    def __len__(self) -> int:
        return self.anchors.shape[0]


def assemble_batch(dataset: PatchDataset, batch_size: int = 1024,
                   views_per_batch: int = 6, seed: int = 0,
                   split: str = "train") -> TrainBatch:
    """Sample `views_per_batch` views, spread `batch_size` distinct patch
    sets across them as evenly as possible, and cut an augmented
    anchor/positive pair from two distinct members of each set."""
    views = dataset.split_views(split)
    if len(views) < views_per_batch:
        raise ValueError(f"need {views_per_batch} views in split {split!r}, "
                         f"have {len(views)}")
    need_per_view = -(-batch_size // views_per_batch)  # ceil
    rng = derive_rng(seed, "batch", split)
    chosen_idx = rng.choice(len(views), size=views_per_batch, replace=False)
    chosen = [views[i] for i in chosen_idx]

    counts = [batch_size // views_per_batch] * views_per_batch
    for i in range(batch_size % views_per_batch):
        counts[i] += 1

    anchors = []
    positives = []
    provenance = []
    for view, count in zip(chosen, counts):
        records = dataset.sets_for_view(view.ordinal)
        if len(records) < count:
            raise ValueError(
                f"view {view.view_id} has {len(records)} patch sets; "
                f"{count} needed (>= ceil(batch_size/views_per_batch) = "
                f"{need_per_view})"
            )
        picked = rng.choice(len(records), size=count, replace=False)
        for idx in picked:
            record = records[int(idx)]
            i, j = rng.choice(record.patches.shape[0], size=2, replace=False)
            pa = augment_patch(record.patches[int(i)].astype(np.float64),
                               derive_rng(seed, "aug", record.set_id, 0))
            pb = augment_patch(record.patches[int(j)].astype(np.float64),
                               derive_rng(seed, "aug", record.set_id, 1))
            if rng.random() < 0.5:
                pa, pb = pb, pa
            anchors.append(pa)
            positives.append(pb)
            provenance.append((view.view_id, record.set_id))
    return TrainBatch(np.stack(anchors), np.stack(positives), provenance)


def hard_in_batch_triplet_loss(anchor_descs: np.ndarray,
                               positive_descs: np.ndarray,
                               margin: float = 1.0):
    """Mean hinge loss with the hardest same-batch negative per pair.

    Distances use the unit-norm identity |a - b| = sqrt(2 - 2 a.b) with
    clamping, which stays stable at near-duplicates.  The hardest
    negative for row i is the smallest off-diagonal distance in row i or
    column i of the anchor-positive distance matrix.

    Returns (loss, hardest_negative_index) where index j points at the
    positive (row-mined) or anchor (column-mined) that was hardest.
    """
    a = np.asarray(anchor_descs, dtype=np.float64)
    p = np.asarray(positive_descs, dtype=np.float64)
    if a.ndim != 2 or a.shape != p.shape:
        raise ValueError("anchor/positive descriptor shapes must match")
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least 2 pairs for in-batch negatives")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
        raise ValueError("descriptors must be finite")
    for name, m in (("anchor", a), ("positive", p)):
        norms = np.linalg.norm(m, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise ValueError(f"{name} rows must be unit-norm within 1e-4")

    d = np.sqrt(np.maximum(2.0 - 2.0 * (a @ p.T), 0.0))
    pos = np.diag(d).copy()
    off = d + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    row_min = off.min(axis=1)
    row_arg = off.argmin(axis=1)
    col_min = off.min(axis=0)
    col_arg = off.argmin(axis=0)
    use_col = col_min < row_min
    hardest = np.where(use_col, col_min, row_min)
    hardest_idx = np.where(use_col, col_arg, row_arg)
    loss = float(np.mean(np.maximum(0.0, margin + pos - hardest)))
    return loss, hardest_idx.astype(np.intp)
