"""Patch sampling: response masks, spec sampling, aligned extraction,
augmentation, batch assembly, loss computation, and dataset export."""

from .augment import AugmentParams, augment_patch, draw_augment_params
from .batches import TrainBatch, assemble_batch, hard_in_batch_triplet_loss
from .export import (
    DatasetView,
    ExportView,
    PatchDataset,
    PatchSetRecord,
    export_dataset,
    read_dataset,
    split_views,
)
from .masks import MASK_MODES, ResponseMask, build_probability_mask, hessian_response
from .specs import (
    PatchSet,
    PatchSpec,
    extract_patch_set,
    sample_patch_specs,
    spec_fits_members,
)

__all__ = [
    "AugmentParams", "augment_patch", "draw_augment_params",
    "TrainBatch", "assemble_batch", "hard_in_batch_triplet_loss",
    "DatasetView", "ExportView", "PatchDataset", "PatchSetRecord",
    "export_dataset", "read_dataset", "split_views",
    "MASK_MODES", "ResponseMask", "build_probability_mask", "hessian_response",
    "PatchSet", "PatchSpec", "extract_patch_set", "sample_patch_specs",
    "spec_fits_members",
]
