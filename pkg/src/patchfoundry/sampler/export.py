"""Patch dataset export/ingest.

Binary layout (``patches.amps``, little-endian): magic ``AMPS``,
u32 version=1, u32 n_sets, u32 set_size, u32 patch_w, u32 patch_h, then
per set: u64 set_id, u32 view_ordinal, 4 x f64 spec (x, y, scale, angle),
then set_size patches as u8 row-major.  Provenance (camera, view, member
ids, train/test split) rides in ``manifest.jsonl`` next to it; the split
assigns whole views so correspondences never leak across it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..util import derive_rng
from .specs import PatchSpec

AMPS_MAGIC = b"AMPS"
AMPS_VERSION = 1
BIN_NAME = "patches.amps"
MANIFEST_NAME = "manifest.jsonl"

SPLITS = ("train", "test")


@dataclass
class DatasetView:
    ordinal: int
    view_id: str
    camera_id: str
    member_ids: list[str]
    split: str


@dataclass(eq=False)
class PatchSetRecord:
    set_id: int
    view_ordinal: int
    spec: PatchSpec
    patches: np.ndarray  # (set_size, h, w) uint8


@dataclass(eq=False)
class ExportView:
    """One accepted view ready for export: its provenance plus the
    extracted patch stacks, one per spec."""

    view_id: str
    camera_id: str
    member_ids: list[str]
    split: str
    specs: list[PatchSpec]
    patch_stacks: list[np.ndarray]  # float or uint8, (set_size, h, w)


@dataclass(eq=False)
class PatchDataset:
    views: list[DatasetView]
    sets: list[PatchSetRecord]
    patch_size: int
    set_size: int

    def view_by_id(self, view_id: str) -> DatasetView:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(view_id)

    def sets_for_view(self, ordinal: int) -> list[PatchSetRecord]:
        return [s for s in self.sets if s.view_ordinal == ordinal]

    def split_views(self, split: str) -> list[DatasetView]:
        return [v for v in self.views if v.split == split]


def split_views(view_ids: list[str], train_fraction: float, seed: int) -> dict[str, str]:
    """Whole-view train/test assignment, deterministic under the seed."""
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError("train_fraction must be in [0, 1]")
    ordered = sorted(view_ids)
    rng = derive_rng(seed, "split")
    perm = rng.permutation(len(ordered))
    n_train = int(round(train_fraction * len(ordered)))
    assignment = {}
    for rank, idx in enumerate(perm):
        assignment[ordered[idx]] = "train" if rank < n_train else "test"
    return assignment


def quantize_patches(stack: np.ndarray) -> np.ndarray:
    if stack.dtype == np.uint8:
        return stack
    return np.clip(np.rint(stack), 0, 255).astype(np.uint8)


def export_dataset(out_dir: Path | str, views: list[ExportView]) -> Path:
    """Write the AMPS binary and its provenance manifest; returns the
    binary's path.  Set ids are assigned sequentially in (view, spec)
    order, so identical inputs export byte-identical files."""
    if not views:
        raise ValueError("nothing to export: no accepted view")
    seen = set()
    for v in views:
        if v.split not in SPLITS:
            raise ValueError(f"view {v.view_id}: unknown split {v.split!r}")
        if v.view_id in seen:
            raise ValueError(f"view {v.view_id} appears twice in the export")
        seen.add(v.view_id)
        if len(v.specs) != len(v.patch_stacks):
            raise ValueError(f"view {v.view_id}: one patch stack per spec required")

    set_size = len(views[0].member_ids)
    first = views[0].patch_stacks[0] if views[0].patch_stacks else None
    if first is None:
        raise ValueError("first view exports no patch sets")
    patch_h, patch_w = first.shape[1], first.shape[2]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_sets = sum(len(v.specs) for v in views)

    bin_path = out_dir / BIN_NAME
    manifest_path = out_dir / MANIFEST_NAME
    set_id = 0
    with open(bin_path, "wb") as f, open(manifest_path, "w") as mf:
        f.write(AMPS_MAGIC)
        f.write(struct.pack("<IIIII", AMPS_VERSION, n_sets, set_size, patch_w, patch_h))
        for ordinal, v in enumerate(views):
            mf.write(json.dumps({
                "type": "view",
                "ordinal": ordinal,
                "view_id": v.view_id,
                "camera_id": v.camera_id,
                "member_ids": v.member_ids,
                "split": v.split,
                "n_sets": len(v.specs),
            }, sort_keys=True) + "\n")
            for spec, stack in zip(v.specs, v.patch_stacks):
                stack = quantize_patches(np.asarray(stack))
                if stack.shape != (set_size, patch_h, patch_w):
                    raise ValueError(
                        f"view {v.view_id}: patch stack shape {stack.shape} "
                        f"!= {(set_size, patch_h, patch_w)}"
                    )
                f.write(struct.pack("<QI", set_id, ordinal))
                f.write(struct.pack("<4d", spec.x, spec.y, spec.scale, spec.angle))
                f.write(stack.tobytes(order="C"))
                mf.write(json.dumps({
                    "type": "set",
                    "set_id": set_id,
                    "view_id": v.view_id,
                    "split": v.split,
                }, sort_keys=True) + "\n")
                set_id += 1
    return bin_path


def read_dataset(out_dir: Path | str) -> PatchDataset:
    """Load an exported dataset back into memory (desk-scale sizes)."""
    out_dir = Path(out_dir)
    views = []
    for line in (out_dir / MANIFEST_NAME).read_text().splitlines():
        rec = json.loads(line)
        if rec["type"] == "view":
            views.append(DatasetView(rec["ordinal"], rec["view_id"],
                                     rec["camera_id"], rec["member_ids"],
                                     rec["split"]))
    views.sort(key=lambda v: v.ordinal)

    data = (out_dir / BIN_NAME).read_bytes()
    if data[:4] != AMPS_MAGIC:
        raise ValueError(f"{out_dir / BIN_NAME}: not an AMPS file")
    version, n_sets, set_size, patch_w, patch_h = struct.unpack_from("<IIIII", data, 4)
    if version != AMPS_VERSION:
        raise ValueError(f"unsupported AMPS version {version}")
    offset = 24
    patch_bytes = set_size * patch_h * patch_w
    sets = []
    for _ in range(n_sets):
        set_id, ordinal = struct.unpack_from("<QI", data, offset)
        offset += 12
        x, y, scale, angle = struct.unpack_from("<4d", data, offset)
        offset += 32
        stack = np.frombuffer(data, dtype=np.uint8, count=patch_bytes, offset=offset)
        offset += patch_bytes
        sets.append(PatchSetRecord(set_id, ordinal, PatchSpec(x, y, scale, angle),
                                   stack.reshape(set_size, patch_h, patch_w).copy()))
    if offset != len(data):
        raise ValueError("trailing bytes after the last patch set")
    return PatchDataset(views, sets, patch_size=patch_w, set_size=set_size)
