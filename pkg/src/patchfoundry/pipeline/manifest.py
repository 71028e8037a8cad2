"""Append-only pipeline manifest: line-delimited JSON records.

Everything a stage decides lands here: camera verdicts, views with their
homographies, registration outcomes, review decisions, autoflags, and one
stage record per completed stage carrying the semantic config copy, the
input-chain hash, and content hashes of every artifact file written.
State is replayed by reading the log; for views and decisions the last
record per id wins.
"""

from __future__ import annotations

import datetime
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geom.views import View, ViewMember
from ..imgcore import Homography
from ..util import sha256_file

MANIFEST_NAME = "manifest.jsonl"

VERDICTS = ("accepted", "rejected")


@dataclass(frozen=True)
class PruneDecision:
    view_id: str
    verdict: str
    reason: str = ""
    reviewer: str = ""
    ts: str = ""

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")


def now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class Manifest:
    """Single-writer JSONL log; appends are flushed and fsynced so a
    decision survives any crash that happens after the POST returns."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.path = self.root / MANIFEST_NAME
        self._lock = threading.Lock()

    def exists(self) -> bool:
        return self.path.exists()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True) + "\n"
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())

    def append_many(self, records: list[dict]) -> None:
        lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as f:
                f.write(lines)
                f.flush()
                os.fsync(f.fileno())

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [json.loads(line) for line in self.path.read_text().splitlines() if line]

    # -- replayed state ----------------------------------------------------

    def stage_record(self, stage: str) -> dict | None:
        found = None
        for rec in self.records():
            if rec.get("type") == "stage" and rec.get("stage") == stage:
                found = rec
        return found

    def camera_records(self) -> dict[str, dict]:
        return {r["camera_id"]: r for r in self.records() if r.get("type") == "camera"}

    def kept_cameras(self) -> list[str]:
        return sorted(cid for cid, r in self.camera_records().items() if r["kept"])

    def camera_images(self) -> dict[str, list[str]]:
        return {r["camera_id"]: r["image_ids"]
                for r in self.records() if r.get("type") == "camera_images"}

    def view_records(self) -> dict[str, dict]:
        out = {}
        for rec in self.records():
            if rec.get("type") == "view":
                out[rec["view_id"]] = rec
        return out

    def views(self, statuses: tuple[str, ...] | None = None) -> dict[str, View]:
        out = {}
        for view_id, rec in self.view_records().items():
            if statuses and rec["status"] not in statuses:
                continue
            if rec["status"] == "removed":
                continue
            members = [
                ViewMember(m["image_id"],
                           Homography(np.array(m["h"], dtype=float).reshape(3, 3)))
                for m in rec["members"]
            ]
            out[view_id] = View(view_id, rec["reference"], members,
                                status=rec["status"])
        return out

    def decisions(self) -> dict[str, PruneDecision]:
        out = {}
        for rec in self.records():
            if rec.get("type") == "decision":
                out[rec["view_id"]] = PruneDecision(
                    rec["view_id"], rec["verdict"], rec.get("reason", ""),
                    rec.get("reviewer", ""), rec.get("ts", ""))
        return out

    def accepted_view_ids(self) -> list[str]:
        return sorted(vid for vid, d in self.decisions().items()
                      if d.verdict == "accepted")

    def autoflags(self) -> dict[str, list[str]]:
        out = {}
        for rec in self.records():
            if rec.get("type") == "autoflag":
                out[rec["view_id"]] = rec["flags"]
        return out

    # -- record builders ----------------------------------------------------

    def record_decision(self, decision: PruneDecision) -> None:
        self.append({
            "type": "decision", "view_id": decision.view_id,
            "verdict": decision.verdict, "reason": decision.reason,
            "reviewer": decision.reviewer, "ts": decision.ts or now_iso(),
        })


def view_to_record(view: View, camera_id: str, status: str | None = None,
                   reason: str = "") -> dict:
    rec = {
        "type": "view",
        "view_id": view.view_id,
        "camera_id": camera_id,
        "reference": view.reference_image_id,
        "status": status or view.status,
        "members": [
            {"image_id": m.image_id, "h": [float(v) for v in m.h_to_ref.h.ravel()]}
            for m in view.members
        ],
    }
    if reason:
        rec["reason"] = reason
    return rec


def removed_view_record(view_id: str, camera_id: str, reason: str) -> dict:
    return {"type": "view", "view_id": view_id, "camera_id": camera_id,
            "reference": "", "status": "removed", "members": [], "reason": reason}


def hash_outputs(root: Path, rel_paths: list[str]) -> list[dict]:
    return [{"path": rel, "sha256": sha256_file(Path(root) / rel)}
            for rel in sorted(rel_paths)]


def verify_manifest(root: Path | str) -> list[str]:
    """Re-hash every artifact referenced by stage records; returns the
    list of mismatches (empty = consistent)."""
    root = Path(root)
    manifest = Manifest(root)
    problems = []
    for rec in manifest.records():
        if rec.get("type") != "stage":
            continue
        for out in rec.get("outputs", []):
            path = root / out["path"]
            if not path.exists():
                problems.append(f"{rec['stage']}: missing artifact {out['path']}")
            elif sha256_file(path) != out["sha256"]:
                problems.append(f"{rec['stage']}: hash mismatch for {out['path']}")
    return problems
