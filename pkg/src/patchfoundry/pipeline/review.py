"""Review service backing the manual-pruning step, plus advisory autoflags.

Serves registered views over local HTTP: frame rasters warped into the
reference frame, absolute-difference overlays for spotting misregistration
and dynamic content, and a decision endpoint whose verdicts are appended
to the manifest immediately (fsynced, so they survive restart).

GET  /api/views                      list with status, flags, thumbnails
GET  /api/views/{id}/frames/{k}      registered frame k as lossless PNG
GET  /api/views/{id}/overlay/{k}     |frame k - reference|, PNG
POST /api/views/{id}/decision        {"verdict", "reason", "reviewer"}

Flags are heuristics to triage human review; they never reject a view.
"""

from __future__ import annotations

import json
import logging
import threading
from functools import lru_cache
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .. import kernels
from ..cluster import read_embeddings
from ..imageio import encode_gray_png
from ..imgcore import GrayImage
from .config import PipelineConfig
from .manifest import Manifest, PruneDecision
from .stages import make_loader

log = logging.getLogger(__name__)

# autoflag knobs: fraction of pixels whose photometrically-normalized
# temporal std exceeds the z threshold; member mean-intensity spread; and
# reference-embedding cosine for near-duplicates
DYNAMIC_Z_STD = 0.5
DYNAMIC_FRACTION = 0.02
EXPOSURE_SPREAD = 90.0
DUPLICATE_COSINE = 0.95


def _warped_member(view, loader, k: int):
    member = view.members[k]
    ref = loader(view.reference_image_id)
    img = loader(member.image_id)
    g = np.linalg.inv(member.h_to_ref.h)
    out, valid = kernels.warp_perspective(img.pixels, g / g[2, 2],
                                          ref.height, ref.width)
    return out, valid


def review_autoflag(config: PipelineConfig, manifest: Manifest | None = None) -> dict:
    """Compute advisory flags for every registered view and append them to
    the manifest.  Returns {view_id: [flags]}."""
    manifest = manifest or Manifest(Path(config.output_root))
    views = manifest.views(statuses=("registered", "accepted"))
    loader = make_loader(Path(config.input_root))

    flags_by_view: dict[str, list[str]] = {}
    ref_embeddings: dict[str, np.ndarray] = {}
    for view_id in sorted(views):
        view = views[view_id]
        flags = []

        # photometrically-normalized temporal variance: gain/bias cancel,
        # moving structure survives
        z_sum = None
        z_sq = None
        valid_all = None
        means = []
        for k in range(len(view.members)):
            warped, valid = _warped_member(view, loader, k)
            valid = valid.astype(bool)
            sel = warped[valid]
            means.append(float(sel.mean()))
            z = np.zeros_like(warped)
            std = float(sel.std())
            z[valid] = (sel - sel.mean()) / max(std, 1e-8)
            z_sum = z if z_sum is None else z_sum + z
            z_sq = z * z if z_sq is None else z_sq + z * z
            valid_all = valid if valid_all is None else (valid_all & valid)
        n = len(view.members)
        var = np.maximum(z_sq / n - (z_sum / n) ** 2, 0.0)
        std_map = np.sqrt(var)[valid_all]
        if std_map.size and float((std_map > DYNAMIC_Z_STD).mean()) > DYNAMIC_FRACTION:
            flags.append("dynamic")
        if max(means) - min(means) > EXPOSURE_SPREAD:
            flags.append("exposure")

        camera_id = view_id.split(".", 1)[0]
        emb_path = Path(config.input_root) / camera_id / "embeddings.amem"
        if emb_path.exists():
            emb = read_embeddings(emb_path)
            try:
                idx = emb.image_ids.index(view.reference_image_id)
            except ValueError:
                idx = -1
            if idx >= 0:
                v = emb.vectors[idx] - emb.vectors[idx].mean()
                norm = np.linalg.norm(v)
                if norm > 1e-12:
                    v = v / norm
                    for other_id, other_vec in ref_embeddings.items():
                        if float(v @ other_vec) > DUPLICATE_COSINE:
                            flags.append(f"duplicate-of:{other_id}")
                            break
                    ref_embeddings[view_id] = v
        flags_by_view[view_id] = flags

    manifest.append_many([
        {"type": "autoflag", "view_id": vid, "flags": flags}
        for vid, flags in sorted(flags_by_view.items())
    ])
    return flags_by_view


class ReviewServer:
    """Thin threading HTTP server over the manifest state; start()/stop()
    make it embeddable in tests and the CLI alike."""

    def __init__(self, config: PipelineConfig, port: int = 8008, host: str = "127.0.0.1"):
        manifest = Manifest(Path(config.output_root))
        register_done = manifest.stage_record("register")
        if register_done is None or register_done.get("status") != "done":
            raise RuntimeError("review requires the register stage to be complete")
        self.config = config
        self.manifest = manifest
        self.loader = make_loader(Path(config.input_root))
        self.static_root = Path("frontend/dist")
        handler = self._make_handler()
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.port = self.httpd.server_address[1]
        self._thread: threading.Thread | None = None

        @lru_cache(maxsize=64)
        def warped(view_id: str, k: int):
            view = self.manifest.views(("registered", "accepted"))[view_id]
            return _warped_member(view, self.loader, k)

        self._warped = warped

    # -- state --------------------------------------------------------------

    def view_list(self) -> list[dict]:
        views = self.manifest.views(statuses=("registered", "accepted"))
        decisions = self.manifest.decisions()
        flags = self.manifest.autoflags()
        out = []
        for view_id in sorted(views):
            view = views[view_id]
            decision = decisions.get(view_id)
            status = decision.verdict if decision else "registered"
            out.append({
                "view_id": view_id,
                "camera_id": view_id.split(".", 1)[0],
                "frame_count": len(view.members),
                "status": status,
                "autoflags": flags.get(view_id, []),
                "thumbnail": f"/api/views/{view_id}/frames/0",
                "decision": None if decision is None else {
                    "verdict": decision.verdict, "reason": decision.reason,
                    "reviewer": decision.reviewer, "ts": decision.ts},
            })
        return out

    def frame_png(self, view_id: str, k: int, overlay: bool) -> bytes:
        views = self.manifest.views(statuses=("registered", "accepted"))
        if view_id not in views:
            raise KeyError(view_id)
        view = views[view_id]
        if not 0 <= k < len(view.members):
            raise KeyError(f"frame {k}")
        warped, valid = self._warped(view_id, k)
        if overlay:
            ref = self.loader(view.reference_image_id)
            px = np.where(valid.astype(bool), np.abs(warped - ref.pixels), 0.0)
        else:
            px = warped
        return encode_gray_png(GrayImage(px))

    def record_decision(self, view_id: str, body: dict) -> dict:
        views = self.manifest.views(statuses=("registered", "accepted"))
        if view_id not in views:
            raise KeyError(view_id)
        verdict = body.get("verdict")
        decision = PruneDecision(view_id, verdict, str(body.get("reason", "")),
                                 str(body.get("reviewer", "")))
        self.manifest.record_decision(decision)
        log.info("decision: %s %s (%s)", view_id, verdict, decision.reason)
        return {"ok": True, "view_id": view_id, "verdict": verdict}

    # -- http plumbing --------------------------------------------------------

    def _make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                log.debug("review http: " + fmt, *args)

            def _send(self, code: int, body: bytes, content_type: str):
                self.send_response(code)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.end_headers()
                self.wfile.write(body)

            def _json(self, code: int, payload) -> None:
                self._send(code, json.dumps(payload).encode(), "application/json")

            def do_OPTIONS(self):
                self.send_response(204)
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.end_headers()

            def do_GET(self):
                parts = [p for p in self.path.split("?")[0].split("/") if p]
                try:
                    if parts == ["api", "views"]:
                        return self._json(200, server.view_list())
                    if (len(parts) == 5 and parts[:2] == ["api", "views"]
                            and parts[3] in ("frames", "overlay")):
                        png = server.frame_png(parts[2], int(parts[4]),
                                               overlay=parts[3] == "overlay")
                        return self._send(200, png, "image/png")
                    return self._serve_static(parts)
                except (KeyError, ValueError) as exc:
                    return self._json(404, {"error": str(exc)})

            def _serve_static(self, parts):
                rel = "index.html" if not parts else "/".join(parts)
                path = (server.static_root / rel).resolve()
                if server.static_root.exists() and \
                        str(path).startswith(str(server.static_root.resolve())) \
                        and path.is_file():
                    ctype = {"html": "text/html", "js": "text/javascript",
                             "css": "text/css"}.get(path.suffix[1:],
                                                    "application/octet-stream")
                    return self._send(200, path.read_bytes(), ctype)
                return self._json(404, {"error": f"no such endpoint: {self.path}"})

            def do_POST(self):
                parts = [p for p in self.path.split("?")[0].split("/") if p]
                if not (len(parts) == 4 and parts[:2] == ["api", "views"]
                        and parts[3] == "decision"):
                    return self._json(404, {"error": f"no such endpoint: {self.path}"})
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    body = json.loads(self.rfile.read(length) or b"{}")
                    if not isinstance(body, dict):
                        raise ValueError("body must be a JSON object")
                    result = server.record_decision(parts[2], body)
                    return self._json(200, result)
                except KeyError as exc:
                    return self._json(404, {"error": f"unknown view {exc}"})
                except (json.JSONDecodeError, ValueError, TypeError) as exc:
                    return self._json(400, {"error": str(exc)})

        return Handler

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        log.info("review service on http://127.0.0.1:%d", self.port)

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        try:
            self.httpd.serve_forever()
        finally:
            self.httpd.server_close()
