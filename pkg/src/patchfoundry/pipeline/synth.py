"""Synthetic camera generator: desk-scale stand-in for a real webcam
archive, with ground truth for oracle tests.

Each camera gets a textured base scene, per-frame gain/bias ramps that
emulate day-night cycles, optional sub-pixel jitter, and a profile that
plants a specific pathology:

  static              one viewpoint, passes every gate filter
  two_view            alternates between two viewpoints 120 px apart
  dynamic_detected    moving object + car boxes in the sidecars (gate drops it)
  dynamic_undetected  moving object the detector "missed" (review must catch it)
  black               all frames near-black (fails the brightness filter)
  corrupt             one frame is not decodable
  shared_scene        reuses the previous camera's scene (duplicate flag bait)

Alongside the frames it writes detection sidecars, a per-camera AMEM
embedding file (zero-mean downsampled intensities), and a ground-truth
JSON with the true warps and switch schedule.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ..cluster import EmbeddingSet, write_embeddings
from ..gate import Detection, DetectionSidecar, sidecar_path_for, write_sidecar
from ..imageio import save_gray_png
from ..imgcore import GrayImage, Homography, warp_image
from ..util import derive_rng

PROFILES = ("static", "two_view", "dynamic_detected", "dynamic_undetected",
            "black", "corrupt", "shared_scene")

VIEW_SWITCH_OFFSET = 120.0
EMBED_SIDE = 8
MARGIN = 4  # base images are generated larger so jitter never samples outside


def base_scene(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Sharp texture with block structure: enough corners for matching and
    Laplacian variance comfortably above the sharpness gate."""
    bh, bw = shape
    noise = gaussian_filter(rng.uniform(0.0, 1.0, (bh, bw)), 0.8)
    lo, hi = noise.min(), noise.max()
    scene = 255.0 * (noise - lo) / (hi - lo)
    blocks = np.zeros((bh, bw))
    for _ in range(14):
        w = int(rng.integers(bw // 12, bw // 4))
        h = int(rng.integers(bh // 12, bh // 4))
        x = int(rng.integers(0, bw - w))
        y = int(rng.integers(0, bh - h))
        blocks[y : y + h, x : x + w] = rng.uniform(-60.0, 60.0)
    return np.clip(0.85 * scene + blocks + 25.0, 0.0, 255.0)


def day_night_gain(frame: int, n_frames: int) -> float:
    return 0.5 + 0.5 * float(np.sin(np.pi * (frame + 0.5) / n_frames))


def frame_embedding(px: np.ndarray) -> np.ndarray:
    """Zero-mean box-downsampled intensities; same scene under different
    lighting stays nearby, different scenes spread out."""
    h, w = px.shape
    side = EMBED_SIDE
    small = px[: h - h % side, : w - w % side]
    small = small.reshape(side, small.shape[0] // side, side, -1).mean(axis=(1, 3))
    v = small.ravel() / 255.0
    return v - v.mean()


def make_synthetic_cameras(out_dir: Path | str, n_cameras: int = 3,
                           frames: int = 60, seed: int = 0,
                           profiles: list[str] | None = None,
                           size: int = 720) -> list[Path]:
    """Generate `n_cameras` camera directories under `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if profiles is None:
        profiles = ["static"] * n_cameras
    if len(profiles) != n_cameras:
        raise ValueError("one profile per camera required")
    for p in profiles:
        if p not in PROFILES:
            raise ValueError(f"unknown profile {p!r}")

    camera_dirs = []
    prev_scene = None
    for cam in range(n_cameras):
        camera_id = f"cam_{cam:03d}"
        cam_dir = out_dir / camera_id
        cam_dir.mkdir(exist_ok=True)
        profile = profiles[cam]
        rng = derive_rng(seed, "synth", camera_id)

        extra_w = int(VIEW_SWITCH_OFFSET) if profile == "two_view" else 0
        if profile == "shared_scene" and prev_scene is not None:
            scene = prev_scene
        else:
            scene = base_scene((size + 2 * MARGIN, size + 2 * MARGIN + extra_w), rng)
        prev_scene = scene
        scene_img = GrayImage(scene)

        switch_frames = []
        if profile == "two_view":
            # first half view A, second half view B, alternating tail
            switch_frames = list(range(frames // 2, frames))

        truth = {"profile": profile, "size": size, "frames": frames,
                 "switch_frames": switch_frames, "true_warps": {},
                 "moving_boxes": {}}
        ids = []
        vectors = []
        for f in range(frames):
            name = f"frame_{f:03d}.png"
            path = cam_dir / name
            image_id = f"{camera_id}/{name}"

            offset_x = MARGIN + (VIEW_SWITCH_OFFSET if f in switch_frames else 0.0)
            jx, jy = rng.uniform(-0.4, 0.4, 2)
            warp = Homography.translation(offset_x + jx, MARGIN + jy)
            img, valid = warp_image(scene_img, warp, size, size)
            if not valid.all():
                raise RuntimeError("synthetic warp sampled outside the base scene")
            px = img.pixels

            detections = []
            if profile in ("dynamic_detected", "dynamic_undetected"):
                # lit like the scene: overlay before the photometric ramp
                bw, bh = max(18, size // 6), max(12, size // 9)
                bx = int((f * 37) % (size - bw))
                by = int(size * 0.6)
                px[by : by + bh, bx : bx + bw] = rng.uniform(160.0, 200.0)
                truth["moving_boxes"][name] = [bx, by, bx + bw, by + bh]
                if profile == "dynamic_detected":
                    detections.append(Detection("car", 0.9,
                                                (bx, by, bx + bw, by + bh)))

            gain = 0.05 if profile == "black" else day_night_gain(f, frames)
            bias = rng.uniform(-6.0, 6.0)
            px = np.clip(gain * px + bias + rng.normal(0.0, 1.5, px.shape), 0.0, 255.0)

            if profile == "corrupt" and f == frames // 2:
                path.write_bytes(b"this is not an image")
            else:
                save_gray_png(path, GrayImage(px))
            truth["true_warps"][name] = [float(v) for v in warp.h.ravel()]

            write_sidecar(sidecar_path_for(path), DetectionSidecar(
                image_id, float(rng.uniform(0.05, 0.35)), tuple(detections)))
            ids.append(image_id)
            vectors.append(frame_embedding(px))

        write_embeddings(cam_dir / "embeddings.amem",
                         EmbeddingSet(ids, np.vstack(vectors)))
        (cam_dir / "ground_truth.json").write_text(json.dumps(truth, indent=1))
        camera_dirs.append(cam_dir)
    return camera_dirs
