"""Camera selection: keep cameras that are not empty, not dynamic, sharp,
not black, and large.

Five per-image filters are checked on a random sample from each camera
directory; the camera is kept when at least `pass_min` of `sample_size`
sampled images pass all five.  Sky cover and object detections come from
per-image sidecar files (externally computed); no detector runs here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .imageio import ImageDecodeError, list_images, load_gray
from .imgcore import FilterThresholds, GrayImage, laplacian_variance, mean_intensity
from .util import derive_rng

log = logging.getLogger(__name__)

DYNAMIC_CLASSES = frozenset({"car", "boat"})
FILTER_NAMES = ("f1", "f2", "f3", "f4", "f5")


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    box: tuple[float, float, float, float]  # x0, y0, x1, y1


@dataclass(frozen=True)
class DetectionSidecar:
    image_id: str
    sky_fraction: float
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        if not (0.0 <= self.sky_fraction <= 1.0):
            raise ValueError(f"sky_fraction out of [0, 1]: {self.sky_fraction}")


@dataclass(frozen=True)
class FilterReport:
    image_id: str
    f1: bool  # sky cover below limit
    f2: bool  # no confident car/boat detection
    f3: bool  # sharp enough (Laplacian variance)
    f4: bool  # bright enough (mean intensity)
    f5: bool  # large enough
    sidecar_missing: bool = False
    corrupt: bool = False

    @property
    def passed(self) -> bool:
        return self.f1 and self.f2 and self.f3 and self.f4 and self.f5


@dataclass
class CameraDecision:
    camera_id: str
    sampled_image_ids: list[str]
    reports: list[FilterReport]
    kept: bool
    failure_counts: dict[str, int] = field(default_factory=dict)


def sidecar_path_for(image_path: Path | str) -> Path:
    image_path = Path(image_path)
    return image_path.with_name(image_path.name + ".det")


def parse_sidecar(path: Path | str, image_id: str) -> DetectionSidecar:
    """Line-oriented sidecar: `sky <fraction>` then `det <class> <conf>
    <x0> <y0> <x1> <y1>` lines."""
    sky = None
    detections = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "sky" and len(parts) == 2:
            sky = float(parts[1])
        elif parts[0] == "det" and len(parts) == 7:
            detections.append(Detection(parts[1], float(parts[2]),
                                        tuple(float(v) for v in parts[3:7])))
        else:
            raise ValueError(f"{path}:{lineno}: unrecognized sidecar line {raw!r}")
    if sky is None:
        raise ValueError(f"{path}: missing `sky` line")
    return DetectionSidecar(image_id, sky, tuple(detections))


def write_sidecar(path: Path | str, sidecar: DetectionSidecar) -> None:
    lines = [f"sky {sidecar.sky_fraction:.6f}"]
    for d in sidecar.detections:
        lines.append(f"det {d.label} {d.confidence:.4f} "
                     + " ".join(f"{v:.1f}" for v in d.box))
    Path(path).write_text("\n".join(lines) + "\n")


def check_image(img: GrayImage, sidecar: DetectionSidecar | None,
                th: FilterThresholds, confidence_floor: float = 0.5,
                missing_sidecar_ok: bool = False,
                image_id: str = "") -> FilterReport:
    """Evaluate the five per-image filters.

    A missing sidecar fails f1/f2 in strict mode (the default: wrongly
    removing a camera is cheap) and passes them in lenient mode; either
    way the report records that the sidecar was absent.
    """
    if sidecar is None:
        f1 = f2 = missing_sidecar_ok
        missing = True
    else:
        missing = False
        f1 = sidecar.sky_fraction < th.sky_max
        f2 = not any(
            d.label in DYNAMIC_CLASSES and d.confidence >= confidence_floor
            for d in sidecar.detections
        )
        image_id = image_id or sidecar.image_id
    f3 = laplacian_variance(img) >= th.lap_var_min
    f4 = mean_intensity(img) > th.mean_min
    f5 = img.width > th.min_width and img.height > th.min_height
    return FilterReport(image_id, f1, f2, f3, f4, f5, sidecar_missing=missing)


def _failed_report(image_id: str, corrupt: bool = False) -> FilterReport:
    return FilterReport(image_id, False, False, False, False, False, corrupt=corrupt)


def sample_images(image_ids: list[str], sample_size: int, rng) -> list[str]:
    """Uniform sample without replacement; everything if the camera is small."""
    ordered = sorted(image_ids)
    if len(ordered) <= sample_size:
        return ordered
    picks = rng.choice(len(ordered), size=sample_size, replace=False)
    return [ordered[i] for i in sorted(picks)]


def decide_camera(camera_id: str, image_dir: Path, th: FilterThresholds,
                  seed: int, confidence_floor: float = 0.5,
                  missing_sidecar_ok: bool = False,
                  loader=load_gray) -> CameraDecision:
    paths = {p.name: p for p in list_images(image_dir)}
    if not paths:
        raise ValueError(f"{image_dir}: camera directory lists no readable image")
    rng = derive_rng(seed, "gate", camera_id)
    sampled = sample_images(list(paths), th.sample_size, rng)

    reports = []
    for name in sampled:
        path = paths[name]
        image_id = f"{camera_id}/{name}"
        try:
            img = loader(path)
        except ImageDecodeError as exc:
            log.warning("%s removed from sample: corrupted image file (%s)", image_id, exc)
            reports.append(_failed_report(image_id, corrupt=True))
            continue
        sc_path = sidecar_path_for(path)
        sidecar = parse_sidecar(sc_path, image_id) if sc_path.exists() else None
        reports.append(check_image(img, sidecar, th, confidence_floor,
                                   missing_sidecar_ok, image_id=image_id))

    n_pass = sum(r.passed for r in reports)
    failure_counts = {
        name: sum(not getattr(r, name) for r in reports) for name in FILTER_NAMES
    }
    failure_counts["corrupt"] = sum(r.corrupt for r in reports)
    return CameraDecision(
        camera_id=camera_id,
        sampled_image_ids=[f"{camera_id}/{n}" for n in sampled],
        reports=reports,
        kept=n_pass >= th.pass_min,
        failure_counts=failure_counts,
    )


def select_cameras(camera_dirs: list[Path], th: FilterThresholds, seed: int,
                   confidence_floor: float = 0.5,
                   missing_sidecar_ok: bool = False,
                   loader=load_gray) -> list[CameraDecision]:
    """Gate every camera directory; deterministic under a fixed seed
    regardless of evaluation order (per-camera derived RNG streams)."""
    return [
        decide_camera(Path(d).name, Path(d), th, seed, confidence_floor,
                      missing_sidecar_ok, loader=loader)
        for d in sorted(camera_dirs)
    ]
