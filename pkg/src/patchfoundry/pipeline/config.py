"""Pipeline configuration: one flat key/value namespace holding every
stage constant, with the production defaults.

The config file is plain ``key = value`` text, keys named exactly as the
dataclass fields.  A canonical serialization of the semantic fields (all
but execution concerns like `jobs` and `output_root`) is hashed into
every manifest record, so reruns can prove the configuration matched.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..geom.views import MatcherConfig, ViewClusterRule
from ..imgcore import FilterThresholds
from ..util import sha256_text

# these do not change pipeline outputs, only how/where they are computed
EXECUTION_FIELDS = ("output_root", "jobs")


@dataclass
class PipelineConfig:
    input_root: str = ""
    output_root: str = ""
    seed: int = 0
    jobs: int = 1

    # camera gate
    sky_max: float = 0.5
    lap_var_min: float = 180.0
    mean_min: float = 30.0
    min_width: int = 700
    min_height: int = 700
    sample_size: int = 20
    pass_min: int = 14
    detection_confidence_floor: float = 0.5
    missing_sidecar_policy: str = "strict"  # strict | lenient

    # appearance clustering
    kmeans_k: int = 120
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-4
    l2_normalize_embeddings: bool = False

    # viewpoint clustering / matching
    max_keypoints: int = 2000
    match_ratio: float = 0.8
    ransac_inlier_px: float = 2.0
    ransac_max_iters: int = 2000
    ransac_confidence: float = 0.999
    min_inliers: int = 50
    max_sad: float = 50.0
    view_min_size: int = 50
    view_cap: int = 50

    # registration
    pyramid_levels: int = 3
    register_max_iters: int = 50
    ncc_floor: float = 0.8

    # patch sampling
    mask_mode: str = "reference-only"
    mask_sigma: float = 2.0
    n_patch_sets: int = 30000
    patch_size: int = 96
    scale_min: float = 67.0
    scale_max: float = 138.0
    angle_min_deg: float = -15.0
    angle_max_deg: float = 15.0

    # export / training / evaluation
    train_fraction: float = 0.8
    batch_size: int = 1024
    views_per_batch: int = 6
    loss_margin: float = 1.0
    eval_max_pairs_per_view: int = 0  # 0 = every ordered pair
    dereg_shifts: str = "0,1,2,4,8,16"

    def thresholds(self) -> FilterThresholds:
        return FilterThresholds(
            sky_max=self.sky_max, lap_var_min=self.lap_var_min,
            mean_min=self.mean_min, min_width=self.min_width,
            min_height=self.min_height, sample_size=self.sample_size,
            pass_min=self.pass_min,
        )

    def matcher_config(self) -> MatcherConfig:
        return MatcherConfig(
            max_keypoints=self.max_keypoints, ratio=self.match_ratio,
            inlier_px=self.ransac_inlier_px,
            ransac_max_iters=self.ransac_max_iters,
            ransac_confidence=self.ransac_confidence,
        )

    def cluster_rule(self) -> ViewClusterRule:
        return ViewClusterRule(min_inliers=self.min_inliers, max_sad=self.max_sad)

    def scale_range(self) -> tuple[float, float]:
        return (self.scale_min, self.scale_max)

    def angle_range(self) -> tuple[float, float]:
        return (math.radians(self.angle_min_deg), math.radians(self.angle_max_deg))

    def shifts(self) -> list[float]:
        return [float(s) for s in self.dereg_shifts.split(",") if s.strip()]

    def semantic_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in EXECUTION_FIELDS:
            d.pop(name)
        return d


def config_text(config: PipelineConfig, semantic_only: bool = False) -> str:
    skip = set(EXECUTION_FIELDS) if semantic_only else set()
    lines = [f"{f.name} = {getattr(config, f.name)}"
             for f in fields(config) if f.name not in skip]
    return "\n".join(lines) + "\n"


def config_hash(config: PipelineConfig) -> str:
    return sha256_text(config_text(config, semantic_only=True))


def save_config(path: Path | str, config: PipelineConfig) -> None:
    Path(path).write_text(config_text(config))


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def parse_config(text: str) -> PipelineConfig:
    known = {f.name: f for f in fields(PipelineConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        ftype = known[key].type
        if ftype in ("int", int):
            values[key] = int(value)
        elif ftype in ("float", float):
            values[key] = float(value)
        elif ftype in ("bool", bool):
            if value.lower() not in _BOOL:
                raise ValueError(f"line {lineno}: bad boolean {value!r}")
            values[key] = _BOOL[value.lower()]
        else:
            values[key] = value
    return PipelineConfig(**values)


def load_config(path: Path | str) -> PipelineConfig:
    return parse_config(Path(path).read_text())
