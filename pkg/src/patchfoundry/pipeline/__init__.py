"""Pipeline orchestration: configuration, manifests, stage execution,
the synthetic-camera generator, and the review service."""

from .config import PipelineConfig, config_hash, load_config, save_config
from .manifest import Manifest, PruneDecision, verify_manifest
from .stages import STAGE_ORDER, MissingStageError, ConfigMismatchError, run_stage
from .synth import make_synthetic_cameras

__all__ = [
    "PipelineConfig", "config_hash", "load_config", "save_config",
    "Manifest", "PruneDecision", "verify_manifest",
    "STAGE_ORDER", "MissingStageError", "ConfigMismatchError", "run_stage",
    "make_synthetic_cameras",
]
