"""patchfoundry: webcam time-lapse archives -> verified corresponding patch datasets.

Stages: camera gating, appearance clustering, viewpoint clustering,
photometric registration, human review, patch sampling/export, and a
matching/verification evaluation bench.
"""

from .imgcore import FilterThresholds, GrayImage, Homography

__version__ = "0.1.0"

__all__ = ["GrayImage", "Homography", "FilterThresholds", "__version__"]
