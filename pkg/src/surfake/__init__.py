"""SurFake: deepfake detection from surface-geometry descriptors.

Pipeline: discover videos, sample frames, crop faces, extract the per-pixel
global surface descriptor, fuse it with RGB into 6-channel samples, train a
binary CNN classifier, and evaluate with accuracy/ROC/AUC per forgery.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DetectorError,
    GsdBackendError,
    MissingArtifactError,
    SurfakeError,
)

__all__ = [
    "ConfigError",
    "DetectorError",
    "GsdBackendError",
    "MissingArtifactError",
    "SurfakeError",
    "__version__",
]
