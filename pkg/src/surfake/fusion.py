"""Branch normalization, 6-channel fusion, and first-layer weight adaptation.

RGB and the encoded descriptor image are scaled to [0, 1] and normalized
separately with per-architecture constants, then concatenated channel-first
with RGB first. A pretrained 3-channel first convolution is extended to 6
input channels by copying the RGB filters unchanged and initializing each
descriptor channel with the mean of the three RGB channels, so at
initialization the fused network reproduces the pretrained network exactly
whenever the descriptor channels are zero.

Resizing, when an architecture needs a different input side, happens on the
8-bit images before normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MODE_CHANNELS = {"rgb": 3, "gsd": 3, "rgb_gsd": 6}


@dataclass(frozen=True)
class NormalizationSpec:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    input_side: int = 224

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std components must be positive, got {self.std}")


@dataclass
class FusedSample:
    """Normalized channel-first sample; 6 channels when fused (RGB then GSD),
    3 channels in the single-branch input modes."""

    tensor: np.ndarray  # (C, S, S) float32, C in {3, 6}
    label: str
    provenance: tuple[str, int, str] = ("", 0, "none")  # (video_id, frame_index, forgery)

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float32)
        if t.ndim != 3 or t.shape[0] not in (3, 6):
            raise ValueError(f"sample tensor must be (3|6, S, S), got {t.shape}")
        if self.label not in ("real", "fake"):
            raise ValueError(f"unknown label {self.label!r}")
        self.tensor = t

    @property
    def channels(self) -> int:
        return self.tensor.shape[0]


def normalize_branch(image: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """uint8 HxWx3 -> float32 3xSxS: p/255 then (x - mean)/std per channel.

    The image must already be at the spec's input side; resizing belongs in
    the 8-bit domain, before this call.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    if image.shape[0] != spec.input_side or image.shape[1] != spec.input_side:
        raise ValueError(
            f"image is {image.shape[:2]} but spec wants {spec.input_side}; "
            "resize in the 8-bit domain before normalizing")
    x = image.astype(np.float32) / 255.0
    mean = np.asarray(spec.mean, dtype=np.float32)
    std = np.asarray(spec.std, dtype=np.float32)
    return ((x - mean) / std).transpose(2, 0, 1)


def fuse(rgb: np.ndarray, gsd: np.ndarray, label: str = "real",
         provenance=("", 0, "none")) -> FusedSample:
    """Concatenate normalized branches, RGB channels first."""
    rgb = np.asarray(rgb, dtype=np.float32)
    gsd = np.asarray(gsd, dtype=np.float32)
    if rgb.shape != gsd.shape:
        raise ValueError(f"branch shapes differ: {rgb.shape} vs {gsd.shape}")
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"branches must be 3xSxS, got {rgb.shape}")
    return FusedSample(np.concatenate([rgb, gsd], axis=0), label, tuple(provenance))


def split_fused(sample: FusedSample) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of fuse: recover (rgb, gsd) branch tensors."""
    if sample.channels != 6:
        raise ValueError(f"not a fused sample ({sample.channels} channels)")
    return sample.tensor[:3].copy(), sample.tensor[3:].copy()


@dataclass
class AdaptedFirstLayer:
    weights: np.ndarray  # (O, 6, K, K)
    bias: np.ndarray | None = None  # carried through unchanged


def adapt_first_layer(pretrained: np.ndarray, bias=None) -> AdaptedFirstLayer:
    """Extend pretrained OxIxKxK first-conv weights from 3 to 6 input channels.

    Channels 0-2 are the pretrained weights bit-for-bit; channels 3-5 each
    get the arithmetic mean of the pretrained channels, per output filter
    and spatial tap. A non-3-channel input is rejected, which also makes
    adapting twice impossible.
    """
    weights = np.asarray(pretrained)
    if weights.ndim != 4 or weights.shape[1] != 3:
        raise ValueError(f"expected Ox3xKxK weights, got shape {weights.shape}")
    mean = weights.mean(axis=1, keepdims=True)
    adapted = np.concatenate([weights, np.repeat(mean, 3, axis=1)], axis=1)
    return AdaptedFirstLayer(adapted, None if bias is None else np.asarray(bias))


def resize_for_arch(sample: FusedSample, arch: str) -> FusedSample:
    """Bilinear-resize all channels to the architecture's input side.

    No-op when the sizes already match. This operates on normalized tensors;
    the canonical pipeline resizes 8-bit images before normalization instead
    and only falls back to this when given pre-fused tensors.
    """
    from .backbones import get_backbone  # lazy: backbones imports this module

    side = get_backbone(arch).input_side
    if sample.tensor.shape[1] == side and sample.tensor.shape[2] == side:
        return sample
    hwc = sample.tensor.transpose(1, 2, 0)
    resized = cv2.resize(hwc, (side, side), interpolation=cv2.INTER_LINEAR)
    return FusedSample(resized.transpose(2, 0, 1), sample.label, sample.provenance)


def resize_image(image: np.ndarray, side: int) -> np.ndarray:
    """8-bit bilinear resize used ahead of normalization; no-op if sized."""
    image = np.asarray(image)
    if image.shape[0] == side and image.shape[1] == side:
        return image
    return cv2.resize(image, (side, side), interpolation=cv2.INTER_LINEAR)


def build_fused_sample(rgb_image, gsd_image, input_mode: str,
                       rgb_spec: NormalizationSpec, gsd_spec: NormalizationSpec | None = None,
                       label: str = "real", provenance=("", 0, "none")) -> FusedSample:
    """Pipeline path from 8-bit branch images to a training-ready sample.

    Enforces the resize-then-normalize ordering. ``gsd_spec`` defaults to the
    architecture's RGB constants: the encoded descriptor is an 8-bit
    RGB-like image by construction, and no descriptor-specific statistics
    are established (the spec stays overridable for that reason).
    """
    if input_mode not in MODE_CHANNELS:
        raise ValueError(f"unknown input mode {input_mode!r}")
    gsd_spec = gsd_spec or rgb_spec
    provenance = tuple(provenance)
    if input_mode == "rgb":
        branch = normalize_branch(resize_image(rgb_image, rgb_spec.input_side), rgb_spec)
        return FusedSample(branch, label, provenance)
    if input_mode == "gsd":
        branch = normalize_branch(resize_image(gsd_image, gsd_spec.input_side), gsd_spec)
        return FusedSample(branch, label, provenance)
    rgb = normalize_branch(resize_image(rgb_image, rgb_spec.input_side), rgb_spec)
    gsd = normalize_branch(resize_image(gsd_image, gsd_spec.input_side), gsd_spec)
    return fuse(rgb, gsd, label, provenance)
