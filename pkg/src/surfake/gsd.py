"""The global surface descriptor: estimation, 8-bit image codec, log view.

The descriptor is a per-pixel unit 3-vector describing scene surface
orientation in a gravity-aligned (up-right) world frame, extracted from a
face crop by a normal-estimator backend. Backends are pluggable: a
serialized-model adapter for a pretrained estimator, and an analytic
synthetic renderer (see `surfake.synthetic`) for everything desk-scale.

The 8-bit codec is pinned exactly so encoded maps are comparable across
machines and implementations:

    encode: p = clamp(round_half_away_from_zero((v + 1) * 127.5), 0, 255)
    decode: v = p / 127.5 - 1
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import GsdBackendError

log = logging.getLogger(__name__)

GSD_SIZE = 224
ESTIMATOR_HEIGHT = 288
ESTIMATOR_WIDTH = 384
NORM_TOL = 1e-3
ENCODE_SLACK = 1e-3  # |v| up to 1 + this is clamped with a warning, beyond it is an error


@dataclass
class SurfaceFrame:
    """Per-pixel orthonormal surface frame: normal, tangent, bitangent."""

    normal: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray

    def validate(self, norm_tol: float = 1e-4, ortho_tol: float = 1e-3) -> None:
        for name, vec in (("normal", self.normal), ("tangent", self.tangent),
                          ("bitangent", self.bitangent)):
            norms = np.linalg.norm(vec, axis=-1)
            err = np.abs(norms - 1.0).max()
            if err > norm_tol:
                raise ValueError(f"{name} norms off unit by {err:.2e} (> {norm_tol})")
        for a, b, pair in ((self.normal, self.tangent, "n.t"),
                           (self.normal, self.bitangent, "n.b"),
                           (self.tangent, self.bitangent, "t.b")):
            dots = np.abs(np.sum(a * b, axis=-1)).max()
            if dots > ortho_tol:
                raise ValueError(f"{pair} dot magnitude {dots:.2e} (> {ortho_tol})")


@dataclass
class GSDMap:
    """Per-pixel unit-vector field plus the id of the backend that made it."""

    field: np.ndarray  # HxWx3 float
    backend_id: str = ""

    @property
    def resolution(self) -> tuple[int, int]:
        return self.field.shape[0], self.field.shape[1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.field, axis=-1)

    def validate_norms(self, tol: float = NORM_TOL) -> None:
        norms = self.norms()
        err = np.abs(norms - 1.0).max()
        if err > tol:
            raise ValueError(f"per-pixel norms off unit by {err:.2e} (> {tol})")


@dataclass
class EncodedGSD:
    image: np.ndarray  # HxWx3 uint8

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ValueError(f"encoded map must be HxWx3 uint8, got {img.shape} {img.dtype}")
        self.image = img


def round_half_away_from_zero(x: np.ndarray) -> np.ndarray:
    """Ties round away from zero (numpy's default rounds half to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def encode_gsd(gsd: GSDMap) -> EncodedGSD:
    """Map unit-vector components from [-1, 1] onto 8-bit pixels.

    Components up to 1e-3 outside [-1, 1] (resampling slop) are clamped with
    a warning; anything further out is a non-unit input and an error.
    """
    v = np.asarray(gsd.field, dtype=np.float64)
    if v.ndim != 3 or v.shape[2] != 3:
        raise ValueError(f"descriptor field must be HxWx3, got {v.shape}")
    amax = np.abs(v).max()
    if amax > 1.0 + ENCODE_SLACK:
        raise ValueError(f"component magnitude {amax:.6f} exceeds 1 + {ENCODE_SLACK}")
    if amax > 1.0:
        log.warning("clamping descriptor components (max magnitude %.6f)", amax)
        v = np.clip(v, -1.0, 1.0)
    pixels = np.clip(round_half_away_from_zero((v + 1.0) * 127.5), 0, 255)
    return EncodedGSD(pixels.astype(np.uint8))


def decode_gsd(image) -> GSDMap:
    """Inverse of the fixed affine scaling; no renormalization."""
    if isinstance(image, EncodedGSD):
        image = image.image
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected a 3-channel image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"expected 8-bit pixels, got {image.dtype}")
    field = image.astype(np.float64) / 127.5 - 1.0
    return GSDMap(field, backend_id="decoded")


def estimate_gsd(crop, backend, out_size: int = GSD_SIZE) -> GSDMap:
    """Run the estimator backend on a face crop and return a unit-vector map.

    The crop is resized (bilinear) to the estimator's 288x384 working
    resolution, the backend produces the global up-vector field at that
    resolution, and the field is resized back and renormalized per pixel
    (bilinear blending breaks unit norm).
    """
    image = crop.image if hasattr(crop, "image") else np.asarray(crop)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"crop must be HxWx3, got shape {image.shape}")
    if image.shape[:2] != (GSD_SIZE, GSD_SIZE):
        raise ValueError(f"crop must be {GSD_SIZE}x{GSD_SIZE}, got {image.shape[:2]}")
    backend_id = getattr(backend, "backend_id", str(backend))

    upscaled = cv2.resize(image, (ESTIMATOR_WIDTH, ESTIMATOR_HEIGHT),
                          interpolation=cv2.INTER_LINEAR)
    try:
        field = backend.infer(upscaled)
    except GsdBackendError:
        raise
    except Exception as exc:
        raise GsdBackendError(f"inference failed: {exc}", backend_id) from exc

    field = np.asarray(field, dtype=np.float32)
    if field.shape != (ESTIMATOR_HEIGHT, ESTIMATOR_WIDTH, 3):
        raise GsdBackendError(
            f"backend returned shape {field.shape}, "
            f"expected {(ESTIMATOR_HEIGHT, ESTIMATOR_WIDTH, 3)}", backend_id)
    if not np.isfinite(field).all():
        raise GsdBackendError("backend produced non-finite values", backend_id)

    small = cv2.resize(field, (out_size, out_size), interpolation=cv2.INTER_LINEAR)
    norms = np.linalg.norm(small, axis=-1, keepdims=True)
    if (norms < 1e-3).any():
        raise GsdBackendError("vectors vanished during resize; cannot renormalize", backend_id)
    return GSDMap((small / norms).astype(np.float64), backend_id=backend_id)


class PretrainedEstimator:
    """Adapter around a serialized (TorchScript) surface-descriptor model.

    The model is expected to take a normalized 1x3xHxW float tensor and
    return the up-vector field as a tensor shaped 1x3xHxW, 3xHxW or HxWx3
    (or a dict/tuple from which ``output_key`` selects it). Weights are an
    external dependency and are never bundled with this package.
    """

    def __init__(self, model_path, device: str = "cpu",
                 input_mean=(0.5, 0.5, 0.5), input_std=(0.5, 0.5, 0.5),
                 output_key=None):
        import torch

        self.backend_id = f"pretrained:{model_path}"
        self._device = device
        self._mean = np.asarray(input_mean, dtype=np.float32)
        self._std = np.asarray(input_std, dtype=np.float32)
        self._output_key = output_key
        self._torch = torch
        try:
            self._model = torch.jit.load(str(model_path), map_location=device)
            self._model.eval()
        except Exception as exc:
            raise GsdBackendError(f"failed to load model: {exc}", self.backend_id) from exc

    def _select_output(self, out):
        if self._output_key is not None and isinstance(out, dict):
            out = out[self._output_key]
        elif isinstance(out, (tuple, list)):
            out = out[0 if self._output_key is None else self._output_key]
        return out

    def infer(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = image.astype(np.float32) / 255.0
        x = (x - self._mean) / self._std
        tensor = torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))[None].to(self._device)
        try:
            with torch.no_grad():
                out = self._select_output(self._model(tensor))
        except Exception as exc:
            raise GsdBackendError(f"inference failed: {exc}", self.backend_id) from exc
        arr = out.detach().cpu().numpy()
        arr = np.squeeze(arr)
        if arr.ndim != 3:
            raise GsdBackendError(f"unexpected output shape {arr.shape}", self.backend_id)
        if arr.shape[0] == 3 and arr.shape[2] != 3:
            arr = arr.transpose(1, 2, 0)
        return arr


def log_visualize(gsd: GSDMap, epsilon: float = 1e-3) -> np.ndarray:
    """Anomaly view: log of the first encoded channel, min-max mapped to 8 bits.

    Returns a single-channel HxW uint8 image; a constant input maps to
    mid-gray 128. Use `render_colormap` to turn it into the fixed-palette
    RGB rendering written by the viz stage.
    """
    u = encode_gsd(gsd).image[:, :, 0].astype(np.float64)
    levels = np.log(u / 255.0 + epsilon)
    lo, hi = float(levels.min()), float(levels.max())
    if hi - lo < 1e-12:
        return np.full(u.shape, 128, dtype=np.uint8)
    scaled = (levels - lo) / (hi - lo) * 255.0
    return np.clip(round_half_away_from_zero(scaled), 0, 255).astype(np.uint8)


def render_colormap(gray: np.ndarray, colormap: str = "viridis") -> np.ndarray:
    """Apply the fixed color map to a single-channel uint8 image (-> HxWx3)."""
    import matplotlib

    cmap = matplotlib.colormaps[colormap]
    rgba = cmap(np.asarray(gray, dtype=np.float64) / 255.0)
    return (rgba[..., :3] * 255.0 + 0.5).astype(np.uint8)


# --- persistence -----------------------------------------------------------

RAW_MAGIC = b"GSD1"


def save_encoded_gsd(encoded: EncodedGSD, out_dir, video_id: str, frame_index: int) -> Path:
    """Write `<video_id>_<frame_index>_gsd.png` (bit-exact per the codec)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{video_id}_{frame_index}_gsd.png"
    Image.fromarray(encoded.image).save(path)
    return path


def load_encoded_gsd(path) -> EncodedGSD:
    with Image.open(path) as img:
        return EncodedGSD(np.asarray(img.convert("RGB")))


def save_gsd_raw(gsd: GSDMap, path) -> None:
    """Raw sidecar: `GSD1` + u32 height + u32 width + HxWx3 little-endian f32."""
    h, w = gsd.resolution
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(gsd.field, dtype="<f4").tobytes())


def load_gsd_raw(path) -> GSDMap:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RAW_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        h, w = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(h * w * 3 * 4), dtype="<f4")
    if data.size != h * w * 3:
        raise ValueError(f"truncated raw descriptor file: {path}")
    return GSDMap(data.reshape(h, w, 3).astype(np.float64), backend_id="raw")
