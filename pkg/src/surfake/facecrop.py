"""Face detection and extraction of the enlarged fixed-resolution crop.

The crop geometry is: take the detected box, grow it to a square of side
1.3 * max(width, height) around the same center, clamp to the frame, then
resample to 224x224 with bilinear interpolation. Detection itself is a
pluggable backend; a deterministic centered-box fallback exists so the rest
of the pipeline can be exercised without any detector model.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import DetectorError

log = logging.getLogger(__name__)

CROP_SIZE = 224
ENLARGE_FACTOR = 1.3


@dataclass(frozen=True)
class FaceBox:
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {(self.x0, self.y0, self.x1, self.y1)}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0


@dataclass
class CropGeometry:
    box: FaceBox
    enlarged: tuple[float, float, float, float]  # clamped square region actually cropped
    factor: float


@dataclass
class FaceCrop:
    image: np.ndarray  # out_size x out_size x 3 uint8
    source: tuple[str, int]  # (video_id, frame_index)
    geometry: CropGeometry


class CenteredBoxDetector:
    """Deterministic fallback: a centered square covering 60% of the frame's
    smaller dimension. Test and plumbing use only; it does not look at pixels.
    """

    backend_id = "fallback-centered"

    def detect(self, frame: np.ndarray) -> list[FaceBox]:
        h, w = frame.shape[:2]
        side = 0.6 * min(h, w)
        cx, cy = w / 2.0, h / 2.0
        return [FaceBox(cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2, 1.0)]


class CascadeDetector:
    """OpenCV Haar-cascade backend; the cascade XML is supplied by the user."""

    def __init__(self, cascade_path):
        cascade_path = Path(cascade_path)
        self.backend_id = f"cascade:{cascade_path.name}"
        if not cascade_path.is_file():
            raise DetectorError(f"cascade file not found: {cascade_path}")
        self._cascade = cv2.CascadeClassifier(str(cascade_path))
        if self._cascade.empty():
            raise DetectorError(f"could not load cascade: {cascade_path}")

    def detect(self, frame: np.ndarray) -> list[FaceBox]:
        gray = cv2.cvtColor(frame, cv2.COLOR_RGB2GRAY)
        rects = self._cascade.detectMultiScale(gray, scaleFactor=1.1, minNeighbors=5)
        # Haar cascades carry no calibrated score; selection downstream is by area.
        return [FaceBox(float(x), float(y), float(x + w), float(y + h), 1.0)
                for (x, y, w, h) in rects]


def _clamp_box(box: FaceBox, width: int, height: int) -> FaceBox | None:
    x0 = max(0.0, min(box.x0, float(width)))
    x1 = max(0.0, min(box.x1, float(width)))
    y0 = max(0.0, min(box.y0, float(height)))
    y1 = max(0.0, min(box.y1, float(height)))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return FaceBox(x0, y0, x1, y1, box.confidence)


def detect_face(frame: np.ndarray, detector) -> FaceBox | None:
    """Run the detector and return the largest-area face box, or None.

    FF++ videos are single-subject, so among multiple detections the largest
    face is the subject. Backend failures raise DetectorError, which is
    distinct from a clean "no face" (None).
    """
    frame = np.asarray(frame)
    if frame.size == 0:
        raise ValueError("empty frame")
    try:
        candidates = detector.detect(frame)
    except DetectorError:
        raise
    except Exception as exc:
        raise DetectorError(f"{getattr(detector, 'backend_id', detector)}: {exc}") from exc
    h, w = frame.shape[:2]
    clamped = [b for b in (_clamp_box(c, w, h) for c in candidates) if b is not None]
    if not clamped:
        return None
    return max(clamped, key=lambda b: (b.area, -b.x0, -b.y0))


def compute_enlarged_box(box: FaceBox, factor: float, frame_w: int, frame_h: int):
    """Square of side factor*max(w, h) about the box center, clamped to the frame."""
    side = factor * max(box.width, box.height)
    cx, cy = box.center
    x0 = max(0.0, cx - side / 2.0)
    y0 = max(0.0, cy - side / 2.0)
    x1 = min(float(frame_w), cx + side / 2.0)
    y1 = min(float(frame_h), cy + side / 2.0)
    return (x0, y0, x1, y1)


def enlarge_and_crop(frame: np.ndarray, box: FaceBox, factor: float = ENLARGE_FACTOR,
                     out_size: int = CROP_SIZE, source: tuple[str, int] = ("", 0)) -> FaceCrop:
    """Extract the enlarged square crop and resample it to out_size x out_size."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if out_size < 1:
        raise ValueError(f"out_size must be >= 1, got {out_size}")
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    enlarged = compute_enlarged_box(box, factor, w, h)
    xi0, yi0 = int(math.floor(enlarged[0])), int(math.floor(enlarged[1]))
    xi1, yi1 = int(math.ceil(enlarged[2])), int(math.ceil(enlarged[3]))
    if xi1 - xi0 <= 0 or yi1 - yi0 <= 0:
        raise ValueError(f"clamped crop region is degenerate: {enlarged}")
    region = frame[yi0:yi1, xi0:xi1]
    resized = cv2.resize(region, (out_size, out_size), interpolation=cv2.INTER_LINEAR)
    return FaceCrop(resized, source, CropGeometry(box, enlarged, factor))


# --- persistence -----------------------------------------------------------

def crop_basename(video_id: str, frame_index: int) -> str:
    return f"{video_id}_{frame_index}"


def save_crop(crop: FaceCrop, out_dir) -> Path:
    """Write `<video_id>_<frame_index>_rgb.png` plus a geometry sidecar JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = crop_basename(*crop.source)
    img_path = out_dir / f"{base}_rgb.png"
    Image.fromarray(crop.image).save(img_path)
    geom = {
        "box": [crop.geometry.box.x0, crop.geometry.box.y0,
                crop.geometry.box.x1, crop.geometry.box.y1],
        "confidence": crop.geometry.box.confidence,
        "enlarged": list(crop.geometry.enlarged),
        "factor": crop.geometry.factor,
        "source": list(crop.source),
    }
    (out_dir / f"{base}_geom.json").write_text(json.dumps(geom, sort_keys=True))
    return img_path


def load_crop_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))
