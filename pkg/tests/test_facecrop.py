import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfake.errors import DetectorError
from surfake.facecrop import (
    CascadeDetector,
    CenteredBoxDetector,
    FaceBox,
    compute_enlarged_box,
    detect_face,
    enlarge_and_crop,
    load_crop_image,
    save_crop,
)

from oracles import bilinear_resize


class StubDetector:
    backend_id = "stub"

    def __init__(self, boxes):
        self.boxes = boxes

    def detect(self, frame):
        return self.boxes


class FailingDetector:
    backend_id = "failing"

    def detect(self, frame):
        raise RuntimeError("backend exploded")


def gradient_frame(h=400, w=400, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


# --- geometry -------------------------------------------------------------------

def test_enlarge_centered_box():
    frame = gradient_frame()
    crop = enlarge_and_crop(frame, FaceBox(100, 100, 200, 200))
    assert crop.geometry.enlarged == (85.0, 85.0, 215.0, 215.0)
    assert crop.image.shape == (224, 224, 3)
    assert crop.geometry.factor == 1.3


def test_enlarge_clamps_at_edge():
    frame = gradient_frame()
    crop = enlarge_and_crop(frame, FaceBox(0, 0, 100, 100))
    assert crop.geometry.enlarged == (0.0, 0.0, 115.0, 115.0)
    assert crop.image.shape == (224, 224, 3)


def test_enlarged_center_preserved_before_clamp():
    box = FaceBox(120, 80, 180, 160)  # non-square: side = 1.3 * max(60, 80) = 104
    x0, y0, x1, y1 = compute_enlarged_box(box, 1.3, 4000, 4000)
    assert (x0 + x1) / 2 == pytest.approx(150.0)
    assert (y0 + y1) / 2 == pytest.approx(120.0)
    assert x1 - x0 == pytest.approx(104.0)
    assert y1 - y0 == pytest.approx(104.0)


def test_geometry_idempotent():
    frame = gradient_frame()
    box = FaceBox(37.5, 12.25, 181.0, 164.75, 0.8)
    crop = enlarge_and_crop(frame, box)
    again = compute_enlarged_box(crop.geometry.box, crop.geometry.factor, 400, 400)
    assert again == crop.geometry.enlarged


def test_enlarge_validates_args():
    frame = gradient_frame()
    with pytest.raises(ValueError):
        enlarge_and_crop(frame, FaceBox(0, 0, 10, 10), factor=0.5)
    with pytest.raises(ValueError):
        enlarge_and_crop(frame, FaceBox(0, 0, 10, 10), out_size=0)


def test_box_invariants():
    with pytest.raises(ValueError):
        FaceBox(10, 10, 10, 20)
    with pytest.raises(ValueError):
        FaceBox(0, 0, 5, 5, confidence=1.5)


@settings(max_examples=40, deadline=None)
@given(x0=st.floats(0, 300), y0=st.floats(0, 300),
       w=st.floats(5, 99), h=st.floats(5, 99),
       out_size=st.sampled_from([64, 128, 224]))
def test_output_size_invariant(x0, y0, w, h, out_size):
    frame = gradient_frame(420, 420, seed=1)
    crop = enlarge_and_crop(frame, FaceBox(x0, y0, x0 + w, y0 + h), out_size=out_size)
    assert crop.image.shape == (out_size, out_size, 3)


def test_resize_matches_independent_bilinear_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        h, w = rng.integers(40, 200, size=2)
        frame = rng.integers(0, 256, size=(int(h), int(w), 3), dtype=np.uint8)
        x0, y0 = rng.integers(0, 10, size=2)
        x1 = int(x0) + int(rng.integers(20, w - x0 - 1))
        y1 = int(y0) + int(rng.integers(20, h - y0 - 1))
        crop = enlarge_and_crop(frame, FaceBox(float(x0), float(y0), float(x1), float(y1)),
                                out_size=96)
        ex0, ey0, ex1, ey1 = crop.geometry.enlarged
        region = frame[int(np.floor(ey0)):int(np.ceil(ey1)),
                       int(np.floor(ex0)):int(np.ceil(ex1))]
        want = bilinear_resize(region, 96, 96)
        diff = np.abs(crop.image.astype(np.float64) - want)
        assert diff.max() <= 1.0 + 1e-9, diff.max()


# --- detection -------------------------------------------------------------------

def test_fallback_detector_centered_square():
    frame = np.full((100, 200, 3), 128, dtype=np.uint8)
    box = detect_face(frame, CenteredBoxDetector())
    assert box is not None
    # 60% of min dimension (100) -> 60 px square centered at (100, 50)
    assert (box.x0, box.y0, box.x1, box.y1) == (70.0, 20.0, 130.0, 80.0)
    assert box.confidence > 0


def test_largest_area_box_selected():
    # oracle: enumerate candidates, take max area
    candidates = [FaceBox(0, 0, 30, 30, 0.99), FaceBox(50, 50, 100, 100, 0.4)]
    oracle = max(candidates, key=lambda b: b.area)
    got = detect_face(gradient_frame(200, 200), StubDetector(candidates))
    assert (got.x0, got.y0, got.x1, got.y1) == (oracle.x0, oracle.y0, oracle.x1, oracle.y1)
    assert oracle.area == 2500.0


def test_no_face_returns_none():
    assert detect_face(gradient_frame(50, 50), StubDetector([])) is None


def test_backend_failure_is_not_no_face():
    with pytest.raises(DetectorError, match="failing"):
        detect_face(gradient_frame(50, 50), FailingDetector())


def test_empty_frame_rejected():
    with pytest.raises(ValueError):
        detect_face(np.empty((0, 0, 3), dtype=np.uint8), CenteredBoxDetector())


def test_boxes_clamped_to_frame():
    box = detect_face(gradient_frame(50, 50),
                      StubDetector([FaceBox(-10, -10, 40, 40)]))
    assert box.x0 == 0.0 and box.y0 == 0.0


def test_cascade_detector_missing_file(tmp_path):
    with pytest.raises(DetectorError, match="not found"):
        CascadeDetector(tmp_path / "missing.xml")


# --- persistence -------------------------------------------------------------------

def test_save_and_load_crop(tmp_path):
    frame = gradient_frame()
    crop = enlarge_and_crop(frame, FaceBox(100, 100, 200, 200), source=("vid7", 30))
    path = save_crop(crop, tmp_path)
    assert path.name == "vid7_30_rgb.png"
    assert np.array_equal(load_crop_image(path), crop.image)
    geom = json.loads((tmp_path / "vid7_30_geom.json").read_text())
    assert geom["enlarged"] == [85.0, 85.0, 215.0, 215.0]
    assert geom["factor"] == 1.3
    assert geom["source"] == ["vid7", 30]
