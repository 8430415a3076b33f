import cv2
import numpy as np
import pytest


def write_video(path, n_frames: int, size=(64, 64), seed: int = 0) -> None:
    """Small deterministic test video: a drifting bright disc on a dim texture."""
    h, w = size
    path.parent.mkdir(parents=True, exist_ok=True)
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), 25, (w, h))
    assert writer.isOpened(), f"cannot open video writer for {path}"
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 60, size=(h, w, 3), dtype=np.uint8)
    for i in range(n_frames):
        frame = base.copy()
        cx = 5 + int((i / max(1, n_frames - 1)) * (w - 11))
        cv2.circle(frame, (cx, h // 2), min(h, w) // 4, (200, 180, 160), -1)
        writer.write(frame)
    writer.release()


@pytest.fixture
def ffpp_tree(tmp_path):
    """FF++-shaped fixture: reals '000','001' and DF fakes '000_003','001_004'."""
    root = tmp_path / "ffpp"
    for i, vid in enumerate(("000", "001")):
        write_video(root / "original_sequences/youtube/c23/videos" / f"{vid}.mp4",
                    25, seed=i)
    for i, stem in enumerate(("000_003", "001_004")):
        write_video(root / "manipulated_sequences/Deepfakes/c23/videos" / f"{stem}.mp4",
                    25, seed=10 + i)
    return root


@pytest.fixture
def ffpp_tree_5(tmp_path):
    """Pipeline-sized fixture: 5 reals plus one DF fake per real."""
    root = tmp_path / "ffpp5"
    for i in range(5):
        write_video(root / "original_sequences/youtube/c23/videos" / f"{i:03d}.mp4",
                    25, size=(48, 48), seed=i)
        write_video(root / "manipulated_sequences/Deepfakes/c23/videos" / f"{i:03d}_{i + 5:03d}.mp4",
                    25, size=(48, 48), seed=100 + i)
    return root
