"""Dataset discovery, frame sampling and leakage-free train/val/test splits.

The reference on-disk layout is FaceForensics++: 1000 pristine videos plus
five forged versions of each, where a fake's filename stem encodes the id of
the pristine source video ("000_003" was generated from "000"). Splits are
computed over the real videos only and fakes inherit the split of their
source, which is the only assignment that avoids identity leakage between
train and test.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

from .errors import MissingArtifactError, SurfakeError

log = logging.getLogger(__name__)

LABELS = ("real", "fake")
FORGERIES = ("none", "DF", "F2F", "FSH", "FS", "NT")
SPLIT_NAMES = ("train", "val", "test")
SPLIT_RATIOS = (0.72, 0.14, 0.14)
VIDEO_EXTS = (".mp4", ".avi", ".mov", ".mkv")


@dataclass
class VideoRecord:
    video_id: str
    path: Path
    label: str
    forgery: str
    source_video_id: str
    compression: str = ""  # c23/c40/raw; recorded, never enforced

    def __post_init__(self):
        self.path = Path(self.path)
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.forgery not in FORGERIES:
            raise ValueError(f"unknown forgery {self.forgery!r}")
        if (self.label == "real") != (self.forgery == "none"):
            raise ValueError(
                f"{self.video_id}: label {self.label!r} inconsistent with forgery {self.forgery!r}"
            )
        if self.label == "real" and self.source_video_id != self.video_id:
            raise ValueError(f"{self.video_id}: real record must be its own source")


@dataclass
class DatasetManifest:
    records: list[VideoRecord]
    root: Path
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    rejects: int = 0

    def __post_init__(self):
        self.root = Path(self.root)
        self.records = sorted(self.records, key=lambda r: (r.forgery, r.video_id))
        seen = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise ValueError(f"duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
        real_ids = {r.video_id for r in self.records if r.label == "real"}
        for rec in self.records:
            if rec.label == "fake" and rec.source_video_id not in real_ids:
                raise ValueError(
                    f"fake {rec.video_id!r} references unknown source {rec.source_video_id!r}"
                )

    def real_ids(self) -> list[str]:
        return [r.video_id for r in self.records if r.label == "real"]

    def by_id(self, video_id: str) -> VideoRecord:
        for rec in self.records:
            if rec.video_id == video_id:
                return rec
        raise KeyError(video_id)


@dataclass
class SplitManifest:
    seed: int
    assignment: dict[str, str]
    ratios: tuple[float, float, float] = SPLIT_RATIOS

    def __post_init__(self):
        for vid, split in self.assignment.items():
            if split not in SPLIT_NAMES:
                raise ValueError(f"{vid}: unknown split {split!r}")

    def ids(self, split: str) -> list[str]:
        return sorted(v for v, s in self.assignment.items() if s == split)


@dataclass
class FrameRef:
    video_id: str
    frame_index: int
    image: np.ndarray  # HxWx3 uint8, RGB


@dataclass(frozen=True)
class LayoutSpec:
    """Directory patterns for originals and each forgery under a dataset root.

    ``source_id_pattern`` is a regex whose first group captures the pristine
    source id from a fake video's filename stem.
    """

    originals: str
    forgeries: dict[str, str]
    source_id_pattern: str = r"^([^_]+)_"


FFPP_LAYOUT = LayoutSpec(
    originals="original_sequences/youtube/{compression}/videos",
    forgeries={
        "DF": "manipulated_sequences/Deepfakes/{compression}/videos",
        "F2F": "manipulated_sequences/Face2Face/{compression}/videos",
        "FSH": "manipulated_sequences/FaceShifter/{compression}/videos",
        "FS": "manipulated_sequences/FaceSwap/{compression}/videos",
        "NT": "manipulated_sequences/NeuralTextures/{compression}/videos",
    },
)

LAYOUTS = {"ffpp": FFPP_LAYOUT}


def _list_videos(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in VIDEO_EXTS)


def scan_dataset(root, layout="ffpp", compression: str = "c23") -> DatasetManifest:
    """Discover videos under ``root`` and build a manifest.

    Real video ids are filename stems. Fake ids are prefixed with their
    forgery code (``DF_000_003``) since FF++ reuses the same pair stems across
    manipulation methods. Fakes whose source id cannot be resolved to a real
    record are rejected with a warning and counted in ``manifest.rejects``.
    """
    import re

    root = Path(root)
    if not root.is_dir():
        raise MissingArtifactError(f"dataset root does not exist: {root}", [str(root)])
    if isinstance(layout, str):
        try:
            layout = LAYOUTS[layout]
        except KeyError:
            raise ValueError(f"unknown layout {layout!r}; known: {sorted(LAYOUTS)}") from None

    records = []
    originals_dir = root / layout.originals.format(compression=compression)
    real_ids = set()
    for path in _list_videos(originals_dir):
        vid = path.stem
        real_ids.add(vid)
        records.append(
            VideoRecord(vid, path.resolve(), "real", "none", vid, compression)
        )

    source_re = re.compile(layout.source_id_pattern)
    rejects = 0
    for forgery, pattern in sorted(layout.forgeries.items()):
        for path in _list_videos(root / pattern.format(compression=compression)):
            match = source_re.match(path.stem)
            source = match.group(1) if match else None
            if source is None or source not in real_ids:
                log.warning(
                    "rejecting fake %s (%s): source id %r not among the %d reals",
                    path.stem, forgery, source, len(real_ids),
                )
                rejects += 1
                continue
            records.append(
                VideoRecord(
                    f"{forgery}_{path.stem}", path.resolve(), "fake", forgery, source, compression
                )
            )

    manifest = DatasetManifest(records, root=root.resolve(), rejects=rejects)
    log.info("scanned %s: %d records, %d rejects", root, len(manifest.records), rejects)
    return manifest


def sample_frames(video, stride: int = 10) -> Iterator[FrameRef]:
    """Decode ``video`` and yield every ``stride``-th frame starting at index 0.

    Frames come out as RGB uint8. A video that cannot be opened raises
    immediately; a decode failure mid-stream truncates the sequence with a
    warning (the remaining frames are unrecoverable either way).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    video = Path(video)
    cap = cv2.VideoCapture(str(video))
    if not cap.isOpened():
        cap.release()
        raise SurfakeError(f"cannot decode video: {video}")
    reported = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))

    def _frames():
        video_id = video.stem
        index = 0
        try:
            while True:
                ok, frame = cap.read()
                if not ok:
                    break
                if index % stride == 0:
                    yield FrameRef(video_id, index, cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
                index += 1
        finally:
            cap.release()
        if index == 0:
            raise SurfakeError(f"no decodable frames in video: {video}")
        if 0 < index < reported:
            log.warning(
                "decode of %s truncated at frame %d (container reported %d)",
                video, index, reported,
            )

    return _frames()


def make_splits(manifest: DatasetManifest, seed: int, official_dir=None) -> SplitManifest:
    """Assign every video to train/val/test.

    Real videos are shuffled by a seeded PRNG and partitioned
    floor(0.72 N) / floor(0.14 N) / remainder; every fake inherits the split
    of its source video. When ``official_dir`` holds the dataset's published
    split files (train/val/test.json) those take precedence over the seeded
    shuffle.
    """
    reals = sorted(manifest.real_ids())
    if official_dir is not None:
        assignment = _load_official_assignment(Path(official_dir), reals)
    else:
        if len(reals) < 3:
            raise ValueError(f"need at least 3 real videos to split, got {len(reals)}")
        shuffled = list(reals)
        random.Random(seed).shuffle(shuffled)
        n = len(shuffled)
        n_train = math.floor(SPLIT_RATIOS[0] * n)
        n_val = math.floor(SPLIT_RATIOS[1] * n)
        assignment = {}
        for i, vid in enumerate(shuffled):
            if i < n_train:
                assignment[vid] = "train"
            elif i < n_train + n_val:
                assignment[vid] = "val"
            else:
                assignment[vid] = "test"

    for rec in manifest.records:
        if rec.label == "fake":
            if rec.source_video_id not in assignment:
                raise SurfakeError(
                    f"fake {rec.video_id!r}: source {rec.source_video_id!r} has no split "
                    "assignment (manifest integrity violation)"
                )
            assignment[rec.video_id] = assignment[rec.source_video_id]
    return SplitManifest(seed=seed, assignment=assignment)


def _load_official_assignment(official_dir: Path, reals: list[str]) -> dict[str, str]:
    """Read FF++-style official split files: each is a list of id pairs or ids."""
    assignment = {}
    for split in SPLIT_NAMES:
        path = official_dir / f"{split}.json"
        if not path.is_file():
            raise MissingArtifactError(f"official split file missing: {path}", [str(path)])
        entries = json.loads(path.read_text())
        for entry in entries:
            ids = entry if isinstance(entry, list) else [entry]
            for vid in ids:
                vid = str(vid)
                if vid in assignment and assignment[vid] != split:
                    raise SurfakeError(f"official splits assign {vid!r} twice")
                assignment[vid] = split
    missing = [vid for vid in reals if vid not in assignment]
    if missing:
        raise SurfakeError(
            f"official splits do not cover {len(missing)} real videos (first: {missing[:5]})"
        )
    return {vid: assignment[vid] for vid in reals}


# --- persistence -----------------------------------------------------------

def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write the manifest as JSON Lines, one record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in manifest.records:
            fh.write(json.dumps({
                "video_id": rec.video_id,
                "path": str(rec.path),
                "label": rec.label,
                "forgery": rec.forgery,
                "source_video_id": rec.source_video_id,
                "compression": rec.compression,
            }, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"manifest not found: {path}", [str(path)])
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            records.append(VideoRecord(
                video_id=raw["video_id"],
                path=Path(raw["path"]),
                label=raw["label"],
                forgery=raw["forgery"],
                source_video_id=raw["source_video_id"],
                compression=raw.get("compression", ""),
            ))
    if records:
        import os
        root = Path(os.path.commonpath([str(r.path.parent) for r in records]))
    else:
        root = path.parent
    created = datetime.fromtimestamp(path.stat().st_mtime, timezone.utc)
    return DatasetManifest(records, root=root, created_at=created)


def save_split(split: SplitManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"seed": split.seed, "ratios": list(split.ratios), "assignment": split.assignment}
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_split(path) -> SplitManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"split file not found: {path}", [str(path)])
    raw = json.loads(path.read_text())
    return SplitManifest(seed=raw["seed"], assignment=raw["assignment"], ratios=tuple(raw["ratios"]))
