import json
from pathlib import Path

import cv2
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfake.errors import MissingArtifactError, SurfakeError
from surfake.ingestion import (
    DatasetManifest,
    VideoRecord,
    load_manifest,
    load_split,
    make_splits,
    sample_frames,
    save_manifest,
    save_split,
    scan_dataset,
)

from conftest import write_video


def synthetic_manifest(n_real, fakes=()):
    """In-memory manifest: fakes is a list of (fake_id, forgery, source_id)."""
    records = [VideoRecord(f"{i:03d}", Path(f"{i:03d}.mp4"), "real", "none", f"{i:03d}")
               for i in range(n_real)]
    records += [VideoRecord(fid, Path(f"{fid}.mp4"), "fake", forgery, src)
                for fid, forgery, src in fakes]
    return DatasetManifest(records, root=Path("mem"))


# --- scan --------------------------------------------------------------------

def test_scan_fixture_tree(ffpp_tree):
    manifest = scan_dataset(ffpp_tree, "ffpp")
    assert len(manifest.records) == 4
    assert manifest.rejects == 0
    fakes = [r for r in manifest.records if r.label == "fake"]
    assert sorted(f.source_video_id for f in fakes) == ["000", "001"]
    assert all(f.forgery == "DF" for f in fakes)
    # deterministic ordering: lexicographic by (forgery, video_id)
    keys = [(r.forgery, r.video_id) for r in manifest.records]
    assert keys == sorted(keys)


def test_scan_empty_root(tmp_path):
    manifest = scan_dataset(tmp_path, "ffpp")
    assert len(manifest.records) == 0
    assert manifest.rejects == 0


def test_scan_missing_root(tmp_path):
    with pytest.raises(MissingArtifactError):
        scan_dataset(tmp_path / "nope", "ffpp")


def test_scan_unknown_layout(tmp_path):
    with pytest.raises(ValueError, match="layout"):
        scan_dataset(tmp_path, "not-a-layout")


def test_scan_rejects_unresolvable_source(ffpp_tree, caplog):
    orphan = ffpp_tree / "manipulated_sequences/Deepfakes/c23/videos/999_888.mp4"
    orphan.write_bytes(b"")
    with caplog.at_level("WARNING"):
        manifest = scan_dataset(ffpp_tree, "ffpp")
    assert manifest.rejects == 1
    assert len(manifest.records) == 4
    assert any("999_888" in message for message in caplog.messages)


def test_scan_full_ffpp_shape(tmp_path):
    # 1000 originals plus 5x1000 fakes; scan only reads names, so empty files do
    root = tmp_path / "big"
    orig = root / "original_sequences/youtube/c23/videos"
    orig.mkdir(parents=True)
    for i in range(1000):
        (orig / f"{i:03d}.mp4").touch()
    methods = ("Deepfakes", "Face2Face", "FaceShifter", "FaceSwap", "NeuralTextures")
    for method in methods:
        mdir = root / "manipulated_sequences" / method / "c23/videos"
        mdir.mkdir(parents=True)
        for i in range(1000):
            (mdir / f"{i:03d}_{(i + 1) % 1000:03d}.mp4").touch()
    manifest = scan_dataset(root, "ffpp")
    assert len(manifest.records) == 6000
    assert manifest.rejects == 0
    assert sum(1 for r in manifest.records if r.label == "real") == 1000


def test_record_invariants():
    with pytest.raises(ValueError):
        VideoRecord("x", Path("x.mp4"), "real", "DF", "x")  # real must be forgery none
    with pytest.raises(ValueError):
        VideoRecord("x", Path("x.mp4"), "fake", "none", "y")
    with pytest.raises(ValueError):
        VideoRecord("x", Path("x.mp4"), "real", "none", "other")  # real is its own source


def test_manifest_rejects_duplicates_and_dangling_sources():
    rec = VideoRecord("a", Path("a.mp4"), "real", "none", "a")
    with pytest.raises(ValueError, match="duplicate"):
        DatasetManifest([rec, rec], root=Path("."))
    fake = VideoRecord("DF_a_b", Path("f.mp4"), "fake", "DF", "missing")
    with pytest.raises(ValueError, match="unknown source"):
        DatasetManifest([rec, fake], root=Path("."))


# --- frame sampling ------------------------------------------------------------

def test_sample_frames_25_stride_10(tmp_path):
    video = tmp_path / "v.mp4"
    write_video(video, 25)
    frames = list(sample_frames(video, 10))
    assert [f.frame_index for f in frames] == [0, 10, 20]
    assert all(f.image.shape == (64, 64, 3) for f in frames)
    assert all(f.video_id == "v" for f in frames)


def test_sample_frames_9_stride_10(tmp_path):
    video = tmp_path / "v.mp4"
    write_video(video, 9)
    assert [f.frame_index for f in sample_frames(video, 10)] == [0]


def test_sample_frames_against_full_decode_oracle(tmp_path):
    video = tmp_path / "v.mp4"
    write_video(video, 100)
    # oracle: decode every frame, then keep the stride-multiples
    cap = cv2.VideoCapture(str(video))
    kept = 0
    index = 0
    while True:
        ok, _ = cap.read()
        if not ok:
            break
        if index % 10 == 0:
            kept += 1
        index += 1
    cap.release()
    assert index == 100
    frames = list(sample_frames(video, 10))
    assert len(frames) == kept == 10


def test_sample_frames_length_formula(tmp_path):
    video = tmp_path / "v.mp4"
    write_video(video, 25)
    for stride in (1, 2, 3, 7, 10, 25, 100):
        got = len(list(sample_frames(video, stride)))
        assert got == (25 - 1) // stride + 1, stride


def test_sample_frames_errors(tmp_path):
    with pytest.raises(ValueError):
        sample_frames(tmp_path / "v.mp4", stride=0)
    bad = tmp_path / "broken.mp4"
    bad.write_bytes(b"this is not a video")
    with pytest.raises(SurfakeError, match="broken"):
        list(sample_frames(bad))


# --- splits ---------------------------------------------------------------------

def test_split_sizes_1000_reals():
    split = make_splits(synthetic_manifest(1000), seed=42)
    counts = {name: sum(1 for s in split.assignment.values() if s == name)
              for name in ("train", "val", "test")}
    assert counts == {"train": 720, "val": 140, "test": 140}


def test_split_sizes_3_reals():
    split = make_splits(synthetic_manifest(3), seed=0)
    counts = [sum(1 for s in split.assignment.values() if s == name)
              for name in ("train", "val", "test")]
    assert counts == [2, 0, 1]


def test_split_requires_3_reals():
    with pytest.raises(ValueError, match="3 real"):
        make_splits(synthetic_manifest(2), seed=0)


def test_split_no_leakage_exhaustive():
    fakes = [(f"DF_{i:03d}_x", "DF", f"{i:03d}") for i in range(10)]
    manifest = synthetic_manifest(10, fakes)
    split = make_splits(manifest, seed=7)
    for rec in manifest.records:
        if rec.label == "fake":
            assert split.assignment[rec.video_id] == split.assignment[rec.source_video_id]


def test_split_determinism_across_runs():
    manifest = synthetic_manifest(50, [("DF_005_x", "DF", "005")])
    baseline = make_splits(manifest, seed=123).assignment
    for _ in range(5):
        assert make_splits(manifest, seed=123).assignment == baseline
    assert make_splits(manifest, seed=124).assignment != baseline


@settings(max_examples=25, deadline=None)
@given(n_real=st.integers(3, 60), seed=st.integers(0, 2**32),
       fake_links=st.lists(st.integers(0, 59), max_size=20))
def test_split_partition_and_leakage_properties(n_real, seed, fake_links):
    import math

    fakes = [(f"NT_{link % n_real:03d}_{j}", "NT", f"{link % n_real:03d}")
             for j, link in enumerate(fake_links)]
    manifest = synthetic_manifest(n_real, fakes)
    split = make_splits(manifest, seed)
    real_ids = set(manifest.real_ids())
    # partition: every real assigned exactly once, splits disjoint by construction
    assert {v for v in split.assignment if v in real_ids} == real_ids
    for fid, _, src in fakes:
        assert split.assignment[fid] == split.assignment[src]
    counts = {name: sum(1 for v in real_ids if split.assignment[v] == name)
              for name in ("train", "val", "test")}
    assert counts["train"] == math.floor(0.72 * n_real)
    assert counts["val"] == math.floor(0.14 * n_real)
    assert sum(counts.values()) == n_real


def test_official_splits_take_precedence(tmp_path):
    manifest = synthetic_manifest(6, [("DF_000_x", "DF", "000")])
    official = tmp_path / "official"
    official.mkdir()
    (official / "train.json").write_text(json.dumps([["000", "001"]]))
    (official / "val.json").write_text(json.dumps([["002", "003"]]))
    (official / "test.json").write_text(json.dumps([["004", "005"]]))
    split = make_splits(manifest, seed=0, official_dir=official)
    assert split.assignment["000"] == "train"
    assert split.assignment["004"] == "test"
    assert split.assignment["DF_000_x"] == "train"  # inherits its source


def test_official_splits_missing_file(tmp_path):
    manifest = synthetic_manifest(6)
    official = tmp_path / "official"
    official.mkdir()
    (official / "train.json").write_text("[]")
    with pytest.raises(MissingArtifactError):
        make_splits(manifest, seed=0, official_dir=official)


def test_official_splits_must_cover_reals(tmp_path):
    manifest = synthetic_manifest(4)
    official = tmp_path / "official"
    official.mkdir()
    (official / "train.json").write_text(json.dumps([["000", "001"]]))
    (official / "val.json").write_text(json.dumps([["002"]]))
    (official / "test.json").write_text(json.dumps([]))
    with pytest.raises(SurfakeError, match="cover"):
        make_splits(manifest, seed=0, official_dir=official)


# --- persistence -----------------------------------------------------------------

def test_manifest_roundtrip(ffpp_tree, tmp_path):
    manifest = scan_dataset(ffpp_tree, "ffpp")
    path = tmp_path / "m.jsonl"
    save_manifest(manifest, path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 4
    first = json.loads(lines[0])
    assert set(first) >= {"video_id", "path", "label", "forgery", "source_video_id"}
    loaded = load_manifest(path)
    assert [(r.video_id, r.label, r.forgery, r.source_video_id) for r in loaded.records] == \
           [(r.video_id, r.label, r.forgery, r.source_video_id) for r in manifest.records]


def test_split_roundtrip(tmp_path):
    split = make_splits(synthetic_manifest(10), seed=3)
    path = tmp_path / "split.json"
    save_split(split, path)
    raw = json.loads(path.read_text())
    assert raw["seed"] == 3
    assert raw["ratios"] == [0.72, 0.14, 0.14]
    loaded = load_split(path)
    assert loaded.assignment == split.assignment
    assert loaded.seed == split.seed
