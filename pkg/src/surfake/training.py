"""Binary real/fake classifier training with the reference optimization
settings: cross-entropy over two classes, 30 epochs, batch size 32, SGD with
momentum 0.9, weight decay 1e-4, learning rate 1e-3.

Class index 0 is "real", 1 is "fake"; scores are the softmax probability of
class fake. Training is a single deterministic process: weight init and
batch order draw from named substreams of the config seed, so a fixed
(config, split, data) triple reproduces the loss history exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .backbones import adapt_model_first_conv, build_model, extract_features, get_backbone
from .errors import ConfigError, MissingArtifactError
from .fusion import MODE_CHANNELS, FusedSample, build_fused_sample
from .seeding import substream_seed

log = logging.getLogger(__name__)

CLASSES = ("real", "fake")
LABEL_INDEX = {"real": 0, "fake": 1}


@dataclass
class TrainConfig:
    backbone: str = "mobilenetv2"
    input_mode: str = "rgb_gsd"
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "sgd"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    loss: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        get_backbone(self.backbone)
        if self.input_mode not in MODE_CHANNELS:
            raise ConfigError(f"unknown input_mode {self.input_mode!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("optimizer hyperparameters must be positive")
        if self.optimizer != "sgd":
            raise ConfigError(f"only sgd is supported, got {self.optimizer!r}")
        if self.loss != "cross_entropy":
            raise ConfigError(f"only cross_entropy is supported, got {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise MissingArtifactError(f"train config not found: {path}", [str(path)])
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"train config {path} is not valid JSON: {exc}") from exc


@dataclass
class Checkpoint:
    backbone: str
    input_mode: str
    state: dict                      # final-epoch parameters
    best_state: dict                 # parameters at the best-val-loss epoch
    epoch: int
    train_history: list[float]
    val_history: list[float]
    best_epoch: int                  # 1-based; 0 when no epochs ran
    config: TrainConfig

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        torch.save(self.state, out_dir / "params.pt")
        torch.save(self.best_state, out_dir / "params_best.pt")
        (out_dir / "config.json").write_text(json.dumps(self.config.to_dict(), sort_keys=True, indent=1))
        (out_dir / "history.json").write_text(json.dumps({
            "backbone": self.backbone,
            "input_mode": self.input_mode,
            "epoch": self.epoch,
            "train_loss": self.train_history,
            "val_loss": self.val_history,
            "best_epoch": self.best_epoch,
        }, sort_keys=True, indent=1))
        return out_dir

    @classmethod
    def load(cls, ckpt_dir) -> "Checkpoint":
        ckpt_dir = Path(ckpt_dir)
        for fname in ("params.pt", "params_best.pt", "config.json", "history.json"):
            if not (ckpt_dir / fname).is_file():
                raise MissingArtifactError(f"checkpoint incomplete: missing {fname} in {ckpt_dir}",
                                           [str(ckpt_dir / fname)])
        config = TrainConfig.from_dict(json.loads((ckpt_dir / "config.json").read_text()))
        hist = json.loads((ckpt_dir / "history.json").read_text())
        return cls(
            backbone=hist["backbone"],
            input_mode=hist["input_mode"],
            state=torch.load(ckpt_dir / "params.pt", map_location="cpu", weights_only=True),
            best_state=torch.load(ckpt_dir / "params_best.pt", map_location="cpu", weights_only=True),
            epoch=hist["epoch"],
            train_history=hist["train_loss"],
            val_history=hist["val_loss"],
            best_epoch=hist["best_epoch"],
            config=config,
        )


# --- sample sources ----------------------------------------------------------

class ArraySampleSource:
    """In-memory sample source; holds FusedSample lists per split."""

    def __init__(self, train=(), val=(), test=()):
        self._splits = {"train": list(train), "val": list(val), "test": list(test)}

    def samples(self, split: str) -> list[FusedSample]:
        return self._splits[split]


class ManifestSampleSource:
    """Loads branch images from feature directories and builds samples lazily.

    Expects crops as `<video_id>_<frame_index>_rgb.png` in ``rgb_dir`` and
    encoded descriptor maps as `<video_id>_<frame_index>_gsd.png` in
    ``gsd_dir`` (the two directories may be the same).
    """

    def __init__(self, manifest, split, input_mode: str, backbone: str,
                 rgb_dir, gsd_dir=None, gsd_norm=None, forgery: str = "all"):
        from .backbones import get_backbone

        self.manifest = manifest
        self.split = split
        self.input_mode = input_mode
        self.info = get_backbone(backbone)
        self.rgb_dir = Path(rgb_dir)
        self.gsd_dir = Path(gsd_dir) if gsd_dir is not None else self.rgb_dir
        self.gsd_norm = gsd_norm
        self.forgery = forgery

    def _records(self, split_name):
        wanted = set(self.split.ids(split_name))
        for rec in self.manifest.records:
            if rec.video_id not in wanted:
                continue
            if rec.label == "fake" and self.forgery != "all" and rec.forgery != self.forgery:
                continue
            yield rec

    def _frames_for(self, video_id: str) -> list[int]:
        indices = []
        for path in self.rgb_dir.glob(f"{video_id}_*_rgb.png"):
            stem = path.name[: -len("_rgb.png")]
            frame_part = stem[len(video_id) + 1:]
            if frame_part.isdigit():
                indices.append(int(frame_part))
        return sorted(indices)

    def samples(self, split_name: str) -> list[FusedSample]:
        from .facecrop import load_crop_image
        from .gsd import load_encoded_gsd

        need_rgb = self.input_mode in ("rgb", "rgb_gsd")
        need_gsd = self.input_mode in ("gsd", "rgb_gsd")
        out = []
        missing = []
        for rec in self._records(split_name):
            for frame_index in self._frames_for(rec.video_id):
                base = f"{rec.video_id}_{frame_index}"
                rgb_path = self.rgb_dir / f"{base}_rgb.png"
                gsd_path = self.gsd_dir / f"{base}_gsd.png"
                if need_gsd and not gsd_path.is_file():
                    missing.append(base)
                    continue
                rgb = load_crop_image(rgb_path) if need_rgb else None
                gsd = load_encoded_gsd(gsd_path).image if need_gsd else None
                out.append(build_fused_sample(
                    rgb, gsd, self.input_mode,
                    self.info.normalization, self.gsd_norm,
                    label=rec.label, provenance=(rec.video_id, frame_index, rec.forgery)))
        if missing:
            raise MissingArtifactError(
                f"{len(missing)} frames lack descriptor maps (first: {missing[:5]})", missing)
        return out


# --- training / inference -----------------------------------------------------

def _stack(samples, input_mode: str):
    channels = MODE_CHANNELS[input_mode]
    bad = [s for s in samples if s.channels != channels]
    if bad:
        raise ValueError(
            f"input_mode {input_mode!r} needs {channels}-channel samples; "
            f"got {bad[0].channels} channels")
    x = torch.from_numpy(np.stack([s.tensor for s in samples]))
    y = torch.tensor([LABEL_INDEX[s.label] for s in samples], dtype=torch.long)
    return x, y


def _mean_loss(model, lossf, x, y, batch_size: int) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            xb, yb = x[start:start + batch_size], y[start:start + batch_size]
            total += float(lossf(model(xb), yb)) * len(xb)
            count += len(xb)
    return total / count if count else float("nan")


def train(config: TrainConfig, split, data, weights_dir=None,
          use_pretrained: bool = False) -> Checkpoint:
    """Run fixed-epoch training and return the checkpoint.

    No schedule, no early stopping, no augmentation; the best-val-loss epoch
    is flagged and its parameters kept alongside the final ones.
    """
    torch.manual_seed(substream_seed(config.seed, "init"))
    model = build_model(config.backbone, config.input_mode,
                        weights_dir=weights_dir, use_pretrained=use_pretrained)

    train_samples = data.samples("train")
    if not train_samples:
        raise ValueError("train split is empty")
    val_samples = data.samples("val")
    x_train, y_train = _stack(train_samples, config.input_mode)
    x_val, y_val = (None, None)
    if val_samples:
        x_val, y_val = _stack(val_samples, config.input_mode)

    lossf = nn.CrossEntropyLoss()
    optimizer = torch.optim.SGD(model.parameters(), lr=config.learning_rate,
                                momentum=config.momentum, weight_decay=config.weight_decay)
    shuffle_rng = torch.Generator().manual_seed(substream_seed(config.seed, "shuffle"))

    train_history, val_history = [], []
    best_epoch, best_val = 0, float("inf")
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    for epoch in range(1, config.epochs + 1):
        model.train()
        perm = torch.randperm(len(x_train), generator=shuffle_rng)
        total, count = 0.0, 0
        for batch_no, start in enumerate(range(0, len(perm), config.batch_size)):
            idx = perm[start:start + config.batch_size]
            optimizer.zero_grad()
            loss = lossf(model(x_train[idx]), y_train[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}: {float(loss.detach())}")
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        train_history.append(total / count)

        if x_val is not None:
            val_loss = _mean_loss(model, lossf, x_val, y_val, config.batch_size)
        else:
            val_loss = train_history[-1]  # degenerate: no val data supplied
        val_history.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        log.info("epoch %d/%d: train %.4f val %.4f", epoch, config.epochs,
                 train_history[-1], val_loss)

    return Checkpoint(
        backbone=config.backbone,
        input_mode=config.input_mode,
        state={k: v.detach().clone() for k, v in model.state_dict().items()},
        best_state=best_state,
        epoch=config.epochs,
        train_history=train_history,
        val_history=val_history,
        best_epoch=best_epoch,
        config=config,
    )


def _restore_model(checkpoint: Checkpoint, which: str) -> nn.Module:
    if which not in ("best", "final"):
        raise ValueError(f"which must be 'best' or 'final', got {which!r}")
    model = build_model(checkpoint.backbone, checkpoint.input_mode)
    model.load_state_dict(checkpoint.best_state if which == "best" else checkpoint.state)
    model.eval()
    return model


def predict(checkpoint: Checkpoint, samples, batch_size: int = 64,
            which: str = "best") -> list[tuple[float, str]]:
    """Score samples: (softmax probability of fake, argmax label) per sample."""
    if not samples:
        return []
    model = _restore_model(checkpoint, which)
    x, _ = _stack(samples, checkpoint.input_mode)
    out = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            probs = torch.softmax(model(x[start:start + batch_size]), dim=1)
            for row in probs:
                out.append((float(row[1]), CLASSES[int(row.argmax())]))
    return out


def extract_activations(checkpoint: Checkpoint, samples, batch_size: int = 64,
                        which: str = "best") -> np.ndarray:
    """Penultimate feature vectors, one row per sample."""
    info = get_backbone(checkpoint.backbone)
    model = _restore_model(checkpoint, which)
    x, _ = _stack(samples, checkpoint.input_mode)
    feats = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            feats.append(extract_features(model, info, x[start:start + batch_size]).numpy())
    return np.concatenate(feats, axis=0)
