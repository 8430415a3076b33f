"""Classifier backbone registry and pretrained-weight resolution.

The four standard architectures (resnet50, mobilenetv2, efficientnet_b0,
xception) plus `tinycnn`, a ~45k-parameter 3-layer CNN added by this repo
for desk-scale runs; tinycnn is not one of the reference architectures.

ImageNet weights are never downloaded. They resolve through a registry file
`registry.json` mapping backbone id -> {path, sha256}, rooted at
$SURFAKE_WEIGHTS_DIR (or an explicit directory).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import SurfakeError
from .fusion import IMAGENET_MEAN, IMAGENET_STD, NormalizationSpec, adapt_first_layer

log = logging.getLogger(__name__)

WEIGHTS_DIR_ENV = "SURFAKE_WEIGHTS_DIR"


class TinyCNN(nn.Module):
    """3 conv layers + 2 linear layers, ~46k parameters. Desk-scale only.

    The head pools to 4x4 rather than 1x1: the synthetic checks rely on
    localized geometry artifacts, and a global average would integrate a
    radially symmetric perturbation away.
    """

    def __init__(self, num_classes: int = 2, feature_dim: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 24, 3, stride=4, padding=1)
        self.bn1 = nn.BatchNorm2d(24)
        self.conv2 = nn.Conv2d(24, 48, 3, stride=2, padding=1)
        self.bn2 = nn.BatchNorm2d(48)
        self.conv3 = nn.Conv2d(48, 24, 3, stride=2, padding=1)
        self.bn3 = nn.BatchNorm2d(24)
        self.fc_feat = nn.Linear(24 * 16, feature_dim)
        self.fc = nn.Linear(feature_dim, num_classes)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        x = F.relu(self.bn3(self.conv3(x)))
        x = torch.flatten(F.adaptive_avg_pool2d(x, 4), 1)
        x = F.relu(self.fc_feat(x))
        return self.fc(x)


class SeparableConv2d(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding=0):
        super().__init__()
        self.depthwise = nn.Conv2d(in_ch, in_ch, kernel_size, stride, padding,
                                   groups=in_ch, bias=False)
        self.pointwise = nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class XceptionBlock(nn.Module):
    def __init__(self, in_ch, out_ch, reps, stride=1, start_with_relu=True, grow_first=True):
        super().__init__()
        if out_ch != in_ch or stride != 1:
            self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False)
            self.skipbn = nn.BatchNorm2d(out_ch)
        else:
            self.skip = None
        layers = []
        ch = in_ch
        if grow_first:
            layers += [nn.ReLU(inplace=False), SeparableConv2d(in_ch, out_ch, 3, 1, 1),
                       nn.BatchNorm2d(out_ch)]
            ch = out_ch
        for _ in range(reps - 1):
            layers += [nn.ReLU(inplace=False), SeparableConv2d(ch, ch, 3, 1, 1),
                       nn.BatchNorm2d(ch)]
        if not grow_first:
            layers += [nn.ReLU(inplace=False), SeparableConv2d(in_ch, out_ch, 3, 1, 1),
                       nn.BatchNorm2d(out_ch)]
        if not start_with_relu:
            layers = layers[1:]
        if stride != 1:
            layers.append(nn.MaxPool2d(3, stride, 1))
        self.rep = nn.Sequential(*layers)

    def forward(self, x):
        out = self.rep(x)
        skip = x if self.skip is None else self.skipbn(self.skip(x))
        return out + skip


class Xception(nn.Module):
    """Separable-convolution architecture for 299x299 inputs (2048-d features)."""

    def __init__(self, num_classes: int = 2):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 32, 3, 2, 0, bias=False)
        self.bn1 = nn.BatchNorm2d(32)
        self.conv2 = nn.Conv2d(32, 64, 3, bias=False)
        self.bn2 = nn.BatchNorm2d(64)
        self.block1 = XceptionBlock(64, 128, 2, 2, start_with_relu=False)
        self.block2 = XceptionBlock(128, 256, 2, 2)
        self.block3 = XceptionBlock(256, 728, 2, 2)
        self.middle = nn.Sequential(*[XceptionBlock(728, 728, 3, 1) for _ in range(8)])
        self.block12 = XceptionBlock(728, 1024, 2, 2, grow_first=False)
        self.conv3 = SeparableConv2d(1024, 1536, 3, 1, 1)
        self.bn3 = nn.BatchNorm2d(1536)
        self.conv4 = SeparableConv2d(1536, 2048, 3, 1, 1)
        self.bn4 = nn.BatchNorm2d(2048)
        self.fc = nn.Linear(2048, num_classes)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        x = self.block3(self.block2(self.block1(x)))
        x = self.middle(x)
        x = self.block12(x)
        x = F.relu(self.bn3(self.conv3(x)))
        x = F.relu(self.bn4(self.conv4(x)))
        x = torch.flatten(F.adaptive_avg_pool2d(x, 1), 1)
        return self.fc(x)


@dataclass(frozen=True)
class BackboneInfo:
    name: str
    input_side: int
    normalization: NormalizationSpec
    feature_dim: int
    build: Callable[[int], nn.Module]
    first_conv: str  # dotted path of the input convolution
    head: str  # dotted path of the final linear; its input is the penultimate feature


def _build_resnet50(num_classes=2):
    from torchvision.models import resnet50

    model = resnet50(weights=None)
    model.fc = nn.Linear(model.fc.in_features, num_classes)
    return model


def _build_mobilenetv2(num_classes=2):
    from torchvision.models import mobilenet_v2

    model = mobilenet_v2(weights=None)
    model.classifier[1] = nn.Linear(model.classifier[1].in_features, num_classes)
    return model


def _build_efficientnet_b0(num_classes=2):
    from torchvision.models import efficientnet_b0

    model = efficientnet_b0(weights=None)
    model.classifier[1] = nn.Linear(model.classifier[1].in_features, num_classes)
    return model


_IMAGENET = NormalizationSpec(IMAGENET_MEAN, IMAGENET_STD, 224)
_HALF = NormalizationSpec((0.5, 0.5, 0.5), (0.5, 0.5, 0.5), 299)

REGISTRY: dict[str, BackboneInfo] = {
    "resnet50": BackboneInfo("resnet50", 224, _IMAGENET, 2048,
                             _build_resnet50, "conv1", "fc"),
    "mobilenetv2": BackboneInfo("mobilenetv2", 224, _IMAGENET, 1280,
                                _build_mobilenetv2, "features.0.0", "classifier.1"),
    "efficientnet_b0": BackboneInfo("efficientnet_b0", 224, _IMAGENET, 1280,
                                    _build_efficientnet_b0, "features.0.0", "classifier.1"),
    "xception": BackboneInfo("xception", 299, _HALF, 2048,
                             Xception, "conv1", "fc"),
    "tinycnn": BackboneInfo("tinycnn", 224,
                            NormalizationSpec((0.5, 0.5, 0.5), (0.5, 0.5, 0.5), 224),
                            64, TinyCNN, "conv1", "fc"),
}


def get_backbone(name: str) -> BackboneInfo:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown backbone {name!r}; known: {sorted(REGISTRY)}") from None


def get_module(model: nn.Module, dotted: str) -> nn.Module:
    mod = model
    for part in dotted.split("."):
        mod = mod[int(part)] if part.isdigit() else getattr(mod, part)
    return mod


def _set_module(model: nn.Module, dotted: str, new: nn.Module) -> None:
    parts = dotted.split(".")
    parent = get_module(model, ".".join(parts[:-1])) if len(parts) > 1 else model
    last = parts[-1]
    if last.isdigit():
        parent[int(last)] = new
    else:
        setattr(parent, last, new)


def adapt_model_first_conv(model: nn.Module, info: BackboneInfo) -> nn.Module:
    """Replace the 3-channel input conv with its 6-channel adapted version."""
    conv = get_module(model, info.first_conv)
    if not isinstance(conv, nn.Conv2d):
        raise SurfakeError(f"{info.name}.{info.first_conv} is not a Conv2d")
    adapted = adapt_first_layer(conv.weight.detach().cpu().numpy())
    new = nn.Conv2d(6, conv.out_channels, conv.kernel_size, conv.stride,
                    conv.padding, conv.dilation, conv.groups, conv.bias is not None)
    with torch.no_grad():
        new.weight.copy_(torch.from_numpy(adapted.weights))
        if conv.bias is not None:
            new.bias.copy_(conv.bias)
    _set_module(model, info.first_conv, new)
    return model


def build_model(name: str, input_mode: str = "rgb", num_classes: int = 2,
                weights_dir=None, use_pretrained: bool = False) -> nn.Module:
    """Construct a backbone for the given input mode.

    Pretrained weights, when requested, load from the local registry before
    any first-layer adaptation so the adapted channels average the
    pretrained filters (not random ones).
    """
    info = get_backbone(name)
    model = info.build(num_classes)
    if use_pretrained:
        load_pretrained_weights(model, name, weights_dir)
    if input_mode == "rgb_gsd":
        adapt_model_first_conv(model, info)
    return model


def extract_features(model: nn.Module, info: BackboneInfo, x: torch.Tensor) -> torch.Tensor:
    """Penultimate activations: the input of the registered head module."""
    try:
        head = get_module(model, info.head)
    except AttributeError:
        raise SurfakeError(
            f"backbone {info.name!r} has no penultimate hook point {info.head!r}") from None
    captured = {}

    def hook(_mod, inputs, _out):
        captured["feat"] = inputs[0].detach()

    handle = head.register_forward_hook(hook)
    try:
        model(x)
    finally:
        handle.remove()
    return captured["feat"]


# --- pretrained weight registry ---------------------------------------------

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def resolve_weights_dir(weights_dir=None) -> Path | None:
    if weights_dir is not None:
        return Path(weights_dir)
    env = os.environ.get(WEIGHTS_DIR_ENV)
    return Path(env) if env else None


def load_pretrained_weights(model: nn.Module, name: str, weights_dir=None,
                            strict: bool = False) -> bool:
    """Load registry-resolved weights into the model; returns True on success.

    A missing registry or entry degrades to random init with a warning.
    A hash mismatch is always an error: silently training on unexpected
    weights is worse than failing.
    """
    root = resolve_weights_dir(weights_dir)
    if root is None:
        log.warning("no weights directory configured (%s); %s starts from random init",
                    WEIGHTS_DIR_ENV, name)
        return False
    registry_path = root / "registry.json"
    if not registry_path.is_file():
        log.warning("weights registry %s not found; %s starts from random init",
                    registry_path, name)
        return False
    registry = json.loads(registry_path.read_text())
    entry = registry.get(name)
    if entry is None:
        log.warning("no registry entry for %s; starting from random init", name)
        return False
    blob = root / entry["path"]
    if not blob.is_file():
        raise SurfakeError(f"weights registry points at missing file: {blob}")
    actual = _sha256(blob)
    if actual != entry["sha256"]:
        raise SurfakeError(
            f"weights hash mismatch for {name}: registry says {entry['sha256'][:12]}..., "
            f"file is {actual[:12]}...")
    state = torch.load(blob, map_location="cpu", weights_only=True)
    missing, unexpected = model.load_state_dict(state, strict=strict)
    if missing or unexpected:
        log.info("loaded %s weights with %d missing / %d unexpected keys",
                 name, len(missing), len(unexpected))
    return True
