import hashlib
import json

import numpy as np
import pytest
import torch

from surfake.backbones import (
    REGISTRY,
    TinyCNN,
    Xception,
    adapt_model_first_conv,
    build_model,
    extract_features,
    get_backbone,
    get_module,
    load_pretrained_weights,
)
from surfake.errors import SurfakeError


def test_registry_contents():
    assert set(REGISTRY) == {"resnet50", "mobilenetv2", "efficientnet_b0", "xception", "tinycnn"}
    assert get_backbone("xception").input_side == 299
    for name in ("resnet50", "mobilenetv2", "efficientnet_b0", "tinycnn"):
        assert get_backbone(name).input_side == 224
    assert get_backbone("mobilenetv2").feature_dim == 1280
    with pytest.raises(ValueError, match="unknown backbone"):
        get_backbone("alexnet")


def test_tinycnn_size_and_forward():
    model = TinyCNN()
    n_params = sum(p.numel() for p in model.parameters())
    assert 30_000 < n_params < 60_000  # "about 50k"
    out = model(torch.randn(2, 3, 224, 224))
    assert out.shape == (2, 2)


def test_xception_forward_and_size():
    model = Xception()
    n_params = sum(p.numel() for p in model.parameters())
    assert 15e6 < n_params < 30e6
    out = model(torch.randn(1, 3, 299, 299))
    assert out.shape == (1, 2)


def test_adapt_first_conv_resnet50():
    torch.manual_seed(0)
    info = get_backbone("resnet50")
    model = info.build(2)
    original = get_module(model, info.first_conv).weight.detach().clone()
    adapt_model_first_conv(model, info)
    conv = get_module(model, info.first_conv)
    assert conv.in_channels == 6
    assert torch.equal(conv.weight[:, :3], original)
    assert torch.allclose(conv.weight[:, 3:], original.mean(dim=1, keepdim=True).expand(-1, 3, -1, -1))


def test_build_model_modes():
    rgb = build_model("tinycnn", "rgb")
    assert get_module(rgb, "conv1").in_channels == 3
    fused = build_model("tinycnn", "rgb_gsd")
    assert get_module(fused, "conv1").in_channels == 6
    out = fused(torch.randn(1, 6, 224, 224))
    assert out.shape == (1, 2)


def test_zero_gsd_equivalence_at_init():
    # with zero descriptor channels the adapted model reproduces the 3-channel one
    torch.manual_seed(1)
    info = get_backbone("tinycnn")
    base = info.build(2)
    fused = info.build(2)
    fused.load_state_dict(base.state_dict())
    adapt_model_first_conv(fused, info)
    base.eval()
    fused.eval()
    x = torch.randn(2, 3, 224, 224)
    x6 = torch.cat([x, torch.zeros_like(x)], dim=1)
    with torch.no_grad():
        np.testing.assert_allclose(fused(x6).numpy(), base(x).numpy(), atol=1e-6)


def test_extract_features_dims():
    for name, want in (("mobilenetv2", 1280), ("tinycnn", 64)):
        info = get_backbone(name)
        model = info.build(2)
        model.eval()
        with torch.no_grad():
            feats = extract_features(model, info, torch.randn(2, 3, 224, 224))
        assert feats.shape == (2, want)
        assert want == info.feature_dim


def test_extract_features_missing_hook():
    import dataclasses

    info = get_backbone("tinycnn")
    bad = dataclasses.replace(info, head="does.not.exist")
    with pytest.raises(SurfakeError, match="penultimate"):
        extract_features(info.build(2), bad, torch.randn(1, 3, 224, 224))


# --- weights registry ---------------------------------------------------------

def _write_registry(tmp_path, name, state):
    blob = tmp_path / f"{name}.pt"
    torch.save(state, blob)
    digest = hashlib.sha256(blob.read_bytes()).hexdigest()
    (tmp_path / "registry.json").write_text(
        json.dumps({name: {"path": blob.name, "sha256": digest}}))
    return digest


def test_load_pretrained_from_registry(tmp_path):
    torch.manual_seed(2)
    donor = TinyCNN()
    _write_registry(tmp_path, "tinycnn", donor.state_dict())
    torch.manual_seed(3)
    model = TinyCNN()
    assert load_pretrained_weights(model, "tinycnn", weights_dir=tmp_path)
    for key, value in donor.state_dict().items():
        assert torch.equal(model.state_dict()[key], value)


def test_load_pretrained_hash_mismatch(tmp_path):
    _write_registry(tmp_path, "tinycnn", TinyCNN().state_dict())
    registry = json.loads((tmp_path / "registry.json").read_text())
    registry["tinycnn"]["sha256"] = "0" * 64
    (tmp_path / "registry.json").write_text(json.dumps(registry))
    with pytest.raises(SurfakeError, match="hash mismatch"):
        load_pretrained_weights(TinyCNN(), "tinycnn", weights_dir=tmp_path)


def test_load_pretrained_degrades_to_random(tmp_path, caplog):
    with caplog.at_level("WARNING"):
        assert not load_pretrained_weights(TinyCNN(), "tinycnn", weights_dir=tmp_path)
    assert any("random init" in m for m in caplog.messages)


def test_load_pretrained_env_unset(monkeypatch, caplog):
    monkeypatch.delenv("SURFAKE_WEIGHTS_DIR", raising=False)
    with caplog.at_level("WARNING"):
        assert not load_pretrained_weights(TinyCNN(), "tinycnn")
    assert any("SURFAKE_WEIGHTS_DIR" in m for m in caplog.messages)
