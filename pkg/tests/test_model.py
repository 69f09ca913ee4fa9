import dataclasses

import pytest
import torch

from uvenet.guidance import DCKG
from uvenet.model import (
    AENet,
    CheckpointError,
    ModelConfig,
    receptive_radius,
    ResidualBlock,
    UVENet,
    VENet,
    build_model,
    load_checkpoint,
    save_checkpoint,
    zero_residual_,
)
from uvenet.ops import ConfigError, ShapeError


def central_difference(fn, param, index, step=1e-5):
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + step
        plus = fn().item()
        param[index] = orig - step
        minus = fn().item()
        param[index] = orig
    return (plus - minus) / (2 * step)


def test_config_presets():
    assert (ModelConfig.full().blocks_r, ModelConfig.full().blocks_r2, ModelConfig.full().blocks_r6) == (30, 15, 5)
    s = ModelConfig.simplified()
    assert (s.blocks_r, s.blocks_r2, s.blocks_r6) == (10, 3, 1)
    assert s.temporal_radius == 1 and s.window_length == 3


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(temporal_radius=-1)
    with pytest.raises(ConfigError):
        ModelConfig(downsample_factor=2)
    with pytest.raises(ConfigError):
        ModelConfig(use_aenet=False)
    assert ModelConfig().ablation("ve").use_aenet is False
    with pytest.raises(ConfigError):
        ModelConfig().ablation("frgm-only")


def test_config_round_trip():
    cfg = ModelConfig.simplified(base_channels=8)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_residual_block_zero_is_identity():
    blk = zero_residual_(ResidualBlock(16))
    x = torch.randn(1, 16, 16, 16)
    assert torch.equal(blk(x), x)


def test_residual_block_gradient_matches_finite_differences():
    torch.manual_seed(0)
    blk = ResidualBlock(4).double()
    x = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    loss = lambda: blk(x).sum()  # noqa: E731
    blk.zero_grad()
    loss().backward()
    gen = torch.Generator().manual_seed(1)
    for p in blk.parameters():
        for _ in range(3):
            idx = tuple(int(torch.randint(0, s, (1,), generator=gen)) for s in p.shape)
            num = central_difference(loss, p, idx)
            ana = p.grad[idx].item()
            assert abs(ana - num) <= 1e-3 * max(abs(ana), abs(num), 1e-8)


def test_aenet_shapes_and_skip(tiny_cfg):
    cfg = dataclasses.replace(tiny_cfg, base_channels=16)
    net = AENet(cfg)
    d = torch.rand(1, 3, 16, 16)
    p_hat, m, l = net(d)
    assert p_hat.shape == (1, 3, 16, 16) and m.shape == l.shape == (1, 16, 16, 16)
    with torch.no_grad():
        net.tail.weight.zero_()
        net.tail.bias.zero_()
    assert torch.equal(net(d)[0], d)


def test_aenet_rejects_bad_size(tiny_cfg):
    with pytest.raises(ShapeError):
        AENet(tiny_cfg)(torch.rand(1, 3, 18, 16))


def test_aenet_runs_once_per_window(tiny_cfg):
    for t in (0, 1, 2):
        cfg = dataclasses.replace(tiny_cfg, temporal_radius=t)
        model = build_model(cfg, seed=0)
        model(torch.rand(2 * t + 1, 3, 32, 32))
        assert model.aenet_calls == 1


def test_full_forward_shapes(tiny_cfg):
    model = build_model(dataclasses.replace(tiny_cfg, base_channels=16), seed=0)
    out = model(torch.rand(3, 3, 64, 64))
    assert out.frames.shape == (3, 3, 64, 64)
    assert out.aux.shape == (1, 3, 16, 16)
    assert out.f_e.shape == out.f_r.shape == (1, 256, 3, 3)


def test_batched_windows(tiny_model):
    out = tiny_model(torch.rand(2, 3, 3, 32, 32))
    assert out.frames.shape == (2, 3, 3, 32, 32)
    assert out.f_e.shape[0] == 2
    assert tiny_model.aenet_calls == 1


def test_window_length_checked(tiny_model):
    with pytest.raises(ShapeError):
        tiny_model(torch.rand(5, 3, 32, 32))


def test_zero_parameters_give_identity(tiny_cfg):
    model = zero_residual_(build_model(tiny_cfg, seed=0))
    x = torch.rand(3, 3, 32, 32)
    assert torch.equal(model(x).frames, x)
    model.eval()
    assert torch.equal(model(x).frames, x)


@pytest.mark.parametrize("variant", ["ve", "ve+fegm", "full"])
def test_ablation_variants_are_shape_correct(tiny_cfg, variant):
    model = build_model(tiny_cfg.ablation(variant), seed=0)
    out = model(torch.rand(3, 3, 32, 32))
    assert out.frames.shape == (3, 3, 32, 32)
    assert (out.aux is None) == (variant == "ve")


def test_venet_kernel_channels_checked(tiny_cfg):
    venet = VENet(tiny_cfg)
    with pytest.raises(ConfigError):
        venet(torch.rand(3, 3, 32, 32), 3, torch.rand(1, 32, 3, 3), torch.rand(1, 64, 3, 3))
    with pytest.raises(ConfigError):
        venet(torch.rand(3, 3, 32, 32), 3, None, None)


def test_eval_mode_clamps_training_does_not(tiny_cfg):
    model = build_model(tiny_cfg, seed=0)
    with torch.no_grad():
        model.venet.tail.bias.fill_(5.0)
    x = torch.rand(3, 3, 32, 32)
    assert model(x).frames.max() > 1
    model.eval()
    y = model(x).frames
    assert y.max() <= 1 and y.min() >= 0


def test_forward_is_deterministic(tiny_cfg):
    a, b = build_model(tiny_cfg, seed=7), build_model(tiny_cfg, seed=7)
    x = torch.rand(3, 3, 32, 32)
    assert torch.equal(a(x).frames, b(x).frames)
    assert torch.equal(a(x).frames, a(x).frames)


def test_every_parameter_receives_gradient(tiny_cfg):
    model = build_model(tiny_cfg, seed=0)
    out = model(torch.rand(2, 3, 3, 32, 32))
    (out.frames.square().mean() + out.aux.square().mean()).backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not torch.any(p.grad != 0)]
    assert dead == []


def test_guidance_path_trains_aenet(tiny_cfg):
    model = build_model(tiny_cfg, seed=0)
    out = model(torch.rand(3, 3, 32, 32))
    out.frames.square().mean().backward()  # main loss only
    assert torch.any(model.aenet.head.weight.grad != 0)
    assert torch.any(model.dckg_e.body[0].weight.grad != 0)


def test_checkpoint_round_trip(tmp_path, tiny_model):
    path = tmp_path / "m.pt"
    save_checkpoint(path, tiny_model, iteration=3)
    loaded, payload = load_checkpoint(path)
    assert payload["iteration"] == 3
    assert loaded.cfg == tiny_model.cfg
    x = torch.rand(3, 3, 32, 32)
    assert torch.equal(loaded(x).frames, tiny_model(x).frames)


def test_checkpoint_config_mismatch_fails_loudly(tmp_path, tiny_model):
    path = tmp_path / "m.pt"
    save_checkpoint(path, tiny_model)
    payload = torch.load(path, weights_only=True)
    payload["config"]["base_channels"] = 8
    torch.save(payload, path)
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(path)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.pt"
    torch.save({"weights": 1}, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_dckg_modules_only_when_enabled(tiny_cfg):
    model = UVENet(tiny_cfg.ablation("ve+fegm"))
    assert isinstance(model.dckg_e, DCKG) and model.dckg_r is None
    assert model.venet.restoration is not None and model.venet.extraction is None


@pytest.mark.parametrize("variant", ["ve", "ve+fegm", "full"])
def test_receptive_radius_bounds_measured_support(variant):
    cfg = ModelConfig(base_channels=4, blocks_r=2, blocks_r2=2, blocks_r6=1).ablation(variant)
    model = build_model(cfg, seed=0).double()
    x = torch.rand(3, 3, 160, 160, dtype=torch.float64, requires_grad=True)
    g = model.guide(x[1:2].detach())
    model.venet(x, 3, g.f_e, g.f_r)[1, :, 80, 80].sum().backward()
    support = (x.grad.abs().sum((0, 1)) > 0).nonzero()
    assert int((support - 80).abs().max()) <= receptive_radius(cfg)
