"""Two-branch video enhancement network.

The auxiliary branch (:class:`AENet`) enhances the x4-downsampled middle frame of
a temporal window and exposes two intermediate features, ``M`` and ``L``. Each
becomes a set of depthwise kernels (:mod:`uvenet.guidance`) that steers the
main branch (:class:`VENet`) while it enhances every full-resolution frame of
the window. The auxiliary branch runs once per window, whatever its length.
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from .guidance import DCKG, StaticGuidance, guided_extraction, guided_restoration, kernels_from_feature
from .ops import ConfigError, ShapeError, check_4d, check_divisible, downsample

CHECKPOINT_FORMAT = "uvenet-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    blocks_r: int = 30
    blocks_r2: int = 15
    blocks_r6: int = 5
    temporal_radius: int = 1
    use_aenet: bool = True
    use_fegm: bool = True
    use_frgm: bool = True
    global_skip: bool = True
    dckg_depth: int = 2
    downsample_factor: int = 4

    def __post_init__(self):
        for name in ("base_channels", "blocks_r", "blocks_r2", "blocks_r6", "dckg_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.temporal_radius < 0:
            raise ConfigError(f"temporal_radius must be >= 0, got {self.temporal_radius}")
        if self.downsample_factor != 4:
            raise ConfigError("downsample_factor is fixed at 4")
        if not self.use_aenet and (self.use_fegm or self.use_frgm):
            raise ConfigError("FEGM/FRGM need the auxiliary branch; set use_fegm=use_frgm=False when use_aenet=False")

    @property
    def window_length(self) -> int:
        return 2 * self.temporal_radius + 1

    @property
    def guidance_channels(self) -> int:
        return 16 * self.base_channels

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        return cls(**{"blocks_r": 30, "blocks_r2": 15, "blocks_r6": 5, **overrides})

    @classmethod
    def simplified(cls, **overrides) -> "ModelConfig":
        return cls(**{"blocks_r": 10, "blocks_r2": 3, "blocks_r6": 1, **overrides})

    def ablation(self, variant: str) -> "ModelConfig":
        """Ablation variants: ``"ve"``, ``"ve+fegm"`` or ``"full"``."""
        switches = {
            "ve": (False, False, False),
            "ve+fegm": (True, True, False),
            "full": (True, True, True),
        }
        if variant not in switches:
            raise ConfigError(f"unknown ablation variant {variant!r}; choose from {sorted(switches)}")
        a, e, r = switches[variant]
        return dataclasses.replace(self, use_aenet=a, use_fegm=e, use_frgm=r)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def conv3x3(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, padding=1)


class ResidualBlock(nn.Module):
    """``x + conv(relu(conv(x)))``."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.act = nn.ReLU(inplace=True)
        self.conv2 = conv3x3(channels, channels)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


def residual_stack(channels: int, count: int) -> nn.Sequential:
    return nn.Sequential(*[ResidualBlock(channels) for _ in range(count)])


class AENet(nn.Module):
    """Auxiliary branch working on the downsampled middle frame.

    ``forward`` returns ``(p_hat, m, l)``: the enhanced low-resolution frame,
    the middle extracted feature after ``blocks_r`` blocks and the restoration
    feature after a further ``blocks_r2`` blocks (taken right before the
    output convolution).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.global_skip = cfg.global_skip
        self.head = conv3x3(3, c)
        self.extract = residual_stack(c, cfg.blocks_r)
        self.restore = residual_stack(c, cfg.blocks_r2)
        self.tail = conv3x3(c, 3)
        self.calls = 0

    def forward(self, d: torch.Tensor):
        check_4d(d, "AE-Net input")
        # The guidance path unshuffles M and L by 4 again.
        check_divisible(d, 2, 4, "AE-Net input")
        check_divisible(d, 3, 4, "AE-Net input")
        self.calls += 1
        m = self.extract(self.head(d))
        l = self.restore(m)
        p_hat = self.tail(l)
        if self.global_skip:
            p_hat = p_hat + d
        return p_hat, m, l


class VENet(nn.Module):
    """Main branch, applied with shared weights to every frame of a window.

    conv -> E -> R/6 blocks -> guided extraction -> F_e (4C, H/2) -> R/2 blocks
    -> R -> guided restoration -> F_r (C, H) -> R/6 blocks -> conv -> (+ input).
    Disabled guidance stages are replaced by :class:`StaticGuidance`.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.cfg = cfg
        self.head = conv3x3(3, c)
        self.pre = residual_stack(c, cfg.blocks_r6)
        self.extraction = None if cfg.use_fegm else StaticGuidance(c, down=4, up=2, depth=cfg.dckg_depth)
        self.mid = residual_stack(4 * c, cfg.blocks_r2)
        self.restoration = None if cfg.use_frgm else StaticGuidance(4 * c, down=2, up=4, depth=cfg.dckg_depth)
        self.post = residual_stack(c, cfg.blocks_r6)
        self.tail = conv3x3(c, 3)

    def _check_kernels(self, kernels, name):
        if kernels is None:
            raise ConfigError(f"{name} kernels are required by this configuration")
        if kernels.shape[1] != self.cfg.guidance_channels:
            raise ConfigError(
                f"{name} kernels have {kernels.shape[1]} channels, expected 16*C = {self.cfg.guidance_channels}"
            )

    def forward(self, frames: torch.Tensor, frames_per_window: int, f_e=None, f_r=None) -> torch.Tensor:
        check_4d(frames, "VE-Net input")
        check_divisible(frames, 2, 16, "VE-Net input")
        check_divisible(frames, 3, 16, "VE-Net input")
        e = self.pre(self.head(frames))
        if self.extraction is None:
            self._check_kernels(f_e, "extraction")
            x = guided_extraction(e, f_e, frames_per_window)
        else:
            x = self.extraction(e)
        r = self.mid(x)
        if self.restoration is None:
            self._check_kernels(f_r, "restoration")
            x = guided_restoration(r, f_r, frames_per_window)
        else:
            x = self.restoration(r)
        y = self.tail(self.post(x))
        if self.cfg.global_skip:
            y = y + frames
        return y


class Guidance(NamedTuple):
    aux: Optional[torch.Tensor]
    f_e: Optional[torch.Tensor]
    f_r: Optional[torch.Tensor]


class UVEOutput(NamedTuple):
    frames: torch.Tensor
    aux: Optional[torch.Tensor]
    f_e: Optional[torch.Tensor]
    f_r: Optional[torch.Tensor]


class UVENet(nn.Module):
    """Full network. Outputs are clamped to [0, 1] in eval mode only."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.aenet = AENet(cfg) if cfg.use_aenet else None
        self.dckg_e = DCKG(cfg.guidance_channels, cfg.dckg_depth) if cfg.use_fegm else None
        self.dckg_r = DCKG(cfg.guidance_channels, cfg.dckg_depth) if cfg.use_frgm else None
        self.venet = VENet(cfg)

    @property
    def aenet_calls(self) -> int:
        return 0 if self.aenet is None else self.aenet.calls

    def guide(self, middle: torch.Tensor) -> Guidance:
        """Run the auxiliary branch once on ``(B, 3, H, W)`` middle frames."""
        if self.aenet is None:
            return Guidance(None, None, None)
        p_hat, m, l = self.aenet(downsample(middle, self.cfg.downsample_factor))
        f_e = kernels_from_feature(m, self.dckg_e) if self.dckg_e is not None else None
        f_r = kernels_from_feature(l, self.dckg_r) if self.dckg_r is not None else None
        if not self.training:
            p_hat = p_hat.clamp(0, 1)
        return Guidance(p_hat, f_e, f_r)

    def enhance(self, frames: torch.Tensor, guidance: Guidance, frames_per_window: int) -> torch.Tensor:
        y = self.venet(frames, frames_per_window, guidance.f_e, guidance.f_r)
        return y if self.training else y.clamp(0, 1)

    def forward(self, x: torch.Tensor) -> UVEOutput:
        """``x``: one window ``(T, 3, H, W)`` or a batch ``(B, T, 3, H, W)``."""
        single = x.dim() == 4
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 5 or x.shape[2] != 3:
            raise ShapeError(f"expected (B, T, 3, H, W) or (T, 3, H, W), got {tuple(x.shape)}")
        b, t, _, h, w = x.shape
        if t != self.cfg.window_length:
            raise ShapeError(f"window has {t} frames, configuration expects 2t+1 = {self.cfg.window_length}")
        g = self.guide(x[:, t // 2])
        y = self.enhance(x.reshape(b * t, 3, h, w), g, t).reshape(b, t, 3, h, w)
        aux = g.aux
        if single:
            y = y[0]
        return UVEOutput(y, aux, g.f_e, g.f_r)


def receptive_radius(cfg: ModelConfig) -> int:
    """Upper bound, in full-resolution pixels, on how far the main branch looks from an output pixel.

    A 3x3 conv at scale 1/s adds ``s`` pixels; each unshuffle/shuffle pair can
    add up to ``block - 1`` more through block alignment. Tiles with at least
    this much context reproduce the untiled output.
    """
    r = 1 + 2 * cfg.blocks_r6  # head + pre
    r += 2 * 2 * cfg.blocks_r2  # mid, at 1/2 scale
    r += 2 * cfg.blocks_r6 + 1  # post + tail
    for guided in (cfg.use_fegm, cfg.use_frgm):
        r += 4 * (1 if guided else cfg.dckg_depth) + 2 * 3
    return r


def build_model(cfg: ModelConfig, seed: Optional[int] = None, dtype=torch.float32) -> UVENet:
    if seed is not None:
        torch.manual_seed(seed)
    return UVENet(cfg).to(dtype)


def zero_residual_(model: nn.Module) -> nn.Module:
    """Zero every parameter in place; with global skips the model becomes the identity."""
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def atomic_torch_save(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: UVENet, optimizer=None, **extra) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    payload.update(extra)
    atomic_torch_save(payload, path)


def read_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    return payload


def load_checkpoint(path, dtype=torch.float32):
    """Rebuild the model stored in ``path``; returns ``(model, payload)``.

    Raises :class:`CheckpointError` when the stored tensors do not match the
    stored configuration.
    """
    payload = read_checkpoint(path)
    cfg = ModelConfig.from_dict(payload["config"])
    model = UVENet(cfg)
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    found = {k: tuple(v.shape) for k, v in payload["state_dict"].items()}
    problems = []
    for k in sorted(set(expected) | set(found)):
        if k not in found:
            problems.append(f"missing {k}")
        elif k not in expected:
            problems.append(f"unexpected {k}")
        elif expected[k] != found[k]:
            problems.append(f"{k}: config implies {expected[k]}, archive has {found[k]}")
    if problems:
        raise CheckpointError(f"{path}: checkpoint does not match its config: " + "; ".join(problems[:10]))
    model.load_state_dict(payload["state_dict"])
    return model.to(dtype), payload
