"""Kernel guidance: the auxiliary branch feeds per-window depthwise kernels to the main branch.

Two steps are involved. :class:`DCKG` turns an unshuffled auxiliary feature
``(N, 16C, h, w)`` into one 3x3 kernel per channel. :func:`apply_dynamic_depthwise`
then convolves every frame of a window with that window's kernels.
The guided extraction / restoration stages wrap those two steps between
pixel (un)shuffles:

    F_e = shuffle2(apply(unshuffle4(E), DCKG(unshuffle4(M))))
    F_r = shuffle4(apply(unshuffle2(R), DCKG(unshuffle4(L))))
"""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .ops import ConfigError, ShapeError, check_4d, pixel_shuffle, pixel_unshuffle

KERNEL_SIZE = 3


class DCKG(nn.Module):
    """Dynamic convolution kernel generation.

    Adaptive average pooling to the kernel footprint followed by ``depth``
    grouped 3x3 convolutions (one group per channel, ReLU in between).
    Inputs smaller than 3x3 (32-pixel frames give 2x2) are pooled with
    overlapping bins.
    The output ``(N, K, 3, 3)`` is read as one depthwise kernel per channel.
    """

    def __init__(self, channels: int, depth: int = 2):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"DCKG depth must be >= 1, got {depth}")
        self.channels = channels
        self.pool = nn.AdaptiveAvgPool2d(KERNEL_SIZE)
        layers = []
        for i in range(depth):
            if i:
                layers.append(nn.ReLU(inplace=False))
            layers.append(nn.Conv2d(channels, channels, KERNEL_SIZE, padding=1, groups=channels))
        self.body = nn.Sequential(*layers)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        check_4d(feature, "DCKG input")
        if feature.shape[1] != self.channels:
            raise ConfigError(f"DCKG expects {self.channels} channels, got {feature.shape[1]}")
        if min(feature.shape[-2:]) < 1:
            raise ShapeError(f"DCKG input has empty spatial extent {tuple(feature.shape[-2:])}")
        return self.body(self.pool(feature))


def apply_dynamic_depthwise(
    feature: torch.Tensor, kernels: torch.Tensor, frames_per_window: Optional[int] = None
) -> torch.Tensor:
    """Convolve each channel of each frame with its window's kernel.

    ``feature`` is ``(B*T, K, h, w)`` with the T frames of each window stored
    contiguously; ``kernels`` is ``(B, K, 3, 3)``. Zero padding, stride 1.
    """
    check_4d(feature, "feature")
    if kernels.dim() != 4 or kernels.shape[-2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise ShapeError(f"kernels must be (windows, channels, 3, 3), got {tuple(kernels.shape)}")
    n, k, h, w = feature.shape
    b = kernels.shape[0]
    if kernels.shape[1] != k:
        raise ConfigError(f"kernel channels ({kernels.shape[1]}) do not match feature channels ({k})")
    if frames_per_window is None:
        if n % b:
            raise ShapeError(f"{n} frames cannot be split evenly over {b} kernel sets")
        frames_per_window = n // b
    if b * frames_per_window != n:
        raise ShapeError(f"{n} frames != {b} windows x {frames_per_window} frames")
    t = frames_per_window
    # Stack the windows along channels so one grouped conv applies every kernel set.
    x = feature.reshape(b, t, k, h, w).transpose(0, 1).reshape(t, b * k, h, w)
    weight = kernels.reshape(b * k, 1, KERNEL_SIZE, KERNEL_SIZE)
    y = F.conv2d(x, weight, padding=KERNEL_SIZE // 2, groups=b * k)
    return y.reshape(t, b, k, h, w).transpose(0, 1).reshape(n, k, h, w)


def kernels_from_feature(feature: torch.Tensor, dckg: DCKG) -> torch.Tensor:
    """``(B, C, H/4, W/4)`` auxiliary feature to ``(B, 16C, 3, 3)`` kernels."""
    return dckg(pixel_unshuffle(feature, 4))


def guided_extraction(e: torch.Tensor, kernels: torch.Tensor, frames_per_window: Optional[int] = None) -> torch.Tensor:
    """``(B*T, C, H, W) -> (B*T, 4C, H/2, W/2)`` under precomputed extraction kernels."""
    try:
        return pixel_shuffle(apply_dynamic_depthwise(pixel_unshuffle(e, 4), kernels, frames_per_window), 2)
    except ShapeError as exc:
        raise ShapeError(f"FEGM: {exc}") from exc


def guided_restoration(r: torch.Tensor, kernels: torch.Tensor, frames_per_window: Optional[int] = None) -> torch.Tensor:
    """``(B*T, 4C, H/2, W/2) -> (B*T, C, H, W)`` under precomputed restoration kernels."""
    try:
        return pixel_shuffle(apply_dynamic_depthwise(pixel_unshuffle(r, 2), kernels, frames_per_window), 4)
    except ShapeError as exc:
        raise ShapeError(f"FRGM: {exc}") from exc


def fegm(e_frames: torch.Tensor, m: torch.Tensor, dckg: DCKG, frames_per_window: Optional[int] = None) -> torch.Tensor:
    """Feature extraction guidance for whole windows.

    Args:
        e_frames: initial main-branch features ``(B*T, C, H, W)``.
        m: auxiliary middle feature ``(B, C, H/4, W/4)``.
        dckg: kernel generator for ``16C`` channels.
    """
    try:
        kernels = kernels_from_feature(m, dckg)
    except ShapeError as exc:
        raise ShapeError(f"FEGM: {exc}") from exc
    return guided_extraction(e_frames, kernels, frames_per_window)


def frgm(r_frames: torch.Tensor, l: torch.Tensor, dckg: DCKG, frames_per_window: Optional[int] = None) -> torch.Tensor:
    """Feature restoration guidance: ``R (B*T, 4C, H/2, W/2)`` and ``L (B, C, H/4, W/4)`` to ``(B*T, C, H, W)``."""
    try:
        kernels = kernels_from_feature(l, dckg)
    except ShapeError as exc:
        raise ShapeError(f"FRGM: {exc}") from exc
    return guided_restoration(r_frames, kernels, frames_per_window)


class StaticGuidance(nn.Module):
    """Ablation stand-in for a guidance stage.

    Performs the same unshuffle -> 3x3 depthwise -> shuffle shape change but
    with learned static filters. Two depthwise convs with biases give the
    same parameter count as a two-layer :class:`DCKG`.
    """

    def __init__(self, channels: int, down: int, up: int, depth: int = 2):
        super().__init__()
        inner = channels * down * down
        self.down, self.up = down, up
        layers = []
        for i in range(depth):
            if i:
                layers.append(nn.ReLU(inplace=False))
            layers.append(nn.Conv2d(inner, inner, KERNEL_SIZE, padding=1, groups=inner))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return pixel_shuffle(self.body(pixel_unshuffle(x, self.down)), self.up)


def delta_kernels(windows: int, channels: int, dtype=torch.float32) -> torch.Tensor:
    """Identity kernels: 1 at the centre tap, 0 elsewhere."""
    k = torch.zeros(windows, channels, KERNEL_SIZE, KERNEL_SIZE, dtype=dtype)
    k[:, :, KERNEL_SIZE // 2, KERNEL_SIZE // 2] = 1
    return k


def format_kernels(kernels: torch.Tensor, max_channels: Optional[int] = None, precision: int = 4) -> str:
    """Plain-text dump of per-channel 3x3 kernel grids, for debugging."""
    if kernels.dim() == 3:
        kernels = kernels.unsqueeze(0)
    lines = []
    kernels = kernels.detach().cpu()
    for s in range(kernels.shape[0]):
        channels = kernels.shape[1] if max_channels is None else min(max_channels, kernels.shape[1])
        for c in range(channels):
            lines.append(f"window {s} channel {c}")
            for row in kernels[s, c].tolist():
                lines.append("  " + " ".join(f"{v:+.{precision}f}" for v in row))
    return "\n".join(lines)
