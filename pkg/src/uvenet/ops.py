"""Tensor vocabulary shared by the network modules.

Frames and features are plain ``torch.Tensor`` objects laid out as
``(count, channels, height, width)``. Pixel tensors hold values in [0, 1];
feature tensors are unbounded. The helpers below do the shape bookkeeping
and raise :class:`ShapeError` with the offending axis named.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

_AXIS_NAMES = {0: "count", 1: "channels", 2: "height", 3: "width"}


class ShapeError(ValueError):
    """An input tensor has a shape the operation cannot accept."""


class ConfigError(ValueError):
    """Inconsistent configuration (model, guidance or training)."""


def check_4d(x: torch.Tensor, name: str = "input") -> None:
    if x.dim() != 4:
        raise ShapeError(f"{name} must be 4-D (count, channels, height, width), got shape {tuple(x.shape)}")


def check_divisible(x: torch.Tensor, axis: int, factor: int, name: str = "input") -> None:
    size = x.shape[axis]
    if size % factor:
        raise ShapeError(
            f"{name}: {_AXIS_NAMES.get(axis, axis)} (axis {axis}) of size {size} is not divisible by {factor}"
        )


def check_pixels(x: torch.Tensor, name: str = "frames") -> None:
    if x.numel() and (x.min() < 0 or x.max() > 1):
        raise ShapeError(f"{name} must be pixel data in [0, 1], got range [{x.min().item():.4g}, {x.max().item():.4g}]")


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Space-to-channel rearrangement: ``(N, K, H, W) -> (N, K*r*r, H/r, W/r)``.

    Output channel ``k*r*r + i*r + j`` holds the input pixels at
    ``(r*y + i, r*x + j)`` of channel ``k``.
    """
    if r < 1:
        raise ValueError(f"rate must be a positive integer, got {r}")
    check_4d(x)
    check_divisible(x, 2, r)
    check_divisible(x, 3, r)
    n, k, h, w = x.shape
    x = x.reshape(n, k, h // r, r, w // r, r)
    x = x.permute(0, 1, 3, 5, 2, 4)
    return x.reshape(n, k * r * r, h // r, w // r)


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Channel-to-space rearrangement, the exact inverse of :func:`pixel_unshuffle`."""
    if r < 1:
        raise ValueError(f"rate must be a positive integer, got {r}")
    check_4d(x)
    check_divisible(x, 1, r * r)
    n, k, h, w = x.shape
    x = x.reshape(n, k // (r * r), r, r, h, w)
    x = x.permute(0, 1, 4, 2, 5, 3)
    return x.reshape(n, k // (r * r), h * r, w * r)


def downsample(x: torch.Tensor, factor: int = 4) -> torch.Tensor:
    """Bilinear downsampling by an integer factor (``align_corners=False``)."""
    check_4d(x)
    check_divisible(x, 2, factor)
    check_divisible(x, 3, factor)
    size = (x.shape[2] // factor, x.shape[3] // factor)
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)
