"""Whole-clip enhancement by non-overlapping temporal windows.

Each window of ``2t+1`` frames costs one auxiliary-branch pass. A clip of
length ``L`` is covered by ``L // (2t+1)`` full windows plus, when frames
remain, one final window placed against the clip end whose members are
reflected as needed and which emits only the leftover frames.

Frames whose size is not a multiple of 16 are reflect-padded and cropped back.
Oversized frames can be processed in spatial tiles: the guidance kernels are
computed once from the whole (downsampled) middle frame and the main branch runs
per tile. Each tile carries enough surrounding context to cover the main
branch's receptive field, and neighbouring tiles are blended by linear
feathering over their overlap.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .data import window_indices
from .model import receptive_radius

ALIGN = 16


@dataclass(frozen=True)
class Window:
    center: int
    members: tuple
    emit: tuple


@dataclass(frozen=True)
class TileSpec:
    size: int
    overlap: int

    def __post_init__(self):
        if self.size % ALIGN or self.overlap % ALIGN:
            raise ValueError(f"tile size and overlap must be multiples of {ALIGN}")
        if self.overlap < 8:
            raise ValueError("tile overlap must be at least 8 px")
        if self.overlap >= self.size:
            raise ValueError("tile overlap must be smaller than the tile")


@dataclass
class InferencePlan:
    length: int
    t: int
    windows: list
    window_stride: int
    spatial_tiles: Optional[TileSpec] = None

    @property
    def aenet_activations(self) -> int:
        return len(self.windows)


def plan(length: int, t: int, frame_size=None, memory_budget: Optional[int] = None,
         sliding: bool = False, tile_size: int = 256, tile_overlap: int = 32) -> InferencePlan:
    """Cover ``length`` frames with windows of ``2t+1``.

    ``memory_budget`` is the largest frame (in pixels) processed without
    tiling; ``frame_size`` is ``(height, width)``. ``sliding=True`` uses one
    window per frame (stride 1) instead of the non-overlapping cover.
    """
    if length < 1:
        raise ValueError("clip length must be >= 1")
    if t < 0:
        raise ValueError("t must be >= 0")
    n = 2 * t + 1
    windows = []
    if sliding:
        for c in range(length):
            windows.append(Window(c, tuple(window_indices(c, t, length)), (c,)))
        stride = 1
    else:
        full = length // n
        for k in range(full):
            c = k * n + t
            windows.append(Window(c, tuple(range(c - t, c + t + 1)), tuple(range(c - t, c + t + 1))))
        if length % n:
            c = max(0, length - 1 - t)
            windows.append(Window(c, tuple(window_indices(c, t, length)), tuple(range(full * n, length))))
        stride = n
    tiles = None
    if memory_budget is not None and frame_size is not None:
        h, w = frame_size
        if h * w > memory_budget:
            tiles = TileSpec(tile_size, tile_overlap)
    return InferencePlan(length, t, windows, stride, tiles)


def _padded_size(size: int) -> int:
    return int(math.ceil(size / ALIGN)) * ALIGN


def pad_frames(x: torch.Tensor):
    """Pad ``(N, 3, H, W)`` at the bottom/right to a valid network size; returns ``(padded, (H, W))``."""
    h, w = x.shape[-2:]
    ph, pw = _padded_size(h) - h, _padded_size(w) - w
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)


def _tile_starts(size: int, tile: int, overlap: int) -> list[int]:
    if size <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, size - tile, step))
    starts.append(size - tile)
    return starts


def _ramp(start: int, tile: int, size: int, overlap: int) -> torch.Tensor:
    """1-D feathering weights of one tile: linear ramps on sides shared with a neighbour."""
    pos = torch.arange(tile, dtype=torch.float64)
    w = torch.ones(tile, dtype=torch.float64)
    if start > 0:
        w = torch.minimum(w, (pos + 0.5) / overlap)
    if start + tile < size:
        w = torch.minimum(w, (tile - pos - 0.5) / overlap)
    return w


def _enhance_tiled(model, frames: torch.Tensor, guidance, t_len: int, tiles: TileSpec) -> torch.Tensor:
    n, c, h, w = frames.shape
    size_h, size_w = min(tiles.size, h), min(tiles.size, w)
    # Context around each tile so its core sees exactly what the untiled pass sees.
    halo = _padded_size(receptive_radius(model.cfg))
    out = torch.zeros_like(frames, dtype=torch.float64)
    weight = torch.zeros((1, 1, h, w), dtype=torch.float64)
    for y in _tile_starts(h, size_h, tiles.overlap):
        wy = _ramp(y, size_h, h, tiles.overlap)
        y0, y1 = max(0, y - halo), min(h, y + size_h + halo)
        for x in _tile_starts(w, size_w, tiles.overlap):
            wx = _ramp(x, size_w, w, tiles.overlap)
            x0, x1 = max(0, x - halo), min(w, x + size_w + halo)
            y_hat = model.enhance(frames[:, :, y0:y1, x0:x1], guidance, t_len).to(torch.float64)
            core = y_hat[:, :, y - y0 : y - y0 + size_h, x - x0 : x - x0 + size_w]
            mask = (wy[:, None] * wx[None, :])[None, None]
            out[:, :, y : y + size_h, x : x + size_w] += core * mask
            weight[:, :, y : y + size_h, x : x + size_w] += mask
    return (out / weight).to(frames.dtype)


@dataclass
class EnhanceResult:
    frames: torch.Tensor
    aenet_activations: int
    windows: int
    seconds: float
    per_window_seconds: list = field(default_factory=list)


def enhance_clip(model, clip, inference_plan: Optional[InferencePlan] = None, tile: bool = False,
                 tile_size: int = 256, tile_overlap: int = 32) -> EnhanceResult:
    """Enhance a ``(L, 3, H, W)`` clip (array or tensor, values in [0, 1]).

    Output frames are clamped to [0, 1] and returned in input order.
    ``tile=True`` forces spatial tiling on top of whatever the plan says.
    """
    x = torch.as_tensor(np.asarray(clip)) if not isinstance(clip, torch.Tensor) else clip
    dtype = next(model.parameters()).dtype
    x = x.to(dtype)
    length = x.shape[0]
    t = model.cfg.temporal_radius
    p = inference_plan or plan(length, t)
    if p.length != length or p.t != t:
        raise ValueError(f"plan is for {p.length} frames / t={p.t}, clip has {length} frames / t={t}")
    tiles = p.spatial_tiles
    if tile and tiles is None:
        tiles = TileSpec(tile_size, tile_overlap)
    was_training = model.training
    model.eval()
    calls_before = model.aenet_calls
    out = torch.empty_like(x)
    durations = []
    start = time.perf_counter()
    try:
        with torch.no_grad():
            for win in p.windows:
                t0 = time.perf_counter()
                members = list(win.members)
                frames, (h, w) = pad_frames(x[members])
                guidance = model.guide(frames[t : t + 1])
                if tiles is None:
                    y = model.enhance(frames, guidance, len(members))
                else:
                    y = _enhance_tiled(model, frames, guidance, len(members), tiles)
                y = y[..., :h, :w].clamp(0, 1)
                for idx in win.emit:
                    k = t if members[t] == idx else members.index(idx)
                    out[idx] = y[k]
                durations.append(time.perf_counter() - t0)
    finally:
        model.train(was_training)
    return EnhanceResult(out, model.aenet_calls - calls_before, len(p.windows),
                         time.perf_counter() - start, durations)
