"""Paired clips on disk, temporal windows and a synthetic underwater degradation generator.

On-disk layout::

    root/<split>/<clip_id>/raw/000000.png ...
    root/<split>/<clip_id>/gt/000000.png ...
    root/<split>/<clip_id>/meta.json        (optional: R_q, G_q, cast)
    root/<split>/manifest.json              (written by the generator)

Frames are handled as float32 arrays shaped ``(T, 3, H, W)`` in [0, 1] and
stored as 8-bit PNG.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml
from PIL import Image
from scipy import ndimage

logger = logging.getLogger(__name__)

CASTS = ("blue", "green", "yellow", "white", "other", "low_light")
FRAME_PATTERN = "{:06d}.png"


class DatasetWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# frame IO


def to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_frame(path, frame: np.ndarray) -> None:
    """Write one ``(3, H, W)`` frame in [0, 1] as 8-bit PNG."""
    Image.fromarray(np.ascontiguousarray(to_uint8(frame).transpose(1, 2, 0))).save(path)


def read_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr.transpose(2, 0, 1) / 255.0


def write_frames(directory, frames: np.ndarray) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = directory / FRAME_PATTERN.format(i)
        write_frame(p, frame)
        paths.append(p)
    return paths


def list_frames(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))


def read_frames(directory_or_paths) -> np.ndarray:
    if isinstance(directory_or_paths, (str, Path)):
        paths = list_frames(directory_or_paths)
    else:
        paths = list(directory_or_paths)
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory_or_paths}")
    return np.stack([read_frame(p) for p in paths])


# ---------------------------------------------------------------------------
# clips and windows


def reflect_index(i: int, length: int) -> int:
    """Mirror an out-of-range frame index back into ``[0, length)`` (edge frame not repeated)."""
    if length < 1:
        raise ValueError("clip length must be >= 1")
    if length == 1:
        return 0
    period = 2 * (length - 1)
    i = i % period
    return period - i if i >= length else i


def window_indices(center: int, t: int, length: int) -> list[int]:
    return [reflect_index(i, length) for i in range(center - t, center + t + 1)]


@dataclass
class Clip:
    """A paired clip held in memory."""

    clip_id: str
    raw: np.ndarray
    gt: np.ndarray
    meta: Optional[dict] = None

    def __post_init__(self):
        if self.raw.shape != self.gt.shape:
            raise ValueError(f"{self.clip_id}: raw {self.raw.shape} and gt {self.gt.shape} differ")

    def __len__(self):
        return len(self.raw)

    def load(self, indices: Optional[Sequence[int]] = None):
        if indices is None:
            return self.raw, self.gt
        idx = list(indices)
        return self.raw[idx], self.gt[idx]


@dataclass
class ClipPair:
    """A paired clip on disk; frames are read on demand."""

    clip_id: str
    raw_frames: list[Path]
    gt_frames: list[Path]
    meta: Optional[dict] = None

    def __len__(self):
        return len(self.raw_frames)

    def load(self, indices: Optional[Sequence[int]] = None):
        idx = range(len(self)) if indices is None else indices
        raw = np.stack([read_frame(self.raw_frames[i]) for i in idx])
        gt = np.stack([read_frame(self.gt_frames[i]) for i in idx])
        return raw, gt

    def to_memory(self) -> Clip:
        raw, gt = self.load()
        return Clip(self.clip_id, raw, gt, self.meta)


def sample_window(clip, center: int, t: int):
    """Return index-aligned ``(raw, gt)`` windows of ``2t+1`` frames around ``center``.

    Indices outside the clip are reflected (``-1 -> 1``).
    """
    length = len(clip)
    if not 0 <= center < length:
        raise IndexError(f"center {center} outside clip of length {length}")
    if t < 0 or 2 * t + 1 > length:
        raise ValueError(f"window of 2t+1 = {2 * t + 1} frames does not fit a clip of {length} frames")
    return clip.load(window_indices(center, t, length))


def _validate_clip(clip_dir: Path, min_frames: int) -> ClipPair:
    raw_dir, gt_dir = clip_dir / "raw", clip_dir / "gt"
    if not raw_dir.is_dir():
        raise ValueError("missing raw/ directory")
    if not gt_dir.is_dir():
        raise ValueError("missing gt/ counterpart directory")
    raw, gt = list_frames(raw_dir), list_frames(gt_dir)
    if len(raw) != len(gt):
        raise ValueError(f"frame-count mismatch: {len(raw)} raw vs {len(gt)} gt frames")
    if len(raw) < min_frames:
        raise ValueError(f"only {len(raw)} frames, need at least {min_frames}")
    sizes = set()
    for p in raw + gt:
        try:
            with Image.open(p) as im:
                im.verify()
                sizes.add(im.size)
        except Exception as exc:
            raise ValueError(f"unreadable image {p.name}: {exc}") from exc
    if len(sizes) > 1:
        raise ValueError(f"frames differ in resolution: {sorted(sizes)}")
    meta = None
    meta_path = clip_dir / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    return ClipPair(clip_dir.name, raw, gt, meta)


def scan_dataset(root, split: str, min_frames: int = 1):
    """Discover clips under ``root/split``; returns ``(clips, problems)``.

    ``problems`` lists ``(clip_id, message)`` for every rejected clip.
    """
    base = Path(root) / split
    clips, problems = [], []
    if not base.is_dir():
        return clips, problems
    for clip_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        try:
            clips.append(_validate_clip(clip_dir, min_frames))
        except ValueError as exc:
            problems.append((clip_dir.name, str(exc)))
    return clips, problems


def load_dataset(root, split: str, min_frames: int = 1) -> list[ClipPair]:
    """Valid clips sorted by id. Rejected clips are reported as :class:`DatasetWarning`."""
    clips, problems = scan_dataset(root, split, min_frames)
    for clip_id, msg in problems:
        warnings.warn(f"{split}/{clip_id} rejected: {msg}", DatasetWarning, stacklevel=2)
    if not clips:
        warnings.warn(f"no usable clips under {Path(root) / split}", DatasetWarning, stacklevel=2)
    return clips


# ---------------------------------------------------------------------------
# synthetic degradation


def load_presets(path=None) -> dict:
    if path is None:
        text = resources.files("uvenet").joinpath("presets.yaml").read_text()
    else:
        text = Path(path).read_text()
    presets = yaml.safe_load(text)
    missing = set(CASTS) - set(presets["casts"])
    if missing:
        raise ValueError(f"presets lack casts {sorted(missing)}")
    return presets


@dataclass
class DegradationParams:
    cast: str
    beta: tuple
    backscatter_color: tuple
    depth_curve: list
    blur_sigma: float = 0.0
    gain: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.cast not in CASTS:
            raise ValueError(f"unknown cast {self.cast!r}")
        self.beta = tuple(float(b) for b in self.beta)
        self.backscatter_color = tuple(float(b) for b in self.backscatter_color)
        self.depth_curve = [float(d) for d in self.depth_curve]
        if len(self.beta) != 3 or min(self.beta) < 0:
            raise ValueError(f"beta must be three non-negative values, got {self.beta}")
        if len(self.backscatter_color) != 3 or not all(0 <= b <= 1 for b in self.backscatter_color):
            raise ValueError(f"backscatter_color must be a pixel triple in [0, 1], got {self.backscatter_color}")
        d = np.asarray(self.depth_curve)
        if d.size == 0 or np.any(d <= 0):
            raise ValueError("depth_curve must be non-empty and positive")
        if np.any(np.abs(np.diff(d)) > 0.05 * d[:-1] + 1e-12):
            raise ValueError("depth_curve changes by more than 5% between frames")
        if not 0 < self.gain <= 1:
            raise ValueError(f"gain must lie in (0, 1], got {self.gain}")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma and noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def smooth_depth_curve(n_frames: int, start: float, max_drift: float, rng: np.random.Generator) -> list[float]:
    """Slowly varying positive distance curve with relative steps bounded by ``max_drift``."""
    if not 0 <= max_drift <= 0.05:
        raise ValueError("max_drift must lie in [0, 0.05]")
    steps = ndimage.gaussian_filter1d(rng.uniform(-1, 1, n_frames), sigma=2.0, mode="nearest")
    steps = np.clip(steps / max(np.abs(steps).max(), 1e-12), -1, 1) * max_drift
    d = start * np.cumprod(1 + np.concatenate([[0.0], steps[:-1]]))
    return d.tolist()


def sample_degradation(cast: str, n_frames: int, rng: np.random.Generator, presets: Optional[dict] = None) -> DegradationParams:
    presets = presets or load_presets()
    spec = presets["casts"][cast]

    def draw(lo_hi):
        lo, hi = lo_hi
        return float(rng.uniform(lo, hi))

    return DegradationParams(
        cast=cast,
        beta=tuple(draw(r) for r in spec["beta"]),
        backscatter_color=tuple(draw(r) for r in spec["backscatter"]),
        depth_curve=smooth_depth_curve(n_frames, draw(spec["depth"]), presets.get("depth_drift", 0.02), rng),
        blur_sigma=draw(spec["blur_sigma"]),
        gain=draw(spec["gain"]),
    )


def degrade_clip(clean: np.ndarray, p: DegradationParams, seed: int = 0) -> np.ndarray:
    """Apply attenuation + backscatter, blur, gain (and optional noise) to ``(T, 3, H, W)`` frames.

    Per channel ``c`` and frame ``t``:
    ``I = J * exp(-beta_c d_t) + B_c * (1 - exp(-beta_c d_t))``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 4 or clean.shape[1] != 3:
        raise ValueError(f"expected (T, 3, H, W) frames, got {clean.shape}")
    n = clean.shape[0]
    depth = np.asarray(p.depth_curve, dtype=np.float64)
    if depth.size == 1:
        depth = np.repeat(depth, n)
    if depth.size != n:
        raise ValueError(f"depth_curve has {depth.size} entries for {n} frames")
    beta = np.asarray(p.beta)[None, :, None, None]
    bc = np.asarray(p.backscatter_color)[None, :, None, None]
    trans = np.exp(-beta * depth[:, None, None, None])
    out = clean * trans + bc * (1.0 - trans)
    if p.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=(0, 0, p.blur_sigma, p.blur_sigma), mode="reflect")
    if p.gain != 1:
        out = out * p.gain
    if p.noise_sigma > 0:
        out = out + np.random.default_rng(seed).normal(0.0, p.noise_sigma, out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def make_clean_clip(n_frames: int, height: int, width: int, seed: int = 0, speed: float = 0.6) -> np.ndarray:
    """Procedural stand-in for clean footage: smooth colourful texture drifting over time."""
    rng = np.random.default_rng(seed)
    margin = int(np.ceil(speed * n_frames)) + 8
    canvas = np.empty((3, height + 2 * margin, width + 2 * margin))
    for c in range(3):
        coarse = ndimage.gaussian_filter(rng.normal(size=canvas.shape[1:]), sigma=max(height, width) / 12)
        fine = ndimage.gaussian_filter(rng.normal(size=canvas.shape[1:]), sigma=2.0)
        field_ = coarse / (coarse.std() + 1e-12) + 0.25 * fine / (fine.std() + 1e-12)
        canvas[c] = field_
    canvas = (canvas - canvas.min()) / (canvas.max() - canvas.min())
    canvas = 0.1 + 0.8 * canvas
    angle = rng.uniform(0, 2 * np.pi)
    vy, vx = speed * np.sin(angle), speed * np.cos(angle)
    frames = np.empty((n_frames, 3, height, width), dtype=np.float32)
    for t in range(n_frames):
        dy, dx = vy * t, vx * t
        shifted = ndimage.shift(canvas, (0, dy, dx), order=1, mode="nearest")
        frames[t] = shifted[:, margin : margin + height, margin : margin + width]
    return frames


def _clip_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def synthesize_clip(clean: np.ndarray, cast: str, seed: int, presets: Optional[dict] = None):
    rng = np.random.default_rng(seed)
    params = sample_degradation(cast, len(clean), rng, presets)
    return degrade_clip(clean, params, seed), params


def synthesize_dataset(
    root,
    split: str,
    clean_clips: Iterable,
    seed: int = 0,
    casts: Sequence[str] = CASTS,
    presets: Optional[dict] = None,
    presets_path=None,
) -> dict:
    """Degrade ``(clip_id, frames)`` pairs into the on-disk layout and write a manifest.

    Casts cycle through ``casts`` in clip order. The manifest records every
    parameter set and per-clip seed, so the split can be regenerated exactly.
    """
    presets = presets or load_presets(presets_path)
    base = Path(root) / split
    entries = []
    for i, (clip_id, frames) in enumerate(clean_clips):
        cast = casts[i % len(casts)]
        clip_seed = _clip_seed(seed, i)
        raw, params = synthesize_clip(frames, cast, clip_seed, presets)
        clip_dir = base / clip_id
        write_frames(clip_dir / "gt", frames)
        write_frames(clip_dir / "raw", raw)
        (clip_dir / "meta.json").write_text(json.dumps({"cast": cast}))
        entries.append({"clip_id": clip_id, "seed": clip_seed, "frames": len(frames), "params": params.to_dict()})
    manifest = {"split": split, "seed": seed, "presets": presets, "clips": entries}
    base.mkdir(parents=True, exist_ok=True)
    (base / "manifest.json").write_text(json.dumps(manifest, indent=2))
    logger.info("wrote %d clips to %s", len(entries), base)
    return manifest


def procedural_clips(count: int, n_frames: int, height: int, width: int, seed: int = 0):
    for i in range(count):
        yield f"clip{i:04d}", make_clean_clip(n_frames, height, width, seed=_clip_seed(seed, 10_000 + i))


def synthetic_clips(count: int, n_frames: int, height: int, width: int, seed: int = 0,
                    casts: Sequence[str] = CASTS, quantize: bool = True) -> list[Clip]:
    """In-memory synthetic paired clips (no disk IO).

    With ``quantize`` the frames are rounded to 8-bit levels, matching what a
    PNG round-trip would give.
    """
    clips = []
    for i, (clip_id, clean) in enumerate(procedural_clips(count, n_frames, height, width, seed)):
        cast = casts[i % len(casts)]
        raw, _ = synthesize_clip(clean, cast, _clip_seed(seed, i))
        if quantize:
            clean = to_uint8(clean).astype(np.float32) / 255.0
            raw = to_uint8(raw).astype(np.float32) / 255.0
        clips.append(Clip(clip_id, raw, clean, {"cast": cast}))
    return clips
