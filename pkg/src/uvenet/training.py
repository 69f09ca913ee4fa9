"""Charbonnier objective over both branches and the optimisation loop."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
import yaml

from .data import sample_window
from .model import ModelConfig, UVENet, save_checkpoint
from .ops import ConfigError, ShapeError, downsample

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = {"model", "train", "inference", "synth", "aggregate"}
LOG_COLUMNS = ("iteration", "main_loss", "aux_loss", "total", "wall_seconds")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 2e-4
    total_iterations: int = 150_000
    batch_windows: int = 4
    patch_size: int = 512
    charbonnier_eps: float = 1e-3
    seed: int = 0
    lr_schedule: str = "cosine"
    min_learning_rate: float = 1e-7
    grad_clip: Optional[float] = None
    log_every: int = 100
    checkpoint_every: int = 5000

    def __post_init__(self):
        if self.patch_size % 16:
            raise ConfigError(f"patch_size must be divisible by 16, got {self.patch_size}")
        if self.batch_windows < 1:
            raise ConfigError("batch_windows must be >= 1")
        if self.charbonnier_eps <= 0:
            raise ConfigError("charbonnier_eps must be > 0")
        if self.total_iterations < 0 or self.learning_rate < 0:
            raise ConfigError("total_iterations and learning_rate must be non-negative")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("log_every and checkpoint_every must be >= 1")


def load_config(path) -> tuple[ModelConfig, TrainingConfig]:
    """Read a YAML file with optional ``model:`` and ``train:`` sections.

    Model keys are the :class:`ModelConfig` fields plus ``preset: full|simplified``;
    train keys are the :class:`TrainingConfig` fields.
    """
    doc = yaml.safe_load(Path(path).read_text()) or {}
    unknown = set(doc) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model_doc = dict(doc.get("model") or {})
    preset = model_doc.pop("preset", "full")
    if preset not in ("full", "simplified"):
        raise ConfigError(f"model.preset must be 'full' or 'simplified', got {preset!r}")
    mcfg = getattr(ModelConfig, preset)(**model_doc)
    train_doc = doc.get("train") or {}
    known = {f.name for f in dataclasses.fields(TrainingConfig)}
    if set(train_doc) - known:
        raise ConfigError(f"unknown train keys: {sorted(set(train_doc) - known)}")
    return mcfg, TrainingConfig(**train_doc)


def charbonnier(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Mean of ``sqrt((pred - target)^2 + eps^2)``; equals ``eps`` when the inputs agree."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return torch.sqrt((pred - target) ** 2 + eps * eps).mean()


class LossBreakdown(NamedTuple):
    main_loss: torch.Tensor
    aux_loss: torch.Tensor
    total: torch.Tensor


def total_loss(enhanced, gt, aux_out=None, aux_gt=None, eps: float = 1e-3) -> LossBreakdown:
    """Main-branch loss averaged over window frames plus the auxiliary-branch loss.

    ``enhanced``/``gt`` are ``(T, 3, H, W)`` or ``(B, T, 3, H, W)``. Pass
    ``aux_out=None`` when the auxiliary branch is disabled.
    """
    if enhanced.dim() == 4:
        enhanced = enhanced.unsqueeze(0)
    if gt.dim() == 4:
        gt = gt.unsqueeze(0)
    if gt.dim() != 5 or enhanced.shape[1] != gt.shape[1]:
        raise ShapeError(f"window length mismatch: enhanced {tuple(enhanced.shape)} vs gt {tuple(gt.shape)}")
    frames = enhanced.shape[1]
    main = sum(charbonnier(enhanced[:, k], gt[:, k], eps) for k in range(frames)) / frames
    if aux_out is None:
        aux = torch.zeros((), dtype=main.dtype, device=main.device)
    else:
        if aux_gt is None:
            raise ValueError("aux_gt is required when aux_out is given")
        aux = charbonnier(aux_out, aux_gt, eps)
    return LossBreakdown(main, aux, main + aux)


def model_loss(model: UVENet, raw: torch.Tensor, gt: torch.Tensor, eps: float) -> LossBreakdown:
    """Forward a ``(B, T, 3, H, W)`` batch and evaluate the objective."""
    out = model(raw)
    aux_gt = None
    if out.aux is not None:
        aux_gt = downsample(gt[:, gt.shape[1] // 2], model.cfg.downsample_factor)
    return total_loss(out.frames, gt, out.aux, aux_gt, eps)


class WindowSampler:
    """Random ``(raw, gt)`` window batches with one crop offset shared by all frames of a window."""

    def __init__(self, clips: Sequence, t: int, patch_size: int, batch_windows: int, seed: int = 0):
        if len(clips) == 0:
            raise ConfigError("dataset is empty")
        self.clips = list(clips)
        self.t, self.patch, self.batch = t, patch_size, batch_windows
        self.rng = np.random.default_rng(seed)

    def crop_offsets(self, h: int, w: int) -> tuple[int, int]:
        return int(self.rng.integers(0, h - self.patch + 1)), int(self.rng.integers(0, w - self.patch + 1))

    def sample(self):
        raws, gts = [], []
        for _ in range(self.batch):
            clip = self.clips[int(self.rng.integers(len(self.clips)))]
            center = int(self.rng.integers(len(clip)))
            raw, gt = sample_window(clip, center, self.t)
            h, w = raw.shape[-2:]
            if h < self.patch or w < self.patch:
                raise ConfigError(f"clip {clip.clip_id} ({h}x{w}) is smaller than patch_size {self.patch}")
            y, x = self.crop_offsets(h, w)
            sl = (slice(None), slice(None), slice(y, y + self.patch), slice(x, x + self.patch))
            raws.append(raw[sl])
            gts.append(gt[sl])
        return torch.from_numpy(np.stack(raws)), torch.from_numpy(np.stack(gts))


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, last_checkpoint: Optional[Path]):
        super().__init__(f"non-finite loss at iteration {iteration}; last good checkpoint: {last_checkpoint}")
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    history: list
    checkpoint: Optional[Path]
    iterations: int


def make_scheduler(optimizer, tcfg: TrainingConfig):
    if tcfg.lr_schedule == "constant" or tcfg.total_iterations == 0:
        return None
    return torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=tcfg.total_iterations, eta_min=min(tcfg.min_learning_rate, tcfg.learning_rate)
    )


def train(model: UVENet, dataset: Sequence, tcfg: TrainingConfig, out_dir=None,
          checkpoint_name: str = "last.pt", callback=None) -> TrainResult:
    """Optimise ``model`` on window batches drawn from ``dataset`` (a sequence of clips).

    Writes ``metrics.csv`` and periodic checkpoints to ``out_dir`` when given.
    A non-finite loss raises :class:`TrainingDiverged`; the checkpoint on disk
    is then the last one written before the failure.

    ``callback(iteration, model)`` runs at every log point; a truthy return
    stops training after that iteration.
    """
    torch.manual_seed(tcfg.seed)
    sampler = WindowSampler(dataset, model.cfg.temporal_radius, tcfg.patch_size, tcfg.batch_windows, tcfg.seed)
    dtype = next(model.parameters()).dtype
    optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate)
    scheduler = make_scheduler(optimizer, tcfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = None
    log_file = writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.csv"
        fresh = not log_path.exists()
        log_file = open(log_path, "a", newline="")
        writer = csv.writer(log_file)
        if fresh:
            writer.writerow(LOG_COLUMNS)
    history = []
    start = time.perf_counter()
    model.train()
    it = 0
    try:
        for it in range(1, tcfg.total_iterations + 1):
            raw, gt = sampler.sample()
            loss = model_loss(model, raw.to(dtype), gt.to(dtype), tcfg.charbonnier_eps)
            if not torch.isfinite(loss.total):
                raise TrainingDiverged(it, ckpt_path)
            optimizer.zero_grad(set_to_none=True)
            loss.total.backward()
            if tcfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip)
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            if it % tcfg.log_every == 0 or it == tcfg.total_iterations:
                row = (it, loss.main_loss.item(), loss.aux_loss.item(), loss.total.item(),
                       time.perf_counter() - start)
                history.append(dict(zip(LOG_COLUMNS, row)))
                if writer is not None:
                    writer.writerow(row)
                    log_file.flush()
                logger.info("iter %d total %.6f", it, row[3])
                stop = bool(callback(it, model)) if callback is not None else False
                model.train()
            else:
                stop = False
            if out_dir is not None and (it % tcfg.checkpoint_every == 0 or it == tcfg.total_iterations or stop):
                ckpt_path = out_dir / checkpoint_name
                save_checkpoint(ckpt_path, model, optimizer, iteration=it,
                                train_config=dataclasses.asdict(tcfg))
            if stop:
                break
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(history, ckpt_path, it)


def loss_floor(cfg: ModelConfig, eps: float) -> float:
    """Smallest attainable objective value."""
    return 2 * eps if cfg.use_aenet else eps
