"""Full-reference metrics, brightness-flicker curves and a time/memory benchmark.

PSNR and MSE are computed on the 8-bit scale (inputs in [0, 1] are multiplied
by 255); reports carry MSE divided by 1000 next to PSNR in dB.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
import weakref
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch.utils._python_dispatch import TorchDispatchMode
from torch.utils._pytree import tree_flatten

from .ops import ShapeError

PSNR_CAP_DB = 100.0
PEAK = 255.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr_mse(pred, target) -> tuple[float, float]:
    """Return ``(psnr_db, mse_raw)`` for frames with values in [0, 1].

    PSNR is capped at 100 dB once the 8-bit MSE drops below ``255**2 * 1e-10``.
    """
    a, b = _as_array(pred), _as_array(target)
    if a.shape != b.shape:
        raise ShapeError(f"prediction {a.shape} and target {b.shape} differ")
    mse = float(np.mean((a * PEAK - b * PEAK) ** 2))
    if mse < PEAK**2 * 1e-10:
        return PSNR_CAP_DB, mse
    return 10.0 * math.log10(PEAK**2 / mse), mse


@dataclass
class FrameMetric:
    frame: int
    psnr_db: float
    mse_raw: float

    @property
    def mse_scaled(self) -> float:
        return self.mse_raw / 1000.0


@dataclass
class MetricReport:
    psnr_db: float
    mse_scaled: float
    per_frame: list = field(default_factory=list)
    inference_seconds_per_frame: float = float("nan")
    peak_memory_gib: float = float("nan")

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_frame")
        d["frames"] = len(self.per_frame)
        return d


def evaluate_frames(preds, gts) -> MetricReport:
    """Mean of per-frame PSNR and mean of per-frame MSE over paired frame sequences."""
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predicted frames vs {len(gts)} reference frames")
    if len(preds) == 0:
        raise ValueError("no frames to evaluate")
    rows = []
    for i, (p, g) in enumerate(zip(preds, gts)):
        psnr, mse = psnr_mse(p, g)
        rows.append(FrameMetric(i, psnr, mse))
    return MetricReport(
        psnr_db=float(np.mean([r.psnr_db for r in rows])),
        mse_scaled=float(np.mean([r.mse_raw for r in rows])) / 1000.0,
        per_frame=rows,
    )


def write_report(report: MetricReport, csv_path, json_path=None) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "psnr_db", "mse_raw", "mse_scaled"])
        for r in report.per_frame:
            w.writerow([r.frame, f"{r.psnr_db:.6f}", f"{r.mse_raw:.6f}", f"{r.mse_scaled:.9f}"])
    if json_path is not None:
        Path(json_path).write_text(json.dumps(report.summary(), indent=2))


@dataclass
class BrightnessCurve:
    per_frame_luma: list
    mean_abs_diff: float
    max_jump: float


def frame_luma(frame) -> float:
    """Mean BT.601 luma of a ``(3, H, W)`` frame on the 0-255 scale."""
    f = _as_array(frame)
    if f.ndim != 3 or f.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) frame, got {f.shape}")
    w = np.asarray(LUMA_WEIGHTS)[:, None, None]
    return float((f * w).sum(axis=0).mean() * PEAK)


def brightness_curve(frames) -> BrightnessCurve:
    if len(frames) < 2:
        raise ValueError("a brightness curve needs at least two frames")
    luma = [frame_luma(f) for f in frames]
    diffs = np.abs(np.diff(luma))
    return BrightnessCurve(luma, float(diffs.mean()), float(diffs.max()))


def write_curve_csv(curve: BrightnessCurve, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "luma"])
        for i, v in enumerate(curve.per_frame_luma):
            w.writerow([i, f"{v:.6f}"])


class LiveTensorMeter(TorchDispatchMode):
    """Tracks bytes held by tensors created inside the context and their peak.

    Works on any device by following storage lifetimes at the dispatcher
    level. Tensors that existed before entering (parameters, inputs) are not
    counted; add them separately.
    """

    def __init__(self):
        super().__init__()
        self._live = {}
        self.current = 0
        self.peak = 0

    def _release(self, key):
        entry = self._live.get(key)
        if entry is None:
            return
        entry[1] -= 1
        if entry[1] == 0:
            self.current -= entry[0]
            del self._live[key]

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        for t in tree_flatten(out)[0]:
            if not isinstance(t, torch.Tensor):
                continue
            storage = t.untyped_storage()
            key = (storage.device.type, storage.data_ptr())
            if key in self._live:
                self._live[key][1] += 1
            else:
                self._live[key] = [storage.nbytes(), 1]
                self.current += storage.nbytes()
                self.peak = max(self.peak, self.current)
            weakref.finalize(t, self._release, key)
        return out


@dataclass
class BenchmarkResult:
    seconds_per_frame: float = float("nan")
    peak_memory_gib: float = float("nan")
    windows_timed: int = 0
    device: str = "cpu"
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _is_oom(exc: BaseException) -> bool:
    return isinstance(exc, MemoryError) or "out of memory" in str(exc).lower()


def benchmark(model, clip, device: str = "cpu", repeats: int = 10, warmup: int = 1) -> BenchmarkResult:
    """Median wall time per output frame over ``repeats`` windows, plus peak inference memory.

    ``clip`` is a ``(T, 3, H, W)`` window (tensor or array). Peak memory counts
    parameters, the input and every tensor alive during one forward pass.
    Out-of-memory conditions come back as a result with ``error`` set.
    """
    x = torch.as_tensor(np.asarray(clip) if not isinstance(clip, torch.Tensor) else clip)
    dtype = next(model.parameters()).dtype
    x = x.to(device=device, dtype=dtype)
    model = model.to(device).eval()
    frames = x.shape[0]
    result = BenchmarkResult(device=device)
    try:
        with torch.no_grad():
            for _ in range(warmup):
                model(x)
            times = []
            for _ in range(max(repeats, 1)):
                if device.startswith("cuda"):
                    torch.cuda.synchronize()
                t0 = time.perf_counter()
                model(x)
                if device.startswith("cuda"):
                    torch.cuda.synchronize()
                times.append((time.perf_counter() - t0) / frames)
            static = sum(p.numel() * p.element_size() for p in model.parameters())
            static += x.numel() * x.element_size()
            with LiveTensorMeter() as meter:
                out = model(x)
            del out
    except (RuntimeError, MemoryError) as exc:
        if not _is_oom(exc):
            raise
        result.error = f"out of memory: {exc}"
        return result
    result.seconds_per_frame = statistics.median(times)
    result.peak_memory_gib = (static + meter.peak) / 2**30
    result.windows_timed = len(times)
    return result


def attach_benchmark(report: MetricReport, bench: BenchmarkResult) -> MetricReport:
    report.inference_seconds_per_frame = bench.seconds_per_frame
    report.peak_memory_gib = bench.peak_memory_gib
    return report
