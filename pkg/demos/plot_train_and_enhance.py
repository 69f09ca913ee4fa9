"""
Train a small model and enhance a clip
======================================

A reduced network is fitted to a handful of synthetic clips, then a longer
clip is enhanced window by window. The auxiliary branch runs once per window.
"""

import tempfile
from pathlib import Path

import torch

from uvenet import ModelConfig, TrainingConfig, build_model, enhance_clip, load_checkpoint, plan, train
from uvenet.data import synthetic_clips
from uvenet.evaluation import benchmark, evaluate_frames

torch.set_num_threads(1)
cfg = ModelConfig.simplified(base_channels=8)
clips = synthetic_clips(4, 6, 64, 64, seed=0, casts=["green"])
test = synthetic_clips(1, 10, 64, 64, seed=99, casts=["green"])[0]

model = build_model(cfg, seed=0)
print("parameters:", sum(p.numel() for p in model.parameters()))
before = evaluate_frames(enhance_clip(model, test.raw).frames.numpy(), test.gt).psnr_db

out = Path(tempfile.mkdtemp())
tcfg = TrainingConfig(learning_rate=1e-3, total_iterations=300, batch_windows=2, patch_size=64,
                      log_every=50, checkpoint_every=300)
result = train(model, clips, tcfg, out_dir=out)
for row in result.history:
    print("iter %4d  loss %.4f" % (row["iteration"], row["total"]))

# reload from disk, as the enhance command would
model, _ = load_checkpoint(result.checkpoint)
p = plan(len(test.raw), cfg.temporal_radius)
print("windows:", [(w.center, w.members, w.emit) for w in p.windows])
res = enhance_clip(model, test.raw, p)
after = evaluate_frames(res.frames.numpy(), test.gt).psnr_db
raw = evaluate_frames(test.raw, test.gt).psnr_db
print(f"psnr raw {raw:.2f} dB, untrained {before:.2f} dB, trained {after:.2f} dB")
print("auxiliary passes:", res.aenet_activations, "for", len(test.raw), "frames")

# tiled inference reuses the window's guidance and matches the untiled output
tiled = enhance_clip(model, test.raw, p, tile=True, tile_size=32, tile_overlap=16)
print("tiled max diff:", (tiled.frames - res.frames).abs().max().item())

bench = benchmark(model, torch.rand(cfg.window_length, 3, 128, 128), repeats=3)
print(f"{bench.seconds_per_frame * 1000:.1f} ms/frame, peak {bench.peak_memory_gib * 1024:.1f} MiB at 128x128")
