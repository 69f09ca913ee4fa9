"""
Synthetic underwater clips
==========================

Clean frames are pushed through a simple attenuation plus backscatter model
with a slowly drifting scene depth. Each colour cast has its own range of
parameters in a YAML preset file.
"""

import numpy as np

from uvenet.data import CASTS, degrade_clip, make_clean_clip, sample_degradation
from uvenet.evaluation import brightness_curve, psnr_mse

rng = np.random.default_rng(7)
clean = make_clean_clip(12, 64, 64, seed=1)
print("clean clip", clean.shape, "flicker %.3f" % brightness_curve(clean).mean_abs_diff)

for cast in CASTS:
    p = sample_degradation(cast, len(clean), rng)
    raw = degrade_clip(clean, p, seed=0)
    psnr, _ = psnr_mse(raw, clean)
    # mean colour of the degraded clip shows the cast
    rgb = raw.mean(axis=(0, 2, 3))
    curve = brightness_curve(raw)
    print(f"{cast:10s} rgb {np.round(rgb, 2)}  psnr vs clean {psnr:5.2f} dB  flicker {curve.mean_abs_diff:.3f}")

# zero attenuation with unit gain leaves the clip untouched
p = sample_degradation("blue", len(clean), rng)
null = degrade_clip(clean, type(p)("blue", (0, 0, 0), p.backscatter_color, p.depth_curve))
print("null degradation is identity:", np.array_equal(null, clean))
