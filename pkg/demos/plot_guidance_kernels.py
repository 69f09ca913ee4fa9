"""
Dynamic kernels from the auxiliary branch
=========================================

The auxiliary branch looks at a small copy of the middle frame. Its feature
is turned into one 3x3 kernel per channel, and those kernels filter the
full-resolution features of every frame in the window.
"""

import torch

from uvenet.guidance import DCKG, delta_kernels, fegm, format_kernels, guided_extraction
from uvenet.ops import pixel_shuffle, pixel_unshuffle

torch.manual_seed(0)

# pixel unshuffle trades resolution for channels without losing anything
x = torch.arange(2 * 8 * 8, dtype=torch.float32).view(1, 2, 8, 8)
u = pixel_unshuffle(x, 4)
print("unshuffled", tuple(x.shape), "->", tuple(u.shape))
print("round trip exact:", torch.equal(pixel_shuffle(u, 4), x))

# C = 4 base channels, so guidance works on 16C = 64 channels
c, h, w = 4, 64, 64
e = torch.rand(3, c, h, w)          # main-branch features of a 3-frame window
m = torch.rand(1, c, h // 4, w // 4)  # auxiliary feature of the middle frame

dckg = DCKG(16 * c)
kernels = dckg(pixel_unshuffle(m, 4))
print("kernels", tuple(kernels.shape))
print(format_kernels(kernels, max_channels=2, precision=3))

f_e = fegm(e, m, dckg, frames_per_window=3)
print("guided extraction", tuple(e.shape), "->", tuple(f_e.shape))

# a different auxiliary frame gives different kernels
other = dckg(pixel_unshuffle(torch.rand_like(m), 4))
print("kernels change with the input:", not torch.allclose(kernels, other))

# with identity kernels the module is a pure rearrangement
ident = guided_extraction(e, delta_kernels(1, 16 * c), 3)
print("identity kernels reduce to shuffles:", torch.equal(ident, pixel_shuffle(pixel_unshuffle(e, 4), 2)))
