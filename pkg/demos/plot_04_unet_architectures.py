"""
U-Net and U-Net-mod
===================

The two architectures differ only in the outermost skip connection. Shapes
are traced with a forward hook.
"""

import numpy as np

from seisunet.unet import UNetConfig, build_unet, conv_layout, count_params

full = UNetConfig()
mod = UNetConfig(outer_skip=False)
print("U-Net     parameters:", count_params(full))
print("U-Net-mod parameters:", count_params(mod))

# the full-resolution decoder conv sees the skip or not
for cfg in (full, mod):
    name, c_in, c_out = dict((c[0], c) for c in conv_layout(cfg))["dec0.conv"]
    print("%s: %s takes %d channels" % ("unet" if cfg.outer_skip else "unet_mod", name, c_in))

small = UNetConfig(in_channels=8, depth=4, base_channels=16, input_hw=(64, 64))
model = build_unet(small, seed=0)
shapes = []
y = model(np.zeros((1, 8, 64, 64), dtype=np.float32), hook=lambda name, t: shapes.append((name, t.shape)))
for name, shape in shapes:
    print("%-14s %s" % (name, shape))
print("output", y.shape)
