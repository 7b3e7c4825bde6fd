"""
Acoustic shot gathers
=====================

Simulate a surface survey over one velocity model with the finite
difference solver, check the first arrival against the straight-ray time,
and resample the gathers into network input channels.
"""

import tempfile
from pathlib import Path

import numpy as np

from seisunet.geology import GeologyConfig, generate_model
from seisunet.grid import Grid2D
from seisunet.wave import (
    AcquisitionGeometry,
    CFLError,
    SpongeConfig,
    pick_first_arrival,
    read_shots,
    resample_gather_to_grid,
    ricker,
    simulate_survey,
    write_shots,
)

out = Path(tempfile.mkdtemp(prefix="seisunet-shots-"))
cfg = GeologyConfig.from_preset("simple")
model = generate_model(cfg, seed=5)
geom = AcquisitionGeometry.default(cfg.nx, cfg.nz, cfg.dx, cfg.v_floor, cfg.v_ceil)
sponge = SpongeConfig(width=20)
print("dt = %.2e s, %d steps, %d shots, %d receivers" % (geom.dt, geom.nt, geom.n_shots, geom.n_receivers))

gathers = simulate_survey(model, geom, sponge)
print("gather shape (receivers, samples):", gathers[0].data.shape)

write_shots(gathers, out / "0000.sgth")
assert read_shots(out / "0000.sgth") == gathers

# %%
# Direct wave in a homogeneous medium
# -----------------------------------
# The pick is measured from the 1% onset of the source wavelet so only the
# travel time remains.

v = 2000.0
flat = Grid2D(np.full((128, 128), v, dtype=np.float32), dx=10.0)
g = AcquisitionGeometry([(64, 64)], [(64, 64 + 50)], dt=2.6e-4, nt=2000)
trace = simulate_survey(flat, g, sponge)[0].data[0]
t = np.arange(g.nt) * g.dt
onset = pick_first_arrival(ricker(t, g.f_peak), g.dt)
picked = pick_first_arrival(trace, g.dt) - onset
print("first arrival %.4f s, straight ray %.4f s" % (picked, 50 * 10.0 / v))

# the solver refuses time steps beyond the stability bound
try:
    simulate_survey(model, AcquisitionGeometry(geom.source_positions, geom.receiver_positions, 1e-3, 10), sponge)
except CFLError as exc:
    print("refused:", exc)

# %%
# Network input
# -------------
# Each gather becomes one standardised channel of a 128x128 image.

x = resample_gather_to_grid(gathers, 128, 128)
print("input tensor", x.shape, "channel means", np.round(x[0].mean(axis=(1, 2)), 6))
