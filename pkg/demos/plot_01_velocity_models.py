"""
Synthetic velocity models
=========================

Layered models with optional folding and faulting, written as VGRD grids
and previewed as PGM images.
"""

import tempfile
from pathlib import Path

import numpy as np

from seisunet.geology import GeologyConfig, generate_dataset, generate_model
from seisunet.grid import export_image, read_grid
from seisunet.seeding import derive_seed

out = Path(tempfile.mkdtemp(prefix="seisunet-models-"))

# the simple preset gives flat layers whose velocity never decreases with depth
simple = GeologyConfig.from_preset("simple")
model = generate_model(simple, seed=3)
print("simple model", model.values.shape, "dx =", model.dx, "m")
print("layer velocities:", np.unique(model.values[:, 0]))

# the complex preset folds the interfaces and sometimes cuts them with a fault
complex_ = GeologyConfig.from_preset("complex")
folded = generate_model(complex_, seed=3)
print("complex model velocity range: %.0f to %.0f m/s" % (folded.values.min(), folded.values.max()))

export_image(model, out / "simple.pgm")
export_image(folded, out / "complex.pgm")

# a generation is a pure function of (config, seed)
assert generate_model(complex_, seed=3) == folded

# whole datasets: models/NNNN.vgrd plus manifest.json
manifest = generate_dataset(complex_, 5, seed=11, out_dir=out / "dataset")
print(manifest.n_samples, "models in", out / "dataset")
print("first file:", manifest.sample_entries[0].model_path)
# sample i is generated from derive_seed(seed, i)
first = read_grid(out / "dataset" / manifest.sample_entries[0].model_path)
print("sample 0 reproducible:", first == generate_model(complex_, derive_seed(11, 0)))
print("images in", out)
