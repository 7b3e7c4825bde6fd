"""
Training with cross-validation
==============================

A tiny end-to-end run: simulate a handful of small models, train a shallow
U-Net over a few random splits, and write the report tables and difference
images.
"""

import tempfile
from pathlib import Path

import numpy as np

from seisunet.dataset import ShotDataset
from seisunet.geology import GeologyConfig, generate_model
from seisunet.report import emit_report
from seisunet.seeding import derive_seed
from seisunet.train import TrainConfig, cross_validate
from seisunet.unet import UNetConfig
from seisunet.wave import AcquisitionGeometry, SpongeConfig, resample_gather_to_grid, simulate_survey

out = Path(tempfile.mkdtemp(prefix="seisunet-train-"))
geo = GeologyConfig.from_preset("simple", nx=32, nz=32, n_layers_range=(2, 4), fault_throw_range=(2, 8))
geom = AcquisitionGeometry.default(32, 32, geo.dx, geo.v_floor, geo.v_ceil, n_shots=4)
sponge = SpongeConfig(width=10)

inputs, models = [], []
for i in range(24):
    model = generate_model(geo, derive_seed(1, i))
    inputs.append(resample_gather_to_grid(simulate_survey(model, geom, sponge), 32, 32)[0])
    models.append(model.values[None])
data = ShotDataset(np.stack(inputs), np.stack(models))
print("dataset", data.inputs.shape, data.models.shape)

arch = UNetConfig(in_channels=4, depth=2, base_channels=8, input_hw=(32, 32))
cfg = TrainConfig(batch_size=4, max_epochs=20, early_stop_patience=5, lr=3e-3, n_folds=3)
report = cross_validate(arch, data, cfg)

for f in report.fold_results:
    print("fold %d: best epoch %d, val mse %.4f, median dsc %.3f"
          % (f.fold_index, f.best_epoch, f.val_mse, np.median(f.test_dsc_per_sample)))
print("median test dsc %.3f, mean val mse %.4f" % (report.median_test_dsc, report.mean_val_mse))

emit_report(report, out)
print(sorted(p.name for p in out.iterdir()))
