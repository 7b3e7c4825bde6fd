"""
Command-line pipeline
=====================

The same steps through the ``seisunet`` entry point: generate models,
simulate shots, train, predict one sample and rebuild the report.
"""

import json
import tempfile
from pathlib import Path

from seisunet.cli import main

work = Path(tempfile.mkdtemp(prefix="seisunet-cli-"))
config = work / "config.json"
config.write_text(json.dumps({
    "geology": {"nx": 32, "nz": 32, "n_layers_range": [2, 4], "fault_throw_range": [2, 8]},
    "acquisition": {"n_shots": 4, "sponge_width": 10},
    "network": {"in_channels": 4, "depth": 2, "base_channels": 4, "input_hw": [32, 32]},
    "training": {"n_folds": 2, "max_epochs": 5, "batch_size": 4, "lr": 0.003},
}))
ds, run = work / "ds", work / "run"


def run_cli(*args):
    print("$ seisunet", " ".join(args))
    code = main(list(args))
    assert code == 0, code


run_cli("gen-models", "--config", str(config), "--n", "20", "--preset", "complex", "--seed", "3", "--out", str(ds))
run_cli("gen-shots", "--config", str(config), "--dataset", str(ds))
# a second call finds nothing to do
run_cli("gen-shots", "--config", str(config), "--dataset", str(ds))
run_cli("train", "--config", str(config), "--arch", "unet", "--dataset", str(ds), "--run-dir", str(run))
run_cli("predict", "--checkpoint", str(run / "checkpoints" / "fold_00.nncp"),
        "--shots", str(ds / "shots" / "0005.sgth"), "--truth", str(ds / "models" / "0005.vgrd"),
        "--out", str(work / "pred.vgrd"))
run_cli("report", "--run-dir", str(run))
print(sorted(p.name for p in run.iterdir()))
