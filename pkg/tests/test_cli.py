import json
import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from seisunet.cli import main, run_lock
from seisunet.config import ConfigError, PipelineConfig, section_fields
from seisunet.dataset import DatasetManifest
from seisunet.grid import read_grid

GOLDEN = Path(__file__).parent / "golden"

SMALL = {
    "geology": {"nx": 32, "nz": 32, "n_layers_range": [2, 4], "fault_throw_range": [2, 8]},
    "acquisition": {"n_shots": 4, "sponge_width": 10},
    "network": {"in_channels": 4, "depth": 2, "base_channels": 4, "input_hw": [32, 32]},
    "training": {"n_folds": 1, "max_epochs": 3, "batch_size": 4, "lr": 0.003},
}


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert main(["gen-models", "--config", str(small_config), "--n", "20", "--preset", "simple",
                 "--seed", "4", "--out", str(out)]) == 0
    assert main(["gen-shots", "--config", str(small_config), "--dataset", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, small_config, small_dataset):
    run = tmp_path_factory.mktemp("runs") / "unet"
    assert main(["train", "--config", str(small_config), "--arch", "unet",
                 "--dataset", str(small_dataset), "--run-dir", str(run)]) == 0
    return run


def test_gen_models_layout_and_determinism(tmp_path, small_config):
    args = ["gen-models", "--config", str(small_config), "--n", "5", "--preset", "complex", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    manifest = DatasetManifest.load(tmp_path / "a")
    assert manifest.n_samples == 5 and manifest.geology_preset == "complex"
    assert read_grid(tmp_path / "a" / "models" / "0004.vgrd").values.shape == (32, 32)


def test_gen_models_rejects_zero(tmp_path, small_config, capsys):
    assert main(["gen-models", "--config", str(small_config), "--n", "0", "--out", str(tmp_path / "x")]) == 2
    assert "--n" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_invalid_config_fails_before_side_effects(tmp_path, small_config):
    code = main(["gen-models", "--config", str(small_config), "--n", "3",
                 "--geology.v_floor", "5000", "--out", str(tmp_path / "x")])
    assert code == 2 and not (tmp_path / "x").exists()
    assert main(["gen-models", "--config", str(tmp_path / "missing.json"), "--n", "3"]) == 2
    assert main(["gen-models", "--bogus"]) == 2


def test_cross_field_validation():
    cfg = PipelineConfig.from_dict(SMALL)
    cfg.validate()
    cfg.network.in_channels = 8
    with pytest.raises(ConfigError, match="in_channels"):
        cfg.validate()
    cfg = PipelineConfig.from_dict(SMALL)
    cfg.acquisition.dt = 1e-3
    with pytest.raises(ConfigError, match="max stable dt"):
        cfg.validate()


def test_config_round_trip_and_env_seed(tmp_path):
    cfg = PipelineConfig.from_dict(SMALL)
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SMALL))
    assert PipelineConfig.load(path, env={"SEISUNET_GLOBAL_SEED": "17"}).global_seed == 17
    with pytest.raises(ConfigError):
        PipelineConfig.load(path, env={"SEISUNET_GLOBAL_SEED": "x"})
    with pytest.raises(ConfigError, match="unknown"):
        PipelineConfig.from_dict({"geology": {"colour": 1}})


def test_gen_shots_complete(small_dataset):
    manifest = DatasetManifest.load(small_dataset)
    assert manifest.missing_shots(small_dataset) == []
    assert len(list((small_dataset / "shots").glob("*.sgth"))) == 20
    assert manifest.acquisition["dt"] > 0


def test_gen_shots_resume_and_repair(tmp_path, small_config, small_dataset, capsys):
    ds = tmp_path / "ds"
    shutil.copytree(small_dataset, ds)
    before = tree_bytes(ds)
    stamps = {p.name: p.stat().st_mtime_ns for p in (ds / "shots").iterdir()}
    assert main(["gen-shots", "--config", str(small_config), "--dataset", str(ds)]) == 0
    assert "0 simulated" in capsys.readouterr().out
    assert tree_bytes(ds) == before
    assert {p.name: p.stat().st_mtime_ns for p in (ds / "shots").iterdir()} == stamps

    victim = ds / "shots" / "0007.sgth"
    raw = bytearray(victim.read_bytes())
    raw[100] ^= 0xFF
    victim.write_bytes(bytes(raw))
    assert main(["gen-shots", "--config", str(small_config), "--dataset", str(ds)]) == 0
    assert "1 simulated" in capsys.readouterr().out
    assert tree_bytes(ds) == before
    changed = [n for n, t in stamps.items() if (ds / "shots" / n).stat().st_mtime_ns != t]
    assert changed == ["0007.sgth"]


def test_gen_shots_parallel_matches_serial(tmp_path, small_config, small_dataset):
    ds = tmp_path / "ds"
    shutil.copytree(small_dataset, ds)
    shutil.rmtree(ds / "shots")
    assert main(["gen-shots", "--config", str(small_config), "--dataset", str(ds), "--jobs", "2"]) == 0
    assert tree_bytes(ds) == tree_bytes(small_dataset)


def test_gen_shots_cfl_violation_exit_2(tmp_path, small_config, small_dataset, capsys):
    ds = tmp_path / "ds"
    shutil.copytree(small_dataset, ds)
    assert main(["gen-shots", "--config", str(small_config), "--dataset", str(ds), "--acquisition.dt", "0.001"]) == 2
    assert "max stable dt" in capsys.readouterr().err


def test_gen_shots_missing_manifest(tmp_path):
    assert main(["gen-shots", "--dataset", str(tmp_path)]) == 2


def test_train_incomplete_dataset(tmp_path, small_config, small_dataset, capsys):
    ds = tmp_path / "ds"
    shutil.copytree(small_dataset, ds)
    (ds / "shots" / "0003.sgth").unlink()
    assert main(["train", "--config", str(small_config), "--arch", "unet", "--dataset", str(ds),
                 "--run-dir", str(tmp_path / "run")]) == 2
    assert "[3]" in capsys.readouterr().err


def test_train_outputs(trained_run):
    names = {p.name for p in trained_run.iterdir()}
    assert {"config.json", "report.json", "loss_curves.csv", "dsc_folds.csv", "checkpoints"} <= names
    assert ".lock" not in names
    assert (trained_run / "checkpoints" / "fold_00.nncp").is_file()
    meta = json.loads((trained_run / "checkpoints" / "fold_00.json").read_text())
    assert meta["architecture"] == "unet" and meta["norm_max"] > meta["norm_min"]
    assert json.loads((trained_run / "config.json").read_text())["training"]["n_folds"] == 1


def test_train_deterministic(tmp_path, small_config, small_dataset, trained_run):
    run = tmp_path / "again"
    assert main(["train", "--config", str(small_config), "--arch", "unet",
                 "--dataset", str(small_dataset), "--run-dir", str(run)]) == 0
    assert (run / "report.json").read_bytes() == (trained_run / "report.json").read_bytes()


def test_train_mod_architecture(tmp_path, small_config, small_dataset):
    run = tmp_path / "mod"
    assert main(["train", "--config", str(small_config), "--arch", "unet-mod",
                 "--dataset", str(small_dataset), "--run-dir", str(run)]) == 0
    assert json.loads((run / "report.json").read_text())["architecture"] == "unet_mod"


def test_train_refuses_locked_run_dir(tmp_path, small_config, small_dataset):
    run = tmp_path / "locked"
    run.mkdir()
    with run_lock(run):
        assert (run / ".lock").exists()
        assert main(["train", "--config", str(small_config), "--arch", "unet",
                     "--dataset", str(small_dataset), "--run-dir", str(run)]) == 2
    assert not (run / ".lock").exists()


def test_predict_with_truth(tmp_path, small_dataset, trained_run, capsys):
    out = tmp_path / "pred.vgrd"
    code = main(["predict", "--checkpoint", str(trained_run / "checkpoints" / "fold_00.nncp"),
                 "--shots", str(small_dataset / "shots" / "0002.sgth"), "--out", str(out),
                 "--truth", str(small_dataset / "models" / "0002.vgrd")])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "soft DSC vs truth" in stdout
    grid = read_grid(out)
    meta = json.loads((trained_run / "checkpoints" / "fold_00.json").read_text())
    assert grid.values.shape == (32, 32) and np.isfinite(grid.values).all()
    assert meta["norm_min"] <= grid.values.min() and grid.values.max() <= meta["norm_max"]
    assert (tmp_path / "pred.pgm").is_file() and (tmp_path / "pred_diff.pgm").is_file()


def test_predict_missing_checkpoint(tmp_path, small_dataset):
    assert main(["predict", "--checkpoint", str(tmp_path / "nope.nncp"),
                 "--shots", str(small_dataset / "shots" / "0000.sgth"), "--out", str(tmp_path / "p.vgrd")]) == 2


def test_predict_mismatched_checkpoint(tmp_path, small_dataset, trained_run):
    ckpt = tmp_path / "bad.nncp"
    shutil.copy(trained_run / "checkpoints" / "fold_00.nncp", ckpt)
    meta = json.loads((trained_run / "checkpoints" / "fold_00.json").read_text())
    meta["network"]["base_channels"] = 8
    (tmp_path / "bad.json").write_text(json.dumps(meta))
    assert main(["predict", "--checkpoint", str(ckpt), "--shots", str(small_dataset / "shots" / "0000.sgth"),
                 "--out", str(tmp_path / "p.vgrd")]) == 2


def test_report_command(trained_run, capsys):
    (trained_run / "dsc_folds.csv").unlink()
    assert main(["report", "--run-dir", str(trained_run)]) == 0
    assert "median_test_dsc" in capsys.readouterr().out
    assert (trained_run / "dsc_folds.csv").is_file()
    assert main(["report", "--run-dir", str(trained_run / "nope")]) == 1


@pytest.mark.parametrize("command", [None, "gen-models", "gen-shots", "train", "predict", "report"])
def test_help_golden(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    argv = ([command] if command else []) + ["--help"]
    assert main(argv) == 0
    text = capsys.readouterr().out
    golden = GOLDEN / f"help_{command or 'main'}.txt"
    if os.environ.get("SEISUNET_REGEN_GOLDEN"):
        golden.parent.mkdir(exist_ok=True)
        golden.write_text(text)
    assert text == golden.read_text()
    if command in ("gen-models", "gen-shots", "train"):
        for section, name, _ in section_fields():
            assert f"--{section}.{name}" in text
        assert "--global-seed" in text
