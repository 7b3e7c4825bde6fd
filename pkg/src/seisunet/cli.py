"""Command-line entry point: ``seisunet <command> [options]``.

Commands: ``gen-models``, ``gen-shots``, ``train``, ``predict``, ``report``.
Every setting of the JSON config can be overridden with ``--section.field``.
Exit codes: 0 success, 1 runtime or I/O failure, 2 validation failure.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import CheckpointError, load_checkpoint, save_checkpoint
from .config import SEED_ENV, ConfigError, PipelineConfig, section_fields
from .dataset import DatasetManifest, ManifestError, ShotDataset, downsample_model, file_sha256, verify_file
from .geology import GeologyConfig, generate_dataset, sample_name
from .grid import Grid2D, export_image, normalize_minmax, read_grid, write_grid, write_json
from .metrics import difference_image, soft_dice
from .report import emit_report, load_report, write_tables
from .train import cross_validate
from .unet import UNetConfig, build_unet, forward
from .wave import CFLError, check_cfl, read_shots, resample_gather_to_grid, simulate_survey, write_shots

log = logging.getLogger("seisunet")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


class ValidationFailure(Exception):
    """Input or configuration rejected before any work starts."""


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _tuple_of(kind):
    def parse(text):
        try:
            return tuple(kind(p) for p in text.split(","))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _parser_for(default):
    if isinstance(default, bool):
        return _bool, "BOOL"
    if isinstance(default, int):
        return int, "INT"
    if isinstance(default, float):
        return float, "FLOAT"
    if isinstance(default, tuple):
        kind = float if any(isinstance(v, float) for v in default) else int
        return _tuple_of(kind), "A,B"
    if default is None:
        return float, "FLOAT"
    return str, "STR"


def _add_config_options(p):
    p.add_argument("--config", metavar="PATH", help="pipeline JSON config (defaults if omitted)")
    group = p.add_argument_group("config overrides (flags win over the config file)")
    for section, name, default in section_fields():
        if section == "acquisition" and name == "nt":
            kind, meta = int, "INT"
        else:
            kind, meta = _parser_for(default)
        group.add_argument(f"--{section}.{name}", dest=f"override__{section}__{name}", type=kind,
                           metavar=meta, default=None, help=f"default: {default!r}")
    group.add_argument("--global-seed", dest="override__global_seed", type=int, metavar="INT", default=None,
                       help=f"root seed (also settable via ${SEED_ENV})")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seisunet",
        description="Velocity models, shot gathers and UNet inversion.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-models", help="generate a velocity-model dataset")
    p.add_argument("--n", type=int, help="number of models (required)")
    p.add_argument("--preset", choices=("simple", "complex"), help="geology preset")
    p.add_argument("--seed", type=int, help="dataset seed (default: global seed)")
    p.add_argument("--out", metavar="DIR", help="dataset directory (default: paths.dataset_dir)")
    _add_config_options(p)

    p = sub.add_parser("gen-shots", help="simulate shot gathers for every model of a dataset")
    p.add_argument("--dataset", metavar="DIR", help="dataset directory (default: paths.dataset_dir)")
    p.add_argument("--seed", type=int, help="recorded in the manifest; simulation itself is deterministic")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _add_config_options(p)

    p = sub.add_parser("train", help="cross-validate one architecture on a dataset")
    p.add_argument("--arch", choices=("unet", "unet-mod"), required=True)
    p.add_argument("--dataset", metavar="DIR", help="dataset directory (default: paths.dataset_dir)")
    p.add_argument("--run-dir", metavar="DIR", help="output directory (default: paths.run_dir)")
    _add_config_options(p)

    p = sub.add_parser("predict", help="predict a velocity model from a shot file")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help=".nncp file with a .json sidecar")
    p.add_argument("--shots", required=True, metavar="PATH", help=".sgth shot file")
    p.add_argument("--out", required=True, metavar="PATH", help="output .vgrd path")
    p.add_argument("--truth", metavar="PATH", help="ground-truth .vgrd for a difference image and DSC")

    p = sub.add_parser("report", help="summarise and compare finished runs")
    p.add_argument("--run-dir", action="append", required=True, metavar="DIR", help="repeatable")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    for key, value in vars(args).items():
        if not key.startswith("override__") or value is None:
            continue
        parts = key.split("__")[1:]
        if parts == ["global_seed"]:
            cfg.global_seed = value
            continue
        section, name = parts
        setattr(getattr(cfg, section), name, value)
    return cfg


@contextlib.contextmanager
def run_lock(run_dir):
    lock = Path(run_dir) / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise ValidationFailure(f"{run_dir} is locked by another command (remove {lock} if stale)") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def cmd_gen_models(args):
    cfg = resolve_config(args)
    if args.n is None or args.n < 1:
        raise ValidationFailure(f"--n must be a positive integer, got {args.n}")
    if args.preset is not None:
        base = GeologyConfig.from_preset(args.preset)
        cfg.geology = dataclasses.replace(
            cfg.geology, preset=args.preset,
            fold_probability=base.fold_probability, fault_probability=base.fault_probability,
        )
        for key, value in vars(args).items():
            if key.startswith("override__geology__") and value is not None:
                setattr(cfg.geology, key.split("__")[-1], value)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ValidationFailure(str(exc)) from exc
    seed = cfg.global_seed if args.seed is None else args.seed
    if seed < 0:
        raise ValidationFailure("--seed must be non-negative")
    out = Path(args.out or cfg.paths.dataset_dir)
    generate_dataset(cfg.geology, args.n, seed, out)
    print(out / "manifest.json")
    return EXIT_OK


def _simulate_one(task):
    model_path, shots_path, geometry, sponge = task
    model = read_grid(model_path)
    write_shots(simulate_survey(model, geometry, sponge), shots_path)
    return file_sha256(shots_path)


def cmd_gen_shots(args):
    cfg = resolve_config(args)
    dataset = Path(args.dataset or cfg.paths.dataset_dir)
    try:
        manifest = DatasetManifest.load(dataset)
    except ManifestError as exc:
        raise ValidationFailure(str(exc)) from exc
    if manifest.geology:
        cfg.geology = GeologyConfig.from_dict(manifest.geology)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ValidationFailure(str(exc)) from exc
    geo = cfg.geology
    geometry = cfg.acquisition.geometry(geo.nx, geo.nz, geo.dx, geo.v_floor, geo.v_ceil)
    sponge = cfg.acquisition.sponge()
    try:
        sponge.validate(geo.nx, geo.nz)
        geometry.validate(geo.nx, geo.nz)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    probe = Grid2D(np.full((8, 8), geo.v_ceil, np.float32), dx=geo.dx)
    cfl = check_cfl(probe, geometry.dt)
    if not cfl.ok:
        raise ValidationFailure(str(CFLError(geometry.dt, cfl.max_stable_dt)))

    acquisition = {**geometry.to_dict(), "sponge": dataclasses.asdict(sponge)}
    if args.seed is not None:
        acquisition["seed"] = args.seed
    stale = manifest.acquisition != acquisition
    manifest.acquisition = acquisition
    (dataset / "shots").mkdir(exist_ok=True)

    todo = []
    for i, entry in enumerate(manifest.sample_entries):
        rel = f"shots/{sample_name(i, manifest.n_samples)}.sgth"
        if not stale and entry.shots_path == rel and verify_file(dataset / rel, entry.shots_sha256):
            continue
        entry.shots_path, entry.shots_sha256 = rel, None
        todo.append(i)
    log.info("%d of %d samples need simulation", len(todo), manifest.n_samples)

    failures = []
    tasks = [(dataset / manifest.sample_entries[i].model_path, dataset / manifest.sample_entries[i].shots_path,
              geometry, sponge) for i in todo]

    def record(i, result):
        if isinstance(result, Exception):
            failures.append((i, result))
            log.error("sample %d failed: %s", i, result)
        else:
            manifest.sample_entries[i].shots_sha256 = result
        manifest.save(dataset)

    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_simulate_one, t) for t in tasks]
            for i, fut in zip(todo, futures):
                try:
                    record(i, fut.result())
                except Exception as exc:
                    record(i, exc)
    else:
        for i, task in zip(todo, tasks):
            try:
                record(i, _simulate_one(task))
            except Exception as exc:
                record(i, exc)
    manifest.save(dataset)
    if failures:
        print(f"{len(failures)} samples failed: {[i for i, _ in failures]}", file=sys.stderr)
        if any(isinstance(e, CFLError) for _, e in failures):
            return EXIT_VALIDATION
        return EXIT_RUNTIME
    print(f"{manifest.n_samples - len(todo)} up to date, {len(todo)} simulated")
    return EXIT_OK


def cmd_train(args):
    cfg = resolve_config(args)
    cfg.network.outer_skip = args.arch == "unet"
    dataset = Path(args.dataset or cfg.paths.dataset_dir)
    run_dir = Path(args.run_dir or cfg.paths.run_dir)
    try:
        manifest = DatasetManifest.load(dataset)
    except ManifestError as exc:
        raise ValidationFailure(str(exc)) from exc
    if manifest.geology:
        cfg.geology = GeologyConfig.from_dict(manifest.geology)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ValidationFailure(str(exc)) from exc
    missing = manifest.missing_shots(dataset)
    if missing:
        raise ValidationFailure(f"dataset {dataset} is incomplete; samples without valid shots: {missing}")

    run_dir.mkdir(parents=True, exist_ok=True)
    with run_lock(run_dir):
        write_json(cfg.to_dict(), run_dir / "config.json")
        data = ShotDataset.load(dataset, cfg.network.input_hw)
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)

        def save_fold(k, model, result):
            stem = ckpt_dir / f"fold_{k:02d}"
            save_checkpoint(model.parameters, stem.with_suffix(".nncp"))
            write_json({
                "network": model.config.to_dict(),
                "norm_min": result.norm_min,
                "norm_max": result.norm_max,
                "dx": data.dx,
                "architecture": args.arch,
            }, stem.with_suffix(".json"))

        train_cfg = dataclasses.replace(cfg.training, seed=cfg.training.seed + cfg.global_seed)
        report = cross_validate(cfg.network, data, train_cfg, on_fold=save_fold)
        emit_report(report, run_dir)
    print(f"mean validation MSE: {report.mean_val_mse:.6g}")
    print(f"median test DSC: {report.median_test_dsc:.4f}")
    return EXIT_OK


def cmd_predict(args):
    ckpt = Path(args.checkpoint)
    sidecar = ckpt.with_suffix(".json")
    if not ckpt.is_file() or not sidecar.is_file():
        raise ValidationFailure(f"checkpoint {ckpt} or its sidecar {sidecar} is missing")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    net = UNetConfig.from_dict(meta["network"])
    model = build_unet(net, 0)
    try:
        load_checkpoint(ckpt, model.parameters)
    except CheckpointError as exc:
        raise ValidationFailure(str(exc)) from exc
    gathers = read_shots(args.shots)
    if len(gathers) != net.in_channels:
        raise ValidationFailure(f"{args.shots} has {len(gathers)} shots; checkpoint expects {net.in_channels}")
    x = resample_gather_to_grid(gathers, *net.input_hw)
    pred = forward(model, x).data[0, 0].astype(np.float64)
    lo, hi = meta["norm_min"], meta["norm_max"]
    velocity = np.clip(lo + np.clip(pred, 0.0, 1.0) * (hi - lo), lo, hi).astype(np.float32)
    grid = Grid2D(velocity, dx=meta["dx"])
    out = Path(args.out)
    write_grid(grid, out)
    export_image(grid, out.with_suffix(".pgm"))
    print(out)
    if args.truth:
        truth = read_grid(args.truth)
        h, w = net.input_hw
        t = downsample_model(truth.values, h, w).astype(np.float64)
        span = hi - lo if hi > lo else 1.0
        tn = np.clip((t - lo) / span, 0, 1)
        pn = (velocity.astype(np.float64) - lo) / span
        export_image(difference_image(pn, tn), out.with_name(out.stem + "_diff.pgm"), colormap="gray-symmetric")
        print(f"soft DSC vs truth: {soft_dice(pn, tn):.4f}")
    return EXIT_OK


def cmd_report(args):
    for run_dir in args.run_dir:
        report = load_report(run_dir)
        write_tables(report, run_dir)
        print(
            f"{run_dir}: architecture={report.architecture} folds={len(report.fold_results)} "
            f"mean_val_mse={report.mean_val_mse:.6g} median_test_dsc={report.median_test_dsc:.4f} "
            f"fold_median_dsc_iqr={report.fold_median_iqr:.4f}"
        )
    return EXIT_OK


COMMANDS = {
    "gen-models": cmd_gen_models,
    "gen-shots": cmd_gen_shots,
    "train": cmd_train,
    "predict": cmd_predict,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ValidationFailure, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
