"""Dataset directory layout, manifest, and the in-memory training set.

Layout::

    <dataset>/manifest.json
    <dataset>/models/0000.vgrd ...
    <dataset>/shots/0000.sgth ...   (after shot generation)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import read_grid, write_json
from .wave import read_shots, resample_gather_to_grid

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class SampleEntry:
    model_path: str
    shots_path: str | None = None
    shots_sha256: str | None = None


@dataclass
class DatasetManifest:
    dataset_id: str
    n_samples: int
    geology_preset: str
    seed: int
    sample_entries: list
    format_version: int = MANIFEST_VERSION
    geology: dict = field(default_factory=dict)
    acquisition: dict | None = None

    def to_dict(self):
        return {
            "dataset_id": self.dataset_id,
            "n_samples": self.n_samples,
            "geology_preset": self.geology_preset,
            "seed": self.seed,
            "format_version": self.format_version,
            "geology": self.geology,
            "acquisition": self.acquisition,
            "sample_entries": [
                {"model_path": e.model_path, "shots_path": e.shots_path, "shots_sha256": e.shots_sha256}
                for e in self.sample_entries
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != MANIFEST_VERSION:
            raise ManifestError(f"unsupported manifest version {d.get('format_version')}")
        entries = [SampleEntry(**e) for e in d["sample_entries"]]
        if len(entries) != d["n_samples"]:
            raise ManifestError(f"n_samples={d['n_samples']} but {len(entries)} entries listed")
        return cls(
            dataset_id=d["dataset_id"],
            n_samples=d["n_samples"],
            geology_preset=d["geology_preset"],
            seed=d["seed"],
            sample_entries=entries,
            format_version=d["format_version"],
            geology=d.get("geology", {}),
            acquisition=d.get("acquisition"),
        )

    def save(self, dataset_dir):
        write_json(self.to_dict(), Path(dataset_dir) / MANIFEST_NAME)

    @classmethod
    def load(cls, dataset_dir):
        path = Path(dataset_dir) / MANIFEST_NAME
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed manifest {path}: {exc}") from exc
        return cls.from_dict(d)

    def missing_shots(self, dataset_dir):
        """Indices whose shot file is absent or fails its checksum."""
        dataset_dir = Path(dataset_dir)
        missing = []
        for i, e in enumerate(self.sample_entries):
            if not e.shots_path or not verify_file(dataset_dir / e.shots_path, e.shots_sha256):
                missing.append(i)
        return missing


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def verify_file(path, sha256):
    path = Path(path)
    return sha256 is not None and path.is_file() and file_sha256(path) == sha256


def downsample_model(values, out_h, out_w):
    """Block-average a velocity raster to ``(out_h, out_w)``; identity if equal."""
    nz, nx = values.shape
    if (nz, nx) == (out_h, out_w):
        return values.astype(np.float32)
    if nz % out_h or nx % out_w:
        raise ValueError(f"cannot block-average {nz}x{nx} to {out_h}x{out_w}")
    fz, fx = nz // out_h, nx // out_w
    return values.reshape(out_h, fz, out_w, fx).mean(axis=(1, 3), dtype=np.float64).astype(np.float32)


@dataclass
class ShotDataset:
    """Network-ready arrays for a whole dataset.

    ``inputs`` is ``(N, n_shots, H, W)`` standardised shot images and
    ``models`` is ``(N, 1, H, W)`` velocities in m/s.
    """

    inputs: np.ndarray
    models: np.ndarray
    dx: float = 10.0

    def __post_init__(self):
        if len(self.inputs) != len(self.models):
            raise ValueError("inputs and models differ in sample count")

    def __len__(self):
        return len(self.inputs)

    @classmethod
    def load(cls, dataset_dir, input_hw):
        dataset_dir = Path(dataset_dir)
        manifest = DatasetManifest.load(dataset_dir)
        missing = manifest.missing_shots(dataset_dir)
        if missing:
            raise ManifestError(f"dataset incomplete; missing shots for samples {missing}")
        h, w = input_hw
        xs, ys = [], []
        dx = None
        for e in manifest.sample_entries:
            grid = read_grid(dataset_dir / e.model_path)
            dx = grid.dx * grid.nx / w
            ys.append(downsample_model(grid.values, h, w)[None])
            xs.append(resample_gather_to_grid(read_shots(dataset_dir / e.shots_path), h, w)[0])
        return cls(np.stack(xs), np.stack(ys), dx)
