"""Procedural layered velocity models with optional folding and faulting.

A model is built from a stack of layer interfaces. Interface 0 is the
surface (depth 0) and carries the velocity of the top layer; each deeper
interface carries the velocity of the layer directly beneath it. Folds
deform the subsurface interfaces before rasterisation, faults shift the
raster afterwards.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import Grid2D, GridValidationError, write_grid

__all__ = [
    "GeologyConfig",
    "LayerInterface",
    "sample_interfaces",
    "apply_fold",
    "rasterize",
    "apply_fault",
    "generate_model",
    "generate_dataset",
]

PRESETS = ("simple", "complex")


class GeologyConfigError(ValueError):
    pass


@dataclass
class GeologyConfig:
    nx: int = 128
    nz: int = 128
    dx: float = 10.0
    n_layers_range: tuple = (3, 8)
    min_layer_thickness: int = 4
    v_floor: float = 1500.0
    v_ceil: float = 4500.0
    v_monotone: bool = True
    fold_probability: float = 0.0
    fold_amplitude_range: tuple = (2.0, 10.0)
    fold_wavelength_range: tuple = (48.0, 256.0)
    fault_probability: float = 0.0
    fault_throw_range: tuple = (4, 16)
    fault_dip_range: tuple = (60.0, 90.0)
    preset: str = "simple"

    @classmethod
    def from_preset(cls, preset, **overrides):
        """Defaults for one of the two dataset flavours.

        ``simple`` has flat layers only; ``complex`` folds and faults them.
        """
        if preset == "simple":
            base = cls(preset="simple")
        elif preset == "complex":
            base = cls(preset="complex", fold_probability=0.7, fault_probability=0.5)
        else:
            raise GeologyConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
        return replace(base, **overrides)

    def validate(self):
        if self.preset not in PRESETS:
            raise GeologyConfigError(f"unknown preset {self.preset!r}")
        if self.nx < 8 or self.nz < 8:
            raise GeologyConfigError(f"grid must be at least 8x8, got {self.nx}x{self.nz}")
        if not self.dx > 0:
            raise GeologyConfigError("dx must be positive")
        if not (0 < self.v_floor < self.v_ceil):
            raise GeologyConfigError(f"need 0 < v_floor < v_ceil, got {self.v_floor}, {self.v_ceil}")
        lo, hi = self.n_layers_range
        if not (1 <= lo <= hi):
            raise GeologyConfigError(f"bad n_layers_range {self.n_layers_range}")
        if self.min_layer_thickness < 1:
            raise GeologyConfigError("min_layer_thickness must be >= 1")
        if hi * self.min_layer_thickness > self.nz:
            raise GeologyConfigError(
                f"{hi} layers of at least {self.min_layer_thickness} cells do not fit in nz={self.nz}"
            )
        for name in ("fold_probability", "fault_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise GeologyConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.preset == "simple" and (self.fold_probability or self.fault_probability):
            raise GeologyConfigError("simple preset must not fold or fault")
        a0, a1 = self.fold_amplitude_range
        if not 0 <= a0 <= a1 < self.nz:
            raise GeologyConfigError(f"bad fold_amplitude_range {self.fold_amplitude_range}")
        w0, w1 = self.fold_wavelength_range
        if not 0 < w0 <= w1:
            raise GeologyConfigError(f"bad fold_wavelength_range {self.fold_wavelength_range}")
        t0, t1 = self.fault_throw_range
        if not (t0 <= t1 and max(abs(t0), abs(t1)) < self.nz / 2):
            raise GeologyConfigError(f"bad fault_throw_range {self.fault_throw_range}")
        d0, d1 = self.fault_dip_range
        if not 0 < d0 <= d1 < 180:
            raise GeologyConfigError(f"bad fault_dip_range {self.fault_dip_range}")
        return self

    def to_dict(self):
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("n_layers_range", "fold_amplitude_range", "fold_wavelength_range",
                    "fault_throw_range", "fault_dip_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class LayerInterface:
    depth_profile: np.ndarray
    layer_velocity: float

    @property
    def mean_depth(self):
        return float(np.mean(self.depth_profile))


def sample_interfaces(config: GeologyConfig, rng) -> list:
    """Flat interfaces: surface plus ``n_layers - 1`` ordered subsurface ones.

    Interior depths are placed with at least ``min_layer_thickness`` cells
    between neighbours (and from the top and bottom edges).
    """
    lo, hi = config.n_layers_range
    n_layers = int(rng.integers(lo, hi + 1))
    t = config.min_layer_thickness
    free = config.nz - n_layers * t
    offsets = np.sort(rng.integers(0, free + 1, size=n_layers - 1))
    depths = np.concatenate([[0], offsets + t * np.arange(1, n_layers)])
    velocities = rng.uniform(config.v_floor, config.v_ceil, size=n_layers)
    if config.v_monotone:
        velocities = np.sort(velocities)
    return [
        LayerInterface(np.full(config.nx, float(d)), float(v))
        for d, v in zip(depths, velocities)
    ]


def apply_fold(interfaces, amplitude, wavelength, phase, nz):
    """Add one sinusoidal fold to every interface's depth profile.

    The amplitude is capped at half the smallest gap between consecutive mean
    depths so the stack keeps its order; depths are clamped to ``[0, nz]``.
    """
    if amplitude < 0:
        raise GeologyConfigError(f"fold amplitude must be >= 0, got {amplitude}")
    if not wavelength > 0:
        raise GeologyConfigError(f"fold wavelength must be > 0, got {wavelength}")
    if len(interfaces) > 1:
        means = [itf.mean_depth for itf in interfaces]
        amplitude = min(amplitude, 0.5 * float(np.min(np.diff(means))))
    if amplitude == 0:
        return [LayerInterface(itf.depth_profile.copy(), itf.layer_velocity) for itf in interfaces]
    nx = len(interfaces[0].depth_profile)
    bump = amplitude * np.sin(2.0 * np.pi * np.arange(nx) / wavelength + phase)
    return [
        LayerInterface(np.clip(itf.depth_profile + bump, 0.0, nz), itf.layer_velocity)
        for itf in interfaces
    ]


def rasterize(interfaces, nz, dx) -> Grid2D:
    """Fill each cell with the velocity of the deepest interface above it.

    Cells above every interface take the top layer's velocity.
    """
    nx = len(interfaces[0].depth_profile)
    rows = np.arange(nz, dtype=np.float64)[:, None]
    values = np.full((nz, nx), interfaces[0].layer_velocity, dtype=np.float64)
    for itf in interfaces:
        values[rows >= itf.depth_profile[None, :]] = itf.layer_velocity
    return Grid2D(values.astype(np.float32), dx=dx)


def fault_trace(nz, fault_x0, dip):
    """Column position of the fault plane for every row."""
    slope = math.tan(math.radians(90.0 - dip))
    return fault_x0 + np.arange(nz) * slope


def apply_fault(model: Grid2D, fault_x0, dip, throw) -> Grid2D:
    """Shift everything right of a planar fault down by ``throw`` cells.

    Cells vacated at the top take the velocity at the top of their column;
    cells pushed past the bottom are dropped. Negative throws move the block
    up and fill from the bottom row instead.
    """
    nz, nx = model.values.shape
    throw = int(throw)
    if abs(throw) >= nz / 2:
        raise GeologyConfigError(f"|throw| must be < nz/2, got {throw}")
    trace = fault_trace(nz, fault_x0, dip)
    if not np.any((trace >= 0) & (trace < nx)):
        raise GeologyConfigError(f"fault trace (x0={fault_x0}, dip={dip}) does not cross the grid")
    if throw == 0:
        return Grid2D(model.values.copy(), dx=model.dx)
    rows = np.arange(nz)
    cols = np.arange(nx)
    hanging = cols[None, :] > trace[:, None]
    src = np.clip(rows - throw, 0, nz - 1)
    shifted = model.values[src, :]
    return Grid2D(np.where(hanging, shifted, model.values), dx=model.dx)


def generate_model(config: GeologyConfig, seed: int) -> Grid2D:
    """Velocity model for ``(config, seed)``; a pure function of both.

    Layers, folding and faulting draw from independent child streams so
    switching one feature on or off leaves the others untouched.
    """
    config.validate()
    rng_layers, rng_fold, rng_fault = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )
    interfaces = sample_interfaces(config, rng_layers)

    fold_draw = rng_fold.random()
    amplitude = rng_fold.uniform(*config.fold_amplitude_range)
    wavelength = rng_fold.uniform(*config.fold_wavelength_range)
    phase = rng_fold.uniform(0.0, 2.0 * np.pi)
    if fold_draw < config.fold_probability and len(interfaces) > 1:
        interfaces = interfaces[:1] + apply_fold(interfaces[1:], amplitude, wavelength, phase, config.nz)

    model = rasterize(interfaces, config.nz, config.dx)

    fault_draw = rng_fault.random()
    x0 = int(rng_fault.integers(config.nx // 4, 3 * config.nx // 4 + 1))
    dip = rng_fault.uniform(*config.fault_dip_range)
    throw = int(rng_fault.integers(config.fault_throw_range[0], config.fault_throw_range[1] + 1))
    if fault_draw < config.fault_probability:
        model = apply_fault(model, x0, dip, throw)

    model.check_bounds(config.v_floor, config.v_ceil)
    return model


def sample_name(index, n):
    return f"{index:0{max(4, len(str(n - 1)))}d}"


def generate_dataset(config: GeologyConfig, n: int, seed: int, out_dir):
    """Write ``n`` models under ``out_dir/models`` plus ``manifest.json``."""
    from .dataset import DatasetManifest, SampleEntry
    from .seeding import derive_seed

    if n < 1:
        raise GeologyConfigError(f"n must be >= 1, got {n}")
    config.validate()
    out_dir = Path(out_dir)
    (out_dir / "models").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        rel = f"models/{sample_name(i, n)}.vgrd"
        model = generate_model(config, derive_seed(seed, i))
        try:
            write_grid(model, out_dir / rel)
        except (OSError, GridValidationError) as exc:
            raise OSError(f"sample {i}: {exc}") from exc
        entries.append(SampleEntry(model_path=rel))
    manifest = DatasetManifest(
        dataset_id=f"{config.preset}-n{n}-seed{seed}",
        n_samples=n,
        geology_preset=config.preset,
        seed=seed,
        sample_entries=entries,
        geology=config.to_dict(),
    )
    manifest.save(out_dir)
    return manifest
