"""Single JSON configuration for the whole pipeline."""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .geology import GeologyConfig
from .train import TrainConfig
from .unet import UNetConfig
from .wave import AcquisitionGeometry, SpongeConfig, max_stable_dt

__all__ = ["ConfigError", "AcquisitionConfig", "PathsConfig", "PipelineConfig", "SEED_ENV"]

SEED_ENV = "SEISUNET_GLOBAL_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class AcquisitionConfig:
    """Survey layout, resolved into an :class:`AcquisitionGeometry` per model size.

    ``dt`` and ``nt`` of ``None`` pick the CFL-derived defaults.
    """

    n_shots: int = 8
    f_peak: float = 15.0
    source_depth: int = 1
    receiver_depth: int = 2
    dt: float | None = None
    nt: int | None = None
    record_dt: float = 0.004
    sponge_width: int = 20
    sponge_decay: float = 0.0053
    free_surface_top: bool = False

    def geometry(self, nx, nz, dx, v_floor, v_ceil) -> AcquisitionGeometry:
        geom = AcquisitionGeometry.default(
            nx, nz, dx, v_floor, v_ceil, n_shots=self.n_shots, f_peak=self.f_peak,
            source_depth=self.source_depth, receiver_depth=self.receiver_depth, record_dt=self.record_dt,
        )
        if self.dt is not None:
            geom.dt = self.dt
            geom.nt = int(math.ceil(2.0 * nz * dx / v_floor / self.dt)) + 1
            geom.record_every = max(1, int(round(self.record_dt / self.dt)))
        if self.nt is not None:
            geom.nt = self.nt
        return geom

    def sponge(self) -> SpongeConfig:
        return SpongeConfig(self.sponge_width, self.sponge_decay, self.free_surface_top)


@dataclass
class PathsConfig:
    dataset_dir: str = "data/simple300"
    run_dir: str = "runs/unet"


_SECTIONS = {
    "geology": GeologyConfig,
    "acquisition": AcquisitionConfig,
    "network": UNetConfig,
    "training": TrainConfig,
    "paths": PathsConfig,
}


def _section_to_dict(obj):
    d = dataclasses.asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _section_from_dict(cls, d):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for k, v in d.items():
        if isinstance(getattr(defaults, k), tuple) and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return dataclasses.replace(defaults, **kwargs)


@dataclass
class PipelineConfig:
    geology: GeologyConfig = field(default_factory=GeologyConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    network: UNetConfig = field(default_factory=UNetConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    global_seed: int = 0

    def to_dict(self):
        d = {name: _section_to_dict(getattr(self, name)) for name in _SECTIONS}
        d["global_seed"] = self.global_seed
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(_SECTIONS) - {"global_seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {name: _section_from_dict(sec, d.get(name, {})) for name, sec in _SECTIONS.items()}
        return cls(global_seed=int(d.get("global_seed", 0)), **kwargs)

    @classmethod
    def load(cls, path=None, env=None):
        """Read ``path`` (defaults if ``None``); the seed env var overrides ``global_seed``."""
        env = os.environ if env is None else env
        if path is None:
            cfg = cls()
        else:
            try:
                cfg = cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except (json.JSONDecodeError, TypeError) as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from exc
        if env.get(SEED_ENV):
            try:
                cfg.global_seed = int(env[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from exc
        return cfg

    def validate(self):
        """Check every section and the cross-section constraints; raise :class:`ConfigError`."""
        try:
            self.geology.validate()
            self.network.validate()
            self.training.validate()
            g = self.geology
            self.acquisition.sponge().validate(g.nx, g.nz)
            geom = self.geometry()
            geom.validate(g.nx, g.nz)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.network.in_channels != self.acquisition.n_shots:
            raise ConfigError(
                f"network.in_channels={self.network.in_channels} must equal acquisition.n_shots={self.acquisition.n_shots}"
            )
        h, w = self.network.input_hw
        if g.nz % h or g.nx % w:
            raise ConfigError(f"network.input_hw {self.network.input_hw} must divide the model grid {g.nz}x{g.nx}")
        bound = max_stable_dt(self.geology.v_ceil, self.geology.dx)
        if geom.dt > bound:
            raise ConfigError(f"acquisition dt={geom.dt:.6g} s violates the CFL bound; max stable dt is {bound:.6g} s")
        if self.global_seed < 0:
            raise ConfigError("global_seed must be non-negative")
        return self

    def geometry(self):
        g = self.geology
        return self.acquisition.geometry(g.nx, g.nz, g.dx, g.v_floor, g.v_ceil)


def section_fields():
    """``(section, field_name, default)`` for every overridable setting."""
    out = []
    for name, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            out.append((name, f.name, getattr(cls(), f.name)))
    return out
