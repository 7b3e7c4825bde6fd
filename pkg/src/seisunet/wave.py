"""2D constant-density acoustic modelling.

Solves ``p_tt = v^2 (p_xx + p_zz) + s`` with a second-order time step and a
fourth-order Laplacian. The model is padded on every absorbing side by a
Cerjan sponge band, so source and receiver coordinates always refer to the
unpadded model and never fall inside the sponge. Two extra zero-valued halo
cells close the stencil (a pressure-release edge).

Shot files (``.sgth``) hold one or more records back to back, each::

    b"SGTH" | u32 version | u32 shot_index | u32 n_receivers | u32 nt | f32 dt | f32[n_receivers * nt]

all little-endian, samples row-major (receiver-major).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .grid import Grid2D

__all__ = [
    "FD4_COEFFS",
    "CFL_SAFETY",
    "ricker",
    "max_stable_dt",
    "check_cfl",
    "CFLResult",
    "CFLError",
    "NumericalBlowupError",
    "SpongeConfig",
    "AcquisitionGeometry",
    "ShotGather",
    "sponge_profile",
    "propagate_wavefield",
    "propagate_shot",
    "simulate_survey",
    "resample_gather_to_grid",
    "pick_first_arrival",
    "write_shots",
    "read_shots",
    "ShotFormatError",
]

# second-derivative stencil, offsets -2..2
FD4_COEFFS = np.array([-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0])
C_SUM = float(np.abs(FD4_COEFFS).sum())
CFL_SAFETY = 0.9
HALO = 2

SGTH_MAGIC = b"SGTH"
SGTH_VERSION = 1
_SGTH_HEADER = struct.Struct("<4sIIIIf")


class CFLError(ValueError):
    def __init__(self, dt, max_stable_dt):
        super().__init__(f"dt={dt:.6g} s violates the CFL bound; max stable dt is {max_stable_dt:.6g} s")
        self.dt = dt
        self.max_stable_dt = max_stable_dt


class NumericalBlowupError(FloatingPointError):
    def __init__(self, step):
        super().__init__(f"wavefield became non-finite at time step {step}")
        self.step = step


class ShotFormatError(ValueError):
    pass


def ricker(t, f_peak, t_delay=None):
    """Ricker wavelet ``(1 - 2 pi^2 f^2 tau^2) exp(-pi^2 f^2 tau^2)``.

    ``tau = t - t_delay`` with ``t_delay = 1.5 / f_peak`` by default, so the
    wavelet starts close to zero at ``t = 0`` and peaks at 1.
    """
    if not f_peak > 0:
        raise ValueError(f"f_peak must be positive, got {f_peak}")
    if t_delay is None:
        t_delay = 1.5 / f_peak
    arg = (np.pi * f_peak * (np.asarray(t, dtype=np.float64) - t_delay)) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def max_stable_dt(v_max, dx):
    """``0.9 * dx / (v_max * sqrt(2) * sum|c_k|)`` for the 4th-order stencil."""
    return CFL_SAFETY * dx / (v_max * math.sqrt(2.0) * C_SUM)


@dataclass(frozen=True)
class CFLResult:
    ok: bool
    max_stable_dt: float

    def __bool__(self):
        return self.ok


def check_cfl(model: Grid2D, dt) -> CFLResult:
    bound = max_stable_dt(float(model.values.max()), model.dx)
    return CFLResult(dt <= bound, bound)


@dataclass
class SpongeConfig:
    width: int = 20
    decay: float = 0.0053
    free_surface_top: bool = False

    def validate(self, nx=None, nz=None):
        if self.width < 0:
            raise ValueError(f"sponge width must be >= 0, got {self.width}")
        if self.decay < 0:
            raise ValueError(f"sponge decay must be >= 0, got {self.decay}")
        if nx is not None and nz is not None and self.width >= min(nx, nz) / 2:
            raise ValueError(f"sponge width {self.width} must be < min(nx, nz)/2 = {min(nx, nz) / 2}")
        return self


@dataclass
class AcquisitionGeometry:
    """Sources, receivers and time axis for a survey.

    Positions are ``(x_cell, z_cell)`` in model coordinates. ``dt`` and ``nt``
    define the simulation clock; every ``record_every``-th step is stored.
    """

    source_positions: list
    receiver_positions: list
    dt: float
    nt: int
    f_peak: float = 15.0
    record_every: int = 1

    def __post_init__(self):
        self.source_positions = [tuple(int(c) for c in p) for p in self.source_positions]
        self.receiver_positions = [tuple(int(c) for c in p) for p in self.receiver_positions]

    @property
    def n_shots(self):
        return len(self.source_positions)

    @property
    def n_receivers(self):
        return len(self.receiver_positions)

    @property
    def n_recorded(self):
        return (self.nt + self.record_every - 1) // self.record_every

    @property
    def record_dt(self):
        return self.dt * self.record_every

    @classmethod
    def default(cls, nx, nz, dx, v_floor, v_ceil, n_shots=8, f_peak=15.0,
                source_depth=1, receiver_depth=2, record_dt=0.004):
        """Evenly spaced surface sources, one receiver per column.

        ``dt`` is the CFL bound for ``v_ceil`` rounded down to 10 us; the record
        covers the two-way vertical travel time at ``v_floor``.
        """
        dt = math.floor(max_stable_dt(v_ceil, dx) * 1e5) / 1e5
        duration = 2.0 * nz * dx / v_floor
        nt = int(math.ceil(duration / dt)) + 1
        sources = [((2 * i + 1) * nx // (2 * n_shots), source_depth) for i in range(n_shots)]
        receivers = [(x, receiver_depth) for x in range(nx)]
        record_every = max(1, int(round(record_dt / dt)))
        return cls(sources, receivers, dt, nt, f_peak, record_every)

    def validate(self, nx, nz):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.nt < 1:
            raise ValueError("nt must be positive")
        if not self.f_peak > 0:
            raise ValueError("f_peak must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if not self.source_positions:
            raise ValueError("at least one source is required")
        if not self.receiver_positions:
            raise ValueError("at least one receiver is required")
        for kind, positions in (("source", self.source_positions), ("receiver", self.receiver_positions)):
            for x, z in positions:
                if not (0 <= x < nx and 0 <= z < nz):
                    raise ValueError(f"{kind} position ({x}, {z}) outside the {nx}x{nz} grid")
        return self

    def to_dict(self):
        return {
            "source_positions": [list(p) for p in self.source_positions],
            "receiver_positions": [list(p) for p in self.receiver_positions],
            "dt": self.dt,
            "nt": self.nt,
            "f_peak": self.f_peak,
            "record_every": self.record_every,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ShotGather:
    shot_index: int
    data: np.ndarray
    dt: float

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"gather data must be 2D (receivers x nt), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("gather contains non-finite samples")

    @property
    def n_receivers(self):
        return self.data.shape[0]

    @property
    def nt(self):
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ShotGather):
            return NotImplemented
        return (
            self.shot_index == other.shot_index
            and np.float32(self.dt) == np.float32(other.dt)
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


def sponge_profile(nz, nx, sponge: SpongeConfig):
    """Cerjan damping factors on the padded grid (halo included).

    Returns ``(damp, pad_top, pad_side)``; ``damp`` is 1 in the model region
    and ``exp(-(decay * (width - i))^2)`` at ``i`` cells into the band.
    """
    w = sponge.width
    pad_top = 0 if sponge.free_surface_top else w
    ramp = np.exp(-(sponge.decay * (w - np.arange(w))) ** 2)

    def axis_profile(n, lead, trail):
        prof = np.ones(n + lead + trail)
        if lead:
            prof[:lead] = ramp[-lead:]
        if trail:
            prof[-trail:] = ramp[::-1][:trail]
        return np.pad(prof, HALO, constant_values=ramp[0] if w else 1.0)

    damp = np.outer(axis_profile(nz, pad_top, w), axis_profile(nx, w, w))
    return damp, pad_top, w


@numba.njit(cache=True)
def _sum_squares(a):
    e = 0.0
    for z in range(a.shape[0]):
        for x in range(a.shape[1]):
            e += a[z, x] * a[z, x]
    return e


@numba.njit(cache=True)
def _time_loop(c2, damp, src_z, src_x, src_term, rec_z, rec_x, record_every, out, energy,
               track_energy, check_every):
    nzp, nxp = c2.shape
    nt = src_term.shape[0]
    p_prev = np.zeros((nzp, nxp))
    p = np.zeros((nzp, nxp))
    p_next = np.zeros((nzp, nxp))
    a0 = -5.0 / 2.0
    a1 = 4.0 / 3.0
    a2 = -1.0 / 12.0
    nrec = rec_z.shape[0]
    for n in range(nt):
        if n % record_every == 0:
            k = n // record_every
            for r in range(nrec):
                out[r, k] = p[rec_z[r], rec_x[r]]
        for z in range(2, nzp - 2):
            for x in range(2, nxp - 2):
                lap = (
                    2.0 * a0 * p[z, x]
                    + a1 * (p[z, x - 1] + p[z, x + 1] + p[z - 1, x] + p[z + 1, x])
                    + a2 * (p[z, x - 2] + p[z, x + 2] + p[z - 2, x] + p[z + 2, x])
                )
                g = damp[z, x]
                p_next[z, x] = g * (2.0 * p[z, x] - g * p_prev[z, x] + c2[z, x] * lap)
        p_next[src_z, src_x] += src_term[n]
        if track_energy:
            energy[n] = _sum_squares(p_next)
            if not np.isfinite(energy[n]):
                return n
        elif (n + 1) % check_every == 0 or n == nt - 1:
            if not np.isfinite(_sum_squares(p_next)):
                return n
        tmp = p_prev
        p_prev = p
        p = p_next
        p_next = tmp
    return -1


def propagate_wavefield(model: Grid2D, source, geometry: AcquisitionGeometry, sponge: SpongeConfig,
                        amplitude=1.0, enforce_cfl=True, track_energy=False, check_every=25):
    """Run one shot; return ``(traces, energy)``.

    ``traces`` is ``(n_receivers, n_recorded)`` float64. With
    ``track_energy``, ``energy[n]`` is the sum of squared pressure over the
    padded grid after step ``n``; otherwise ``energy`` is ``None``.
    """
    nz, nx = model.values.shape
    sponge.validate()
    geometry.validate(nx, nz)
    sx, sz = (int(c) for c in source)
    if not (0 <= sx < nx and 0 <= sz < nz):
        raise ValueError(f"source ({sx}, {sz}) outside the {nx}x{nz} grid")
    cfl = check_cfl(model, geometry.dt)
    if enforce_cfl and not cfl.ok:
        raise CFLError(geometry.dt, cfl.max_stable_dt)

    damp, pad_top, pad_side = sponge_profile(nz, nx, sponge)
    v = model.values.astype(np.float64)
    vp = np.pad(v, ((pad_top, sponge.width), (pad_side, pad_side)), mode="edge")
    vp = np.pad(vp, HALO, mode="edge")
    c2 = (vp * geometry.dt / model.dx) ** 2
    oz, ox = pad_top + HALO, pad_side + HALO

    t = np.arange(geometry.nt) * geometry.dt
    w = amplitude * ricker(t, geometry.f_peak)
    src_term = (geometry.dt * v[sz, sx]) ** 2 * w
    rec = np.asarray(geometry.receiver_positions, dtype=np.int64).reshape(-1, 2)
    out = np.zeros((len(rec), geometry.n_recorded))
    energy = np.zeros(geometry.nt if track_energy else 1)
    bad = _time_loop(
        c2, damp, sz + oz, sx + ox, src_term,
        rec[:, 1] + oz, rec[:, 0] + ox,
        geometry.record_every, out, energy, track_energy, max(1, check_every),
    )
    if bad >= 0:
        raise NumericalBlowupError(int(bad))
    return out, (energy if track_energy else None)


def propagate_shot(model, source, geometry, sponge, shot_index=0, amplitude=1.0) -> ShotGather:
    traces, _ = propagate_wavefield(model, source, geometry, sponge, amplitude=amplitude)
    return ShotGather(shot_index, traces.astype(np.float32), geometry.record_dt)


def simulate_survey(model, geometry, sponge) -> list:
    """One gather per source, in source order."""
    gathers = []
    for i, src in enumerate(geometry.source_positions):
        try:
            gathers.append(propagate_shot(model, src, geometry, sponge, shot_index=i))
        except (CFLError, NumericalBlowupError) as exc:
            exc.shot_index = i
            raise
    return gathers


def _interp_axis(data, n_out, axis):
    n_in = data.shape[axis]
    if n_in == n_out:
        return data
    pos = np.linspace(0.0, n_in - 1, n_out)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    a = np.take(data, lo, axis=axis)
    b = np.take(data, hi, axis=axis)
    shape = [1] * data.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def resample_gather_to_grid(gathers, out_h, out_w):
    """Stack gathers as channels of a ``(1, n_shots, out_h, out_w)`` array.

    Rows are time (linearly interpolated to ``out_h`` samples), columns are
    receivers (interpolated to ``out_w``). Each channel is standardised to
    zero mean and unit variance; constant channels become zeros.
    """
    if not gathers:
        raise ValueError("no gathers to resample")
    shape = gathers[0].data.shape
    for g in gathers:
        if g.data.shape != shape:
            raise ValueError(f"gather shapes differ: {g.data.shape} vs {shape}")
    channels = []
    for g in gathers:
        img = g.data.astype(np.float64).T  # time x receivers
        img = _interp_axis(img, out_h, axis=0)
        img = _interp_axis(img, out_w, axis=1)
        img = img - img.mean()
        std = img.std()
        img = img / std if std > 0 else np.zeros_like(img)
        channels.append(img)
    return np.stack(channels)[None].astype(np.float32)


def pick_first_arrival(trace, dt, threshold=0.01):
    """Time of the first sample whose magnitude exceeds ``threshold * max|trace|``."""
    trace = np.abs(np.asarray(trace, dtype=np.float64))
    peak = trace.max()
    if peak == 0:
        return None
    return float(np.argmax(trace > threshold * peak)) * dt


def write_shots(gathers, path) -> None:
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            for g in gathers:
                fh.write(_SGTH_HEADER.pack(SGTH_MAGIC, SGTH_VERSION, g.shot_index,
                                           g.n_receivers, g.nt, g.dt))
                fh.write(g.data.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write shot file {path}: {exc}") from exc


def read_shots(path) -> list:
    path = Path(path)
    raw = path.read_bytes()
    gathers = []
    offset = 0
    while offset < len(raw):
        if len(raw) - offset < _SGTH_HEADER.size:
            raise ShotFormatError(f"{path}: truncated record header at byte {offset}")
        magic, version, idx, nrec, nt, dt = _SGTH_HEADER.unpack_from(raw, offset)
        if magic != SGTH_MAGIC:
            raise ShotFormatError(f"{path}: bad magic {magic!r} at byte {offset}")
        if version != SGTH_VERSION:
            raise ShotFormatError(f"{path}: unsupported SGTH version {version}")
        offset += _SGTH_HEADER.size
        nbytes = 4 * nrec * nt
        if len(raw) - offset < nbytes:
            raise ShotFormatError(f"{path}: truncated payload for shot {idx}")
        data = np.frombuffer(raw, dtype="<f4", count=nrec * nt, offset=offset).reshape(nrec, nt)
        offset += nbytes
        try:
            gathers.append(ShotGather(idx, data.astype(np.float32), dt))
        except ValueError as exc:
            raise ShotFormatError(f"{path}: {exc}") from exc
    if not gathers:
        raise ShotFormatError(f"{path}: empty shot file")
    return gathers
