import math

import numpy as np
import pytest

from seisunet.geology import GeologyConfig, generate_model
from seisunet.grid import Grid2D
from seisunet.wave import (
    C_SUM,
    AcquisitionGeometry,
    CFLError,
    NumericalBlowupError,
    ShotFormatError,
    ShotGather,
    SpongeConfig,
    check_cfl,
    max_stable_dt,
    pick_first_arrival,
    propagate_shot,
    propagate_wavefield,
    read_shots,
    resample_gather_to_grid,
    ricker,
    simulate_survey,
    write_shots,
)

SPONGE = SpongeConfig()


def homogeneous(v=1500.0, n=128, dx=10.0):
    return Grid2D(np.full((n, n), v), dx=dx)


def default_dt():
    return math.floor(max_stable_dt(4500.0, 10.0) * 1e5) / 1e5


def test_ricker_peak_and_decay():
    f = 15.0
    assert ricker(1.5 / f, f) == pytest.approx(1.0, abs=1e-15)
    tau = np.linspace(6 / f, 20 / f, 200)
    assert np.abs(ricker(1.5 / f + tau, f)).max() < 1e-12
    assert np.abs(ricker(1.5 / f - tau, f)).max() < 1e-12


def test_ricker_zero_mean():
    f, dt = 15.0, 1e-4
    t = np.arange(0.0, 3 * 1.5 / f + 12 / f, dt)
    w = ricker(t, f, t_delay=t[-1] / 2)
    duration = t[-1] - t[0]
    assert abs(w.sum() * dt) < 1e-6 * duration


def test_ricker_rejects_nonpositive_frequency():
    with pytest.raises(ValueError):
        ricker(0.0, 0.0)


def test_cfl_bound_value():
    assert C_SUM == pytest.approx(16.0 / 3.0)
    assert max_stable_dt(4500.0, 10.0) == pytest.approx(0.9 * 10.0 / (4500.0 * math.sqrt(2) * 16.0 / 3.0))
    res = check_cfl(homogeneous(4500.0), 3e-4)
    assert not res.ok and res.max_stable_dt == pytest.approx(max_stable_dt(4500.0, 10.0))
    assert check_cfl(homogeneous(4500.0), 2e-4).ok


def test_cfl_violation_refused():
    model = homogeneous(4500.0, n=32)
    geom = AcquisitionGeometry([(16, 1)], [(5, 2)], dt=1e-3, nt=10)
    with pytest.raises(CFLError) as exc:
        propagate_shot(model, (16, 1), geom, SpongeConfig(width=8))
    assert exc.value.max_stable_dt == pytest.approx(max_stable_dt(4500.0, 10.0))


def test_unstable_dt_grows():
    # well past the von Neumann limit of the scheme, with the guard bypassed
    model = homogeneous(2000.0, n=64)
    dt = 0.7 * model.dx / 2000.0
    geom = AcquisitionGeometry([(32, 32)], [(10, 10)], dt=dt, nt=200)
    try:
        _, energy = propagate_wavefield(model, (32, 32), geom, SPONGE, enforce_cfl=False, track_energy=True)
    except NumericalBlowupError as exc:
        assert exc.step < 200
    else:
        assert energy[-1] > 1e6 * energy[:20].max()


def _single_trace(model, src, rec, dt, nt, amplitude=1.0):
    geom = AcquisitionGeometry([src], [rec], dt=dt, nt=nt)
    traces, _ = propagate_wavefield(model, src, geom, SPONGE, amplitude=amplitude)
    return traces[0]


def test_first_arrival_homogeneous():
    v, dx = 1500.0, 10.0
    dt = default_dt()
    nt = int(0.5 / dt)
    src, rec = (39, 64), (89, 64)
    trace = _single_trace(homogeneous(v), src, rec, dt, nt)
    # the 1% onset of the emitted wavelet is the zero-time reference
    wavelet = ricker(np.arange(nt) * dt, 15.0)
    arrival = pick_first_arrival(trace, dt) - pick_first_arrival(wavelet, dt)
    expected = 500.0 / v
    tol = 2 * max(dt, dx / v)
    assert abs(arrival - expected) <= tol
    # cross-correlation lag with the wavelet agrees too
    lag = np.argmax(np.correlate(trace, wavelet, mode="full")) - (nt - 1)
    assert abs(lag * dt - expected) <= tol


def test_zero_amplitude_gives_zero_gather():
    model = homogeneous(n=48)
    geom = AcquisitionGeometry([(24, 1)], [(x, 2) for x in range(48)], dt=default_dt(), nt=300)
    g = propagate_shot(model, (24, 1), geom, SpongeConfig(width=10), amplitude=0.0)
    assert not g.data.any()


def test_linearity_in_amplitude():
    model = generate_model(GeologyConfig.from_preset("simple", nx=64, nz=64, n_layers_range=(2, 4)), 3)
    geom = AcquisitionGeometry([(30, 1)], [(x, 2) for x in range(64)], dt=default_dt(), nt=600)
    a, _ = propagate_wavefield(model, (30, 1), geom, SPONGE, amplitude=1.0)
    b, _ = propagate_wavefield(model, (30, 1), geom, SPONGE, amplitude=2.0)
    assert np.abs(b - 2 * a).max() <= 1e-6 * np.abs(2 * a).max()


def test_reciprocity_homogeneous():
    model = homogeneous(2000.0)
    dt, nt = default_dt(), 1500
    s, r = (30, 40), (90, 70)
    ab = _single_trace(model, s, r, dt, nt)
    ba = _single_trace(model, r, s, dt, nt)
    assert np.linalg.norm(ab - ba) / np.linalg.norm(ab) < 1e-5


def test_sponge_absorbs_energy():
    model = homogeneous(2000.0)
    dt = default_dt()
    travel = 2 * 128 * 10.0 / 2000.0
    nt = int(math.ceil(2 * travel / dt))
    geom = AcquisitionGeometry([(64, 10)], [(64, 12)], dt=dt, nt=nt)
    _, energy = propagate_wavefield(model, (64, 10), geom, SpongeConfig(width=20), track_energy=True)
    assert energy[-1] < 0.01 * energy.max()


def test_stable_over_random_models():
    cfg = GeologyConfig.from_preset("complex", nx=48, nz=48, n_layers_range=(2, 5), fault_throw_range=(2, 8))
    cells = [(x, z) for z in range(48) for x in range(48)]
    rng = np.random.default_rng(0)
    for seed in range(100):
        model = generate_model(cfg, seed)
        geom = AcquisitionGeometry.default(48, 48, 10.0, cfg.v_floor, cfg.v_ceil, n_shots=1)
        geom.receiver_positions = cells
        src = (int(rng.integers(0, 48)), int(rng.integers(0, 48)))
        field, _ = propagate_wavefield(model, src, geom, SpongeConfig(width=12))
        source_peak = (geom.dt * model.values[src[1], src[0]]) ** 2
        assert np.isfinite(field).all()
        assert np.abs(field).max() < 1e3 * source_peak


def test_grid_refinement_first_arrival():
    def arrival(n, dx, dt):
        model = homogeneous(1500.0, n=n, dx=dx)
        src = (n // 5, n // 2)
        rec = (n // 5 + int(round(300.0 / dx)), n // 2)
        nt = int(0.45 / dt)
        trace = _single_trace(model, src, rec, dt, nt)
        return pick_first_arrival(trace, dt) - pick_first_arrival(ricker(np.arange(nt) * dt, 15.0), dt)

    coarse_dt = 5e-4
    assert abs(arrival(64, 10.0, coarse_dt) - arrival(128, 5.0, coarse_dt / 2)) < coarse_dt


def test_simulate_survey_shapes_and_order():
    n = 32
    model = generate_model(GeologyConfig.from_preset("simple", nx=n, nz=n, n_layers_range=(2, 4), fault_throw_range=(2, 8)), 0)
    geom = AcquisitionGeometry.default(n, n, 10.0, 1500, 4500, n_shots=4)
    sponge = SpongeConfig(width=10)
    gathers = simulate_survey(model, geom, sponge)
    assert [g.shot_index for g in gathers] == [0, 1, 2, 3]
    assert all(g.data.shape == (n, geom.n_recorded) for g in gathers)
    assert gathers[0] == propagate_shot(model, geom.source_positions[0], geom, sponge)

    perm = [2, 0, 3, 1]
    swapped = AcquisitionGeometry([geom.source_positions[i] for i in perm], geom.receiver_positions,
                                  geom.dt, geom.nt, geom.f_peak, geom.record_every)
    for out, i in zip(simulate_survey(model, swapped, sponge), perm):
        np.testing.assert_array_equal(out.data, gathers[i].data)


def test_default_geometry():
    geom = AcquisitionGeometry.default(128, 128, 10.0, 1500.0, 4500.0)
    assert geom.n_shots == 8 and geom.n_receivers == 128
    assert geom.source_positions[0] == (8, 1) and geom.source_positions[-1] == (120, 1)
    assert geom.dt <= max_stable_dt(4500.0, 10.0)
    assert (geom.nt - 1) * geom.dt >= 2 * 128 * 10.0 / 1500.0
    assert geom.record_dt == pytest.approx(0.004, rel=0.05)


def test_resample_identity_and_standardisation():
    rng = np.random.default_rng(1)
    gathers = [ShotGather(i, rng.standard_normal((16, 24)), 0.004) for i in range(3)]
    out = resample_gather_to_grid(gathers, 24, 16)
    assert out.shape == (1, 3, 24, 16) and out.dtype == np.float32
    for i, g in enumerate(gathers):
        expect = g.data.T.astype(np.float64)
        expect = (expect - expect.mean()) / expect.std()
        np.testing.assert_allclose(out[0, i], expect, atol=1e-5)
    out = resample_gather_to_grid(gathers, 64, 64)
    np.testing.assert_allclose(out[0].mean(axis=(1, 2)), 0, atol=1e-5)
    np.testing.assert_allclose(out[0].std(axis=(1, 2)), 1, atol=1e-4)


def test_resample_linear_interpolation():
    ramp = np.tile(np.arange(5.0), (3, 1))  # 3 receivers x 5 samples, linear in time
    out = resample_gather_to_grid([ShotGather(0, ramp, 0.004)], 9, 3)[0, 0]
    expect = np.tile(np.linspace(0, 4, 9)[:, None], (1, 3))
    expect = (expect - expect.mean()) / expect.std()
    np.testing.assert_allclose(out, expect, atol=1e-5)


def test_resample_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        resample_gather_to_grid([ShotGather(0, np.ones((4, 5)), 0.1), ShotGather(1, np.ones((4, 6)), 0.1)], 8, 8)
    with pytest.raises(ValueError):
        resample_gather_to_grid([], 8, 8)


def test_sgth_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    gathers = [ShotGather(i, rng.standard_normal((7, 11)), 0.004) for i in range(3)]
    path = tmp_path / "s.sgth"
    write_shots(gathers, path)
    assert path.stat().st_size == 3 * (24 + 7 * 11 * 4)
    assert path.read_bytes()[:8] == b"SGTH\x01\x00\x00\x00"
    assert read_shots(path) == gathers


def test_sgth_corruption_detected(tmp_path):
    path = tmp_path / "s.sgth"
    write_shots([ShotGather(0, np.ones((4, 4)), 0.004)], path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ShotFormatError):
        read_shots(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ShotFormatError):
        read_shots(path)
