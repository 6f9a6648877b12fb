import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from maglev.analysis import identify_lines, psd_welch
from maglev.core import CONSTANTS, DomainError, GasEnvironment, MBAR, Particle
from maglev.dynamics import (MAGIC, DynamicState, IntegrationError, Physics, SimConfig, Trajectory,
                             _Coeffs, equations_of_motion, integrate, integrate_ensemble,
                             integrate_parallel, max_stable_dt, member_rng, secular_frequency_measure,
                             synthetic_detector_trace, thermal_initial_states, total_energy)
from maglev.trapmodel import TrapSetup, compute_modes, micromotion_lines, stability_params

OMEGA = 2 * math.pi * 2485.0
PERIOD = 2 * math.pi / OMEGA
DT = PERIOD / 20.5


def floquet_frequency(q, omega):
    def rhs(t, y):
        return [y[1], q * omega**2 / 2 * math.cos(omega * t) * y[0]]
    T = 2 * math.pi / omega
    cols = [solve_ivp(rhs, (0, T), y0, rtol=1e-12, atol=1e-14).y[:, -1] for y0 in ([1, 0], [0, 1])]
    return math.acos(np.trace(np.column_stack(cols)) / 2) / T


def start(x=1e-6, theta=0.0):
    return DynamicState(np.array([x, x, x]), np.zeros(3), theta, 0.0)


def test_simconfig_validation():
    with pytest.raises(DomainError):
        SimConfig(dt=0.0, duration=1.0)
    with pytest.raises(DomainError):
        SimConfig(dt=1e-5, duration=1.0, scheme="euler")
    with pytest.raises(DomainError):
        SimConfig(dt=1e-5, duration=1.0, seed=-1)
    with pytest.raises(DomainError):
        integrate(SimConfig(dt=PERIOD / 19, duration=0.01), start(), Physics.from_q(0.1, OMEGA))


def test_equilibrium_at_origin():
    c = _Coeffs([Physics(omega_trap=OMEGA, omega_lib=1e4)], damping=True)
    d = equations_of_motion(np.zeros(8), 0.3, c)
    np.testing.assert_array_equal(d, np.zeros((1, 8)))


def test_small_angle_libration():
    wl = 2 * math.pi * 11e3
    c = _Coeffs([Physics(omega_trap=OMEGA, omega_lib=wl)], damping=False)
    s = np.zeros(8)
    s[6] = 1e-6
    assert equations_of_motion(s, 0.0, c)[0, 7] == pytest.approx(-wl**2 * 1e-6, rel=1e-12)


def test_mathieu_form_matches_force_model():
    setup = TrapSetup(bsat_axes=(0.45, 0.45, 0.51))
    phys = Physics.from_setup(setup)
    sp = stability_params(setup.scaled_curvatures(), setup.particle, OMEGA, setup.bsat_axes)
    np.testing.assert_allclose(np.abs(phys.kappa) * 2 / OMEGA**2, sp.q, rtol=1e-12)


@pytest.mark.parametrize("q", [0.175, 0.35])
def test_secular_frequency(q):
    phys = Physics.from_q(q, OMEGA)
    traj = integrate(SimConfig(dt=DT, duration=1e5 * DT), start(), phys)
    assert not traj.escaped
    f = secular_frequency_measure(traj, OMEGA)
    eq2 = q * OMEGA / (2 * math.sqrt(2)) / (2 * math.pi)
    if q <= 0.2:
        assert f["x"] == pytest.approx(eq2, rel=0.02)
    else:
        assert f["x"] == pytest.approx(eq2 * math.sqrt(1 + q**2 / 2), rel=0.02)
    exact = floquet_frequency(q, OMEGA) / (2 * math.pi)
    assert f["x"] == pytest.approx(exact, abs=1 / (len(traj) * traj.dt))


def test_instability_growth():
    phys = Physics.from_q(1.2, OMEGA)
    cfg = SimConfig(dt=DT, duration=50 * PERIOD, escape_radius=1.0)
    traj = integrate(cfg, start(1e-9), phys)
    amp0 = np.abs(traj.x[: int(2 * PERIOD / DT)]).max()
    assert np.abs(traj.x).max() > 10 * amp0


def test_escape_truncates():
    traj = integrate(SimConfig(dt=DT, duration=200 * PERIOD), start(), Physics.from_q(1.2, OMEGA))
    assert traj.escaped
    assert len(traj) == traj.escape_step + 1
    assert np.linalg.norm(traj.states[-1, :3]) > 40e-6


def test_nonfinite_state_aborts():
    phys = Physics.from_q(1e12, OMEGA)
    with pytest.raises(IntegrationError):
        integrate(SimConfig(dt=DT, duration=100 * PERIOD, escape_radius=math.inf), start(), phys)


def test_energy_conservation_without_drive():
    p = Particle()
    phys = Physics(omega_trap=OMEGA, omega_lib=2 * math.pi * 11e3, a_bias=(0.0, 0.0, 0.3),
                   mass=p.mass, inertia=p.inertia)
    init = DynamicState(np.array([1e-6, 0, 0]), np.array([1e-4, 2e-4, -1e-4]), 0.4, 10.0)
    traj = integrate(SimConfig(dt=DT / 50, duration=1e4 * DT / 50), init, phys)
    e = total_energy(traj, phys)
    assert np.max(np.abs(e / e[0] - 1)) < 1e-6


def test_determinism():
    phys = Physics.from_q(0.17, OMEGA, gamma=20.0)
    cfg = SimConfig(dt=DT, duration=2000 * DT, include_noise=True, include_damping=True, seed=42)
    a = integrate(cfg, start(), phys)
    b = integrate(cfg, start(), phys)
    assert a.states.tobytes() == b.states.tobytes()
    c = integrate(SimConfig(dt=DT, duration=2000 * DT, include_noise=True, include_damping=True,
                            seed=43), start(), phys)
    assert not np.array_equal(a.states, c.states)


def test_member_independent_of_batching():
    phys = Physics.from_q(0.17, OMEGA, gamma=20.0)
    cfg = SimConfig(dt=DT, duration=500 * DT, include_noise=True, include_damping=True, seed=5)
    inits = [start(1e-6 * (k + 1)) for k in range(4)]
    full = integrate_ensemble(cfg, inits, phys)
    part = integrate_ensemble(cfg, inits[2:], phys, member_offset=2)
    np.testing.assert_array_equal(full[3].states, part[1].states)
    par = integrate_parallel(cfg, inits, phys, workers=2)
    for a, b in zip(full, par):
        np.testing.assert_array_equal(a.states, b.states)
    ref = np.random.SeedSequence(5).spawn(4)[3]
    assert member_rng(5, 3).standard_normal() == np.random.default_rng(ref).standard_normal()


def test_dt_halving_convergence():
    phys = Physics.from_q(0.17, OMEGA, omega_lib=2 * math.pi * 11e3)
    init = start(theta=0.1)
    dt = max_stable_dt(phys) / 8
    T = 4000 * dt
    a = integrate(SimConfig(dt=dt, duration=T), init, phys).final_state.as_vector()
    b = integrate(SimConfig(dt=dt / 2, duration=T), init, phys).final_state.as_vector()
    for blk in (slice(0, 3), slice(3, 6), slice(6, 8)):
        assert np.linalg.norm(a[blk] - b[blk]) < 1e-4 * np.linalg.norm(b[blk])


def test_step_limit_follows_libration():
    phys = Physics.from_q(0.17, OMEGA, omega_lib=2 * math.pi * 11e3)
    with pytest.raises(DomainError):
        integrate(SimConfig(dt=DT, duration=10 * DT), start(), phys)
    frozen = integrate(SimConfig(dt=DT, duration=10 * DT, include_libration=False),
                       start(theta=0.2), phys)
    assert np.all(frozen.theta == 0.2)


def test_superposition():
    phys = Physics.from_q((0.17, 0.22, 0.35), OMEGA)
    cfg = SimConfig(dt=DT, duration=3000 * DT)
    s1 = DynamicState(np.array([1e-7, -2e-7, 3e-7]), np.zeros(3))
    s2 = DynamicState(np.array([-4e-7, 1e-7, 2e-7]), np.array([1e-5, 0, 0]))
    s12 = DynamicState(s1.r + s2.r, s1.v + s2.v)
    t1, t2, t12 = (integrate(cfg, s, phys).states[:, :6] for s in (s1, s2, s12))
    err = np.max(np.abs(t12 - t1 - t2)) / np.max(np.abs(t12))
    assert err < 1e-3


@pytest.mark.slow
def test_equipartition():
    setup = TrapSetup(bsat_axes=(0.45, 0.45, 0.51))
    gas = GasEnvironment(pressure=1.0 * MBAR)
    phys = Physics.from_setup(setup, gas)
    modes = setup.modes()
    cfg = SimConfig(dt=PERIOD / 20.5, duration=5.0, include_noise=True, include_damping=True,
                    seed=3, sample_every=4, include_libration=False)
    inits = thermal_initial_states([phys] * 8, modes.translational, seed=4)
    trajs = integrate_ensemble(cfg, inits, phys)
    assert 100 / phys.gamma < cfg.duration
    x2 = np.mean([np.mean(t.x ** 2) for t in trajs])
    ratio = phys.mass * modes.omega_x**2 * x2 / (CONSTANTS.kB * 300.0)
    assert ratio == pytest.approx(1.0, rel=0.1)


def test_binary_round_trip(tmp_path):
    traj = integrate(SimConfig(dt=DT, duration=100 * DT, seed=9), start(), Physics.from_q(0.2, OMEGA))
    path = tmp_path / "t.bin"
    traj.to_binary(path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    back = Trajectory.from_binary(path)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.t, traj.t)
    assert back.dt == traj.dt and back.metadata == traj.metadata
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTATRAJ")
    with pytest.raises(ValueError):
        Trajectory.from_binary(bad)
    csv = tmp_path / "t.csv"
    traj.to_csv(csv)
    assert np.loadtxt(csv, delimiter=",", skiprows=1).shape == (len(traj), 9)


def test_uniform_grid_and_length():
    cfg = SimConfig(dt=DT, duration=999 * DT, sample_every=3)
    traj = integrate(cfg, start(), Physics.from_q(0.2, OMEGA))
    assert len(traj) == cfg.n_steps // 3 + 1
    np.testing.assert_allclose(np.diff(traj.t), 3 * DT, rtol=1e-9)


def _pure_x_traj():
    t = np.arange(2**15) * 1e-4
    states = np.zeros((t.size, 8))
    states[:, 0] = 1e-6 * np.sin(2 * math.pi * 150.0 * t)
    return Trajectory(t, states, 1e-4)


def test_detector_second_harmonic():
    trace = synthetic_detector_trace(_pure_x_traj(), weights=(1, 0, 0, 0), quadratic=(0.3, 0, 0, 0))
    spec = psd_welch(trace, segment_length=2**13)
    for f in (150.0, 300.0):
        assert spec.psd[np.argmin(np.abs(spec.freq - f))] > 1e6 * np.median(spec.psd)


def test_detector_zero_weights_is_noise_floor():
    trace = synthetic_detector_trace(_pure_x_traj(), weights=0.0, noise_floor=0.1, seed=1)
    assert np.std(trace.samples) == pytest.approx(0.1, rel=0.02)
    with pytest.raises(DomainError):
        synthetic_detector_trace(_pure_x_traj(), weights=(np.nan, 0, 0, 0))


def test_bias_offset_boosts_drive_line():
    phys0 = Physics.from_q(0.2, OMEGA)
    phys1 = Physics.from_q(0.2, OMEGA, a_bias=(0.5, 0.0, 0.0))
    cfg = SimConfig(dt=DT, duration=2**14 * DT)
    powers = []
    for ph in (phys0, phys1):
        tr = synthetic_detector_trace(integrate(cfg, start(), ph), weights=(1, 0, 0, 0))
        spec = psd_welch(tr, segment_length=len(tr.samples) // 4)
        powers.append(spec.integrate(2485 - 10, 2485 + 10))
    assert powers[1] > 10 * powers[0]


def test_secular_measure_requires_length():
    traj = integrate(SimConfig(dt=DT, duration=100 * DT), start(), Physics.from_q(0.2, OMEGA))
    with pytest.raises(DomainError):
        secular_frequency_measure(traj, OMEGA)


def test_micromotion_lines_in_simulated_spectrum():
    q = (0.10, 0.13, 0.20)
    phys = Physics.from_q(q, OMEGA)
    traj = integrate(SimConfig(dt=DT, duration=2**16 * DT), start(), phys)
    trace = synthetic_detector_trace(traj, weights=(1, 1, 1, 0))
    spec = psd_welch(trace, segment_length=len(trace.samples) // 4)
    sp = stability_params_from_q(q)
    modes = compute_modes_from_q(sp)
    predicted = [ln for ln in micromotion_lines(modes, n_max=1, m_max=1, include_lib=False)
                 if ln.freq_hz > 0]
    res = identify_lines(spec, predicted, tolerance_hz=1.5 * spec.resolution)
    found = {(ln.mode, ln.m, ln.n, ln.sign) for ln, _, _ in res.matches}
    for axis in "xyz":
        assert (axis, 0, 1, 1) in found
    assert ("x", 1, 1, 1) in found and ("x", 1, 1, -1) in found
    for _, peak, delta in res.matches:
        assert delta <= spec.resolution


def stability_params_from_q(q):
    from maglev.trapmodel import StabilityParams
    return StabilityParams(*q)


def compute_modes_from_q(sp):
    from maglev.trapmodel import ModeSet, translational_modes
    wx, wy, wz = translational_modes(sp, OMEGA)
    return ModeSet(wx, wy, wz, 0.0, OMEGA, sp)
