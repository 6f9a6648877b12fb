import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from maglev.core import CONSTANTS, DomainError, Particle
from maglev.fields import BiasCoil, CurvatureSet, reference_curvatures
from maglev.trapmodel import (MATHIEU_Q_MAX, StabilityError, StabilityParams, TrapSetup,
                              bsat_from_libration_sweep, classify_regime, compute_modes,
                              libration_mode, libration_potential, micromotion_lines,
                              pseudo_potential, stability_params, sweep_modes, translational_modes)

OMEGA = 2 * math.pi * 2485.0
CURV = reference_curvatures()


def test_q_x_reference_value():
    sp = stability_params(CURV, Particle(), OMEGA)
    expected = 2 * 2.15e5 * 0.45 / (CONSTANTS.mu0 * 3.6e3 * OMEGA**2)
    assert sp.q_x == pytest.approx(expected, rel=1e-14)
    assert sp.q_x == pytest.approx(0.1755, rel=1e-3)
    assert sp.regime == "secular"


def test_q_scalings():
    sp = stability_params(CURV, Particle(), OMEGA)
    sp2 = stability_params(CURV, Particle(), 2 * OMEGA)
    np.testing.assert_allclose(sp2.q, sp.q / 4, rtol=1e-14)
    sp3 = stability_params(CURV.scaled_to(2 * CURV.i_trap), Particle(), OMEGA)
    np.testing.assert_allclose(sp3.q, 2 * sp.q, rtol=1e-14)


def test_regime_boundaries():
    assert classify_regime(0.39) == "secular"
    assert classify_regime(0.4) == "nonsecular_stable"
    assert classify_regime(0.9079) == "nonsecular_stable"
    assert classify_regime(MATHIEU_Q_MAX) == "unstable"
    assert StabilityParams(0.1, 0.2, 0.95).margin == pytest.approx(-0.042)


def test_unstable_modes_raise_with_q():
    with pytest.raises(StabilityError) as exc:
        translational_modes(StabilityParams(0.1, 0.2, 1.0), OMEGA)
    assert exc.value.q == (0.1, 0.2, 1.0)


def test_stability_rejects_zero_drive():
    with pytest.raises(DomainError):
        stability_params(CURV, Particle(), 0.0)


def test_reference_eigenfrequencies():
    m = compute_modes(CURV, Particle(), OMEGA, 1e-3, bsat_axes=(0.45, 0.45, 0.51))
    f = m.frequencies_hz()
    np.testing.assert_allclose([f["f_x"], f["f_y"], f["f_z"]], [154.148, 202.902, 368.903], rtol=1e-5)


def test_mode_ratio_is_curvature_ratio():
    m = compute_modes(CURV, Particle(), OMEGA, 1e-3)
    assert m.omega_y / m.omega_x == pytest.approx(2.83 / 2.15, rel=1e-12)


@given(st.floats(1e4, 1e6), st.floats(1e4, 1e6), st.floats(1e-6, 2e-5), st.floats(1e3, 1e4),
       st.floats(0.05, 1.5), st.floats(2 * math.pi * 1e3, 2 * math.pi * 1e4))
def test_pseudo_potential_matches_harmonic_form(bx, bz, a, rho, bsat, omega):
    curv = CurvatureSet(bx, 1.3 * bx, bz)
    p = Particle(radius=a, density=rho, bsat0=bsat)
    sp = stability_params(curv, p, omega)
    if sp.regime == "unstable":
        return
    w = np.array(translational_modes(sp, omega))
    x = 3e-6
    for i in range(3):
        u = pseudo_potential(curv, p, omega, x, axis=i)
        assert u == pytest.approx(0.5 * p.mass * w[i] ** 2 * x**2, rel=1e-12)


@given(st.floats(0.1, 10))
def test_modes_invariant_under_bsat_density_scaling(c):
    a = compute_modes(CURV, Particle(), OMEGA, 1e-3)
    b = compute_modes(CURV, Particle(density=3.6e3 * c, bsat0=0.45 * c), OMEGA, 1e-3)
    np.testing.assert_allclose(b.translational, a.translational, rtol=1e-12)


def test_pseudo_potential_basic_properties():
    x = np.arange(-15, 16) * 1e-6
    u = pseudo_potential(CURV, Particle(), OMEGA, x, axis=0)
    assert u[15] == 0.0
    np.testing.assert_allclose(u, u[::-1], rtol=1e-15)
    depth = pseudo_potential(CURV, Particle(), OMEGA, [15e-6, 15e-6, 15e-6])
    assert np.isfinite(depth) and depth > 0


def test_libration_reference_value():
    w = libration_mode(1.241e-3, Particle(bsat0=0.30))
    assert w / (2 * math.pi) == pytest.approx(11.1e3, rel=5e-3)
    assert w == pytest.approx(math.sqrt(5 * 1.241e-3 * 0.30 / (2 * CONSTANTS.mu0 * 3.6e3 * 6.5e-6**2)),
                              rel=1e-14)


def test_libration_scalings():
    p = Particle()
    assert libration_mode(4e-3, p) == pytest.approx(2 * libration_mode(1e-3, p), rel=1e-14)
    assert libration_mode(1e-3, Particle(radius=13e-6)) == pytest.approx(
        libration_mode(1e-3, p) / 2, rel=1e-14)
    with pytest.raises(DomainError):
        libration_mode(0.0, p)


def test_libration_potential_identities():
    p = Particle()
    b0 = 1.2e-3
    assert libration_potential(0.0, b0, p) == 0.0
    assert libration_potential(math.pi, b0, p) == pytest.approx(2 * p.dipole * b0, rel=1e-14)
    assert libration_potential(0.3, b0, p) == libration_potential(-0.3, b0, p)
    h = 1e-4
    curv = (libration_potential(h, b0, p) - 2 * libration_potential(0, b0, p)
            + libration_potential(-h, b0, p)) / h**2
    assert curv == pytest.approx(p.inertia * libration_mode(b0, p) ** 2, rel=1e-6)


def test_micromotion_lines():
    m = compute_modes(CURV, Particle(), OMEGA, 1e-3)
    lines = micromotion_lines(m)
    f = [ln.freq_hz for ln in lines]
    assert f == sorted(f)
    assert min(f) >= 0
    assert len(set(f)) == len(f)
    secular = {ln.mode: ln.freq_hz for ln in lines if ln.m == 0 and ln.n == 1}
    assert secular["x"] == pytest.approx(m.omega_x / (2 * math.pi))
    assert secular["lib"] == pytest.approx(m.omega_lib / (2 * math.pi))
    assert any(ln.rank == ln.m + ln.n for ln in lines)
    with pytest.raises(DomainError):
        micromotion_lines(m, n_max=-1)


def test_libration_sidebands_present():
    m = replace(compute_modes(CURV, Particle(), OMEGA, 1e-3), omega_lib=2 * math.pi * 11.45e3)
    f = np.array([ln.freq_hz for ln in micromotion_lines(m)])
    for target in (11.45e3 + 2485.0, 11.45e3 - 2485.0):
        assert np.min(np.abs(f - target)) < 1e-6


def test_sweep_exponents():
    base = TrapSetup(bsat_axes=(0.45, 0.45, 0.51))
    r = sweep_modes("i_trap", np.linspace(0.05, 0.2, 16), base)
    for k in ("omega_x", "omega_y", "omega_z"):
        assert r.exponents[k] == pytest.approx(1.0, abs=0.01)
    r = sweep_modes("i_b0", np.linspace(0.1, 0.25, 16), base)
    assert r.exponents["omega_lib"] == pytest.approx(0.5, abs=0.01)
    r = sweep_modes("omega_trap", 2 * math.pi * np.linspace(2000, 4000, 21), base)
    assert r.exponents["omega_x"] == pytest.approx(-1.0, abs=0.01)
    with pytest.raises(DomainError):
        sweep_modes("radius", [1.0], base)


def test_sweep_flags_unstable_points():
    r = sweep_modes("i_trap", np.linspace(0.1, 0.5, 9), TrapSetup())
    assert r.any_unstable
    assert np.isnan(r.omega["omega_x"][-1])
    assert r.columns()["regime"][-1] == "unstable"


def test_escape_current_tension():
    # max q at the observed 210 mA escape current stays below the Mathieu boundary
    r = sweep_modes("i_trap", [0.210], TrapSetup(bsat_axes=(0.45, 0.45, 0.51)))
    assert r.q_max[0] == pytest.approx(0.54, abs=0.02)
    assert r.regime[0] == "nonsecular_stable"


@given(st.lists(st.floats(0.01, 0.6), min_size=2, max_size=20))
def test_regime_monotone_in_current(currents):
    order = ["secular", "nonsecular_stable", "unstable"]
    grid = np.sort(currents)
    r = sweep_modes("i_trap", grid, TrapSetup())
    ranks = [order.index(x) for x in r.regime]
    assert ranks == sorted(ranks)


def test_libration_sweep_inversion_is_consistent():
    # forward model with B0 from the anchor coil, then invert
    p = Particle(bsat0=0.30)
    w1 = libration_mode(coil_b0(0.100), p)
    w2 = libration_mode(coil_b0(0.250), p)
    res = bsat_from_libration_sweep(w2 - w1, 0.100, 0.250, Particle())
    assert res.omega_initial == pytest.approx(w1, rel=1e-12)
    assert res.bsat == pytest.approx(0.30, rel=1e-12)
    with pytest.raises(DomainError):
        bsat_from_libration_sweep(0.0, 0.1, 0.25, p)
    with pytest.raises(DomainError):
        bsat_from_libration_sweep(1.0, 0.25, 0.1, p)


def coil_b0(i):
    from maglev.fields import coil_field_and_gradient
    return coil_field_and_gradient(BiasCoil(i_b0=i))[0]
