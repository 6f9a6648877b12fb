import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from maglev.core import CONSTANTS, DomainError, GasEnvironment, MBAR, Particle
from maglev.thermo import (FitError, OpticalParams, absorbed_power, beam_fraction,
                           bsat_at_temperature, bsat_drop_map, conducted_power, fit_thermo_model,
                           model_frequencies, radiated_power, shifted_modes,
                           steady_state_temperature, temperature_grid)
from maglev.trapmodel import TrapSetup

P = Particle()
OPT = OpticalParams()
OMEGA = 2 * math.pi * 2485.0


def gas(mbar):
    return GasEnvironment(pressure=mbar * MBAR)


def test_beam_fraction_limits():
    assert beam_fraction(1e-6, 1e-3) == pytest.approx(2e-6, rel=1e-5)
    assert beam_fraction(1e-3, 1e-6) == 1.0


def test_absorbed_power_value():
    assert absorbed_power(OPT, P) == pytest.approx(1.0496e-7, rel=1e-4)
    assert absorbed_power(OpticalParams(waist=1e-9), P) == pytest.approx(0.184e-6, rel=1e-12)


def test_radiated_power():
    assert radiated_power(400.0, 300.0, P) == pytest.approx(9.694e-8, rel=1e-3)
    assert radiated_power(300.0, 300.0, P) == 0.0
    assert radiated_power(350.0, 310.0, P) == pytest.approx(-radiated_power(310.0, 350.0, P), rel=1e-14)


def test_conducted_power():
    g = gas(0.1)
    assert conducted_power(350.0, g, P) == pytest.approx(2.020e-7, rel=1e-3)
    assert conducted_power(300.0, g, P) == 0.0
    assert conducted_power(400.0, g, P) == pytest.approx(2 * conducted_power(350.0, g, P), rel=1e-14)
    assert conducted_power(350.0, gas(0.2), P) == pytest.approx(2 * conducted_power(350.0, g, P), rel=1e-14)


def test_zero_laser_gives_bath_temperature():
    s = steady_state_temperature(OpticalParams(p_laser=0.0), gas(0.1), P)
    assert s.temperature == 300.0
    assert abs(s.balance_residual) <= 1e-18


def test_radiation_only_closed_form():
    s = steady_state_temperature(OPT, gas(0.0), P, tol=1e-9)
    closed = (300.0**4 + s.p_abs / (P.epsilon_em * CONSTANTS.sigmaSB * P.area)) ** 0.25
    assert s.temperature == pytest.approx(closed, rel=1e-6)
    assert s.temperature == pytest.approx(405.5401, rel=1e-6)


def test_conduction_dominated_limit():
    g = gas(10.0)
    s = steady_state_temperature(OPT, g, P)
    coeff = conducted_power(301.0, g, P)
    assert s.temperature - 300.0 == pytest.approx(s.p_abs / coeff, rel=0.01)


@given(st.floats(1e-9, 1e-4), st.floats(0.0, 1e3), st.floats(0.01, 1.0), st.floats(2e-6, 1e-4))
def test_energy_balance_residual(pl, pres, alpha, waist):
    p = replace(P, alpha_abs=alpha)
    s = steady_state_temperature(OpticalParams(pl, waist), GasEnvironment(pressure=pres), p)
    assert s.temperature >= 300.0
    assert abs(s.balance_residual) <= 1e-12 * s.p_abs


@given(st.floats(1e-9, 1e-5), st.floats(1e-2, 1e3), st.floats(0.01, 0.9))
def test_residual_function_strictly_decreasing(pl, pres, alpha):
    p = replace(P, alpha_abs=alpha)
    g = GasEnvironment(pressure=pres)
    T = np.linspace(300, 2000, 200)
    f = absorbed_power(OpticalParams(pl), p) - radiated_power(T, 300, p) - conducted_power(T, g, p)
    assert np.all(np.diff(f) < 0)


@given(st.floats(1e-9, 1e-5), st.floats(1e-3, 1e2), st.floats(0.01, 0.9), st.floats(1.01, 3.0))
def test_temperature_monotone(pl, pres, alpha, k):
    p = replace(P, alpha_abs=alpha)
    T = temperature_grid(pl, pres, OPT, GasEnvironment(), p)
    assert temperature_grid(k * pl, pres, OPT, GasEnvironment(), p) >= T
    assert temperature_grid(pl, k * pres, OPT, GasEnvironment(), p) <= T
    assert temperature_grid(pl, pres, OPT, GasEnvironment(), replace(p, alpha_abs=min(alpha * k, 1.0))) >= T


def test_bsat_temperature_model():
    assert bsat_at_temperature(300.0, P) == 0.45
    assert bsat_at_temperature(400.0, P) == pytest.approx(0.45 * 0.87, rel=1e-14)
    with pytest.warns(RuntimeWarning):
        assert bsat_at_temperature(300.0 + 1 / 0.0013 + 10, P) == 0.0


def test_shifted_modes():
    setup = TrapSetup()
    cold, st0 = shifted_modes(OpticalParams(p_laser=0.0), gas(0.1), P, setup)
    ref = setup.modes()
    assert st0.temperature == 300.0
    assert cold.omega_z == ref.omega_z and cold.omega_lib == ref.omega_lib
    hot, st1 = shifted_modes(OpticalParams(p_laser=2e-9), gas(0.1), P, setup)
    dz = hot.omega_z / ref.omega_z - 1
    dl = hot.omega_lib / ref.omega_lib - 1
    assert dz < 0 and dl < 0
    assert dz == pytest.approx(2 * dl, rel=1e-3)


def test_shifted_modes_decrease_with_power():
    setup = TrapSetup()
    wz = [shifted_modes(OpticalParams(p_laser=x), gas(0.1), P, setup)[0].omega_z
          for x in np.linspace(0, 2e-6, 9)]
    assert np.all(np.diff(wz) < 0)


def test_bsat_drop_map_structure():
    pl = np.logspace(np.log10(20e-9), -6, 8)
    pg = np.logspace(-3, 0, 7) * MBAR
    m = bsat_drop_map(pl, pg, OPT, P)
    assert m.relative_change.shape == (7, 8)
    assert np.all(np.diff(m.relative_change, axis=1) <= 0)
    assert np.all(np.diff(m.relative_change, axis=0) >= 0)
    assert np.argmin(m.relative_change) == np.ravel_multi_index((0, 7), (7, 8))
    assert not m.failed.any()
    tiny = bsat_drop_map([1e-18], pg, OPT, P)
    assert np.all(np.abs(tiny.relative_change) < 1e-12)
    with pytest.raises(DomainError):
        bsat_drop_map([0.0], pg, OPT, P)


def _synthetic_sweep(noise=0.0, seed=0):
    pl = np.linspace(0.0, 2e-6, 12)
    curv = TrapSetup().scaled_curvatures()
    kw = {"bpp": curv.bpp_z, "omega_trap": OMEGA}
    w = model_frequencies(pl, 0.184, 0.50, "translational", gas(0.1), P, 10e-6, **kw)
    if noise:
        w = w * (1 + noise * np.random.default_rng(seed).standard_normal(w.size))
    return pl, w, kw


def test_fit_noiseless_round_trip():
    pl, w, kw = _synthetic_sweep()
    fit = fit_thermo_model(pl, w, "translational", gas(0.1), P, **kw)
    assert fit.alpha == pytest.approx(0.184, rel=1e-4)
    assert fit.bsat0 == pytest.approx(0.50, rel=1e-4)
    assert "pressure" in fit.note


def test_fit_with_noise_within_two_sigma():
    pl, w, kw = _synthetic_sweep(noise=1e-3, seed=3)
    fit = fit_thermo_model(pl, w, "translational", gas(0.1), P, **kw)
    assert abs(fit.alpha - 0.184) <= 2 * fit.sigma_alpha
    assert abs(fit.bsat0 - 0.50) <= 2 * fit.sigma_bsat0


def test_fit_librational_round_trip():
    pl = np.linspace(0.0, 2e-6, 10)
    w = model_frequencies(pl, 0.15, 0.29, "librational", gas(1.0), P, 10e-6, b0=1.241e-3)
    fit = fit_thermo_model(pl, w, "librational", gas(1.0), P, b0=1.241e-3)
    assert fit.alpha == pytest.approx(0.15, rel=1e-4)
    assert fit.bsat0 == pytest.approx(0.29, rel=1e-4)


def test_fit_rejects_short_input():
    with pytest.raises(FitError):
        fit_thermo_model([0, 1e-6, 2e-6], [1, 1, 1], "translational", gas(0.1), P,
                         bpp=2e5, omega_trap=OMEGA)
    with pytest.raises(DomainError):
        fit_thermo_model(np.arange(5.0), np.ones(5), "rotational", gas(0.1), P)


def test_fit_degenerate_data_raises():
    # without any heating alpha cannot be determined
    pl = np.zeros(6)
    w = np.full(6, 2 * math.pi * 360.0)
    with pytest.raises(FitError):
        fit_thermo_model(pl, w, "translational", gas(0.1), P, bpp=4.54e5, omega_trap=OMEGA)
