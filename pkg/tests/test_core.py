import math

import pytest
from hypothesis import given, strategies as st

from maglev.core import (CONSTANTS, DomainError, GasEnvironment, Particle, dipole_moment,
                         moment_of_inertia, moment_to_mass, particle_mass)


def test_reference_particle_mass():
    assert particle_mass(Particle()) == pytest.approx(4.14e-12, rel=2e-3)


def test_small_particle_mass():
    assert particle_mass(Particle(radius=0.25e-6)) == pytest.approx(2.356e-16, rel=1e-3)


def test_dipole_moment_values():
    assert dipole_moment(Particle(), 0.45) == pytest.approx(4.12e-10, rel=2e-3)
    assert dipole_moment(Particle(radius=0.25e-6), 0.30) == pytest.approx(1.5625e-14, rel=1e-3)


def test_dipole_moment_linear_in_bsat():
    p = Particle()
    assert dipole_moment(p, 0.9) == 2 * dipole_moment(p, 0.45)


def test_inertia_values():
    assert moment_of_inertia(Particle()) == pytest.approx(7.0e-23, rel=1e-2)
    assert moment_of_inertia(Particle(radius=0.25e-6)) == pytest.approx(5.89e-30, rel=1e-3)


def test_inertia_scales_as_a5():
    assert moment_of_inertia(Particle(radius=2e-6)) == pytest.approx(
        32 * moment_of_inertia(Particle(radius=1e-6)), rel=1e-14)


@pytest.mark.parametrize("radius", [0.1e-6, 1e-6, 10e-6])
def test_moment_to_mass_independent_of_radius(radius):
    p = Particle(radius=radius)
    ratio = p.dipole / p.mass
    assert ratio == pytest.approx(moment_to_mass(p), rel=1e-12)
    assert moment_to_mass(p) == pytest.approx(0.45 / (CONSTANTS.mu0 * 3.6e3), rel=1e-15)


@given(st.floats(1e-8, 1e-4), st.floats(100, 2e4), st.floats(0.01, 2))
def test_derived_properties_are_pure(a, rho, b):
    p1 = Particle(radius=a, density=rho, bsat0=b)
    p2 = Particle(radius=a, density=rho, bsat0=b)
    assert (p1.mass, p1.inertia, p1.dipole) == (p2.mass, p2.inertia, p2.dipole)


@pytest.mark.parametrize("kw", [{"radius": 0}, {"radius": -1e-6}, {"density": 0},
                                {"bsat0": 0}, {"alpha_abs": 1.5}, {"epsilon_em": -0.1},
                                {"t0": 0}])
def test_invalid_particle_rejected(kw):
    with pytest.raises(DomainError):
        Particle(**kw)


def test_dipole_rejects_nonpositive_bsat():
    with pytest.raises(DomainError):
        dipole_moment(Particle(), 0.0)


def test_gas_validation():
    assert GasEnvironment(pressure=0.0).pressure == 0.0
    with pytest.raises(DomainError):
        GasEnvironment(pressure=-1)
    with pytest.raises(DomainError):
        GasEnvironment(t_bath=0)
    assert GasEnvironment().cross_section == pytest.approx(math.pi * 0.372e-9**2)
