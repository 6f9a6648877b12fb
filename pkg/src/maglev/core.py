"""Physical constants, particle and gas models.

Everything inside the package is SI. Unit conversion happens only at the
config/CLI boundary (see :mod:`maglev.config`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class DomainError(ValueError):
    """Input outside the physical domain of an operation."""


@dataclass(frozen=True)
class PhysicalConstants:
    mu0: float = 1.25663706212e-6  # T m / A
    kB: float = 1.380649e-23  # J / K
    hbar: float = 1.054571817e-34  # J s
    sigmaSB: float = 5.670374419e-8  # W / m^2 / K^4
    g_accel: float = 9.81  # m / s^2, value used for the levitation balance
    gamma_e: float = 2 * math.pi * 28e9  # rad / s / T

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise DomainError(f"constant {name} must be positive, got {value}")


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class Particle:
    """Ferromagnetic sphere.

    Parameters
    ----------
    radius : float
        Sphere radius a (m).
    density : float
        Mass density rho_m (kg/m^3).
    bsat0 : float
        Remanent field B_sat at the reference temperature ``t0`` (T).
    zeta_th : float
        Relative temperature coefficient of the remanence (1/K). NdFeB: -0.13 %/K.
    sigma_el : float
        Electrical conductivity (S/m).
    alpha_abs, epsilon_em : float
        Absorptivity at the laser wavelength and thermal emissivity, both in [0, 1].
    t0 : float
        Reference temperature (K).
    """

    radius: float = 6.5e-6
    density: float = 3.6e3
    bsat0: float = 0.45
    zeta_th: float = -0.13e-2
    sigma_el: float = 0.67e6
    alpha_abs: float = 0.184
    epsilon_em: float = 0.184
    t0: float = 300.0

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"particle radius must be > 0, got {self.radius}")
        if not self.density > 0:
            raise DomainError(f"particle density must be > 0, got {self.density}")
        if not self.bsat0 > 0:
            raise DomainError(f"remanent field must be > 0, got {self.bsat0}")
        if not 0 <= self.alpha_abs <= 1:
            raise DomainError(f"absorptivity must lie in [0, 1], got {self.alpha_abs}")
        if not 0 <= self.epsilon_em <= 1:
            raise DomainError(f"emissivity must lie in [0, 1], got {self.epsilon_em}")
        if not self.t0 > 0:
            raise DomainError(f"reference temperature must be > 0, got {self.t0}")

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3

    @property
    def area(self) -> float:
        return 4.0 * math.pi * self.radius**2

    @property
    def mass(self) -> float:
        return particle_mass(self)

    @property
    def inertia(self) -> float:
        return moment_of_inertia(self)

    @property
    def dipole(self) -> float:
        return dipole_moment(self, self.bsat0)


@dataclass(frozen=True)
class GasEnvironment:
    """Background gas; defaults describe air at room temperature.

    ``pressure`` is in Pa (1 mbar = 100 Pa).
    """

    pressure: float = 100.0
    t_bath: float = 300.0
    m_gas: float = 4.81e-26
    d_m: float = 0.372e-9
    c_acc: float = 0.65

    def __post_init__(self):
        if not self.pressure >= 0:
            raise DomainError(f"gas pressure must be >= 0, got {self.pressure}")
        if not self.t_bath > 0:
            raise DomainError(f"bath temperature must be > 0, got {self.t_bath}")
        if not (self.m_gas > 0 and self.d_m > 0):
            raise DomainError("molecular mass and diameter must be > 0")

    @property
    def cross_section(self) -> float:
        return math.pi * self.d_m**2


MBAR = 100.0  # Pa


def particle_mass(p: Particle) -> float:
    return p.density * p.volume


def moment_of_inertia(p: Particle) -> float:
    """Solid sphere about a diameter, I = 2/5 m a^2."""
    return 0.4 * particle_mass(p) * p.radius**2


def dipole_moment(p: Particle, bsat: float, const: PhysicalConstants = CONSTANTS) -> float:
    """mu = B_sat V / mu0 (A m^2)."""
    if not bsat > 0:
        raise DomainError(f"remanent field must be > 0, got {bsat}")
    return bsat * p.volume / const.mu0


def moment_to_mass(p: Particle, bsat: float | None = None, const: PhysicalConstants = CONSTANTS) -> float:
    """mu/m = B_sat/(mu0 rho_m); independent of the radius."""
    bsat = p.bsat0 if bsat is None else bsat
    return bsat / (const.mu0 * p.density)
