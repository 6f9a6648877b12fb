"""Gas damping, eddy-current loss in the magnet and Q factors."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import CONSTANTS, DomainError, GasEnvironment, MBAR, Particle, PhysicalConstants

LIB_KN_MIN = 100.0


def mean_free_path(gas: GasEnvironment, const: PhysicalConstants = CONSTANTS) -> float:
    """l = kB T / (sqrt 2 sigma_gas P); ``math.inf`` in vacuum."""
    if gas.pressure == 0:
        return math.inf
    return const.kB * gas.t_bath / (math.sqrt(2.0) * gas.cross_section * gas.pressure)


def knudsen(p: Particle, gas: GasEnvironment, const: PhysicalConstants = CONSTANTS) -> float:
    return mean_free_path(gas, const) / p.radius


def gas_viscosity(gas: GasEnvironment, const: PhysicalConstants = CONSTANTS) -> float:
    """Dilute-gas viscosity 2 sqrt(m kB T) / (3 sqrt(pi) sigma_gas), Pa s."""
    return 2.0 * math.sqrt(gas.m_gas * const.kB * gas.t_bath) / (3.0 * math.sqrt(math.pi) * gas.cross_section)


def slip_factor(kn: float) -> float:
    """0.619/(0.619 + Kn) (1 + c_K); lies in (0, 1] and tends to 1 for Kn -> 0."""
    if math.isinf(kn):
        return 0.0
    c_k = 0.31 * kn / (0.785 + 1.152 * kn + kn**2)
    return 0.619 / (0.619 + kn) * (1.0 + c_k)


def gamma_translational(p: Particle, gas: GasEnvironment, const: PhysicalConstants = CONSTANTS) -> float:
    """Centre-of-mass damping rate gamma_COM (rad/s), gamma/2pi = 3 mu_nu (a/m) * slip."""
    kn = knudsen(p, gas, const)
    return 2.0 * math.pi * 3.0 * gas_viscosity(gas, const) * p.radius / p.mass * slip_factor(kn)


def gamma_librational(p: Particle, gas: GasEnvironment,
                      const: PhysicalConstants = CONSTANTS) -> tuple[float, bool]:
    """Free-molecular libration damping rate (rad/s) and whether Kn > 100."""
    mu_nu = gas_viscosity(gas, const)
    rate = (2.0 * math.pi * 30.0 * gas.c_acc * mu_nu * gas.cross_section * gas.pressure
            / (8.0 * math.pi * math.sqrt(2.0) * const.kB * gas.t_bath * p.density * p.radius))
    return rate, knudsen(p, gas, const) > LIB_KN_MIN


@dataclass(frozen=True)
class DampingReport:
    gamma_com: float
    gamma_lib: float
    kn: float
    mean_free_path: float
    viscosity: float
    lib_valid: bool


def damping_report(p: Particle, gas: GasEnvironment, const: PhysicalConstants = CONSTANTS) -> DampingReport:
    g_lib, ok = gamma_librational(p, gas, const)
    return DampingReport(gamma_translational(p, gas, const), g_lib, knudsen(p, gas, const),
                         mean_free_path(gas, const), gas_viscosity(gas, const), ok)


def q_factor(omega: float, gamma: float) -> float:
    """Q = omega / gamma; ``math.inf`` for a lossless mode."""
    if gamma < 0:
        raise DomainError("damping rate must be >= 0")
    if gamma == 0:
        return math.inf
    return omega / gamma


def eddy_current_magnet(p: Particle, omega_trap_value: float, bpp: float) -> tuple[float, float]:
    """Induced current density j ~ Omega sigma a^3 B'' and loss P ~ Omega^2 sigma a^9 B''^2.

    ``omega_trap_value`` is used as given; see :func:`eddy_loss_conventions`
    for the two readings of the drive frequency.
    """
    if not (omega_trap_value > 0 and p.sigma_el > 0):
        raise DomainError("drive frequency and conductivity must be > 0")
    j = omega_trap_value * p.sigma_el * p.radius**3 * bpp
    power = omega_trap_value**2 * p.sigma_el * p.radius**9 * bpp**2
    return j, power


def eddy_loss_conventions(p: Particle, drive_hz: float, bpp: float) -> dict:
    """Loss with the drive entered as its numeric Hz value and as 2 pi f."""
    return {
        "numeric_hz": eddy_current_magnet(p, drive_hz, bpp)[1],
        "angular": eddy_current_magnet(p, 2 * math.pi * drive_hz, bpp)[1],
    }


def q_from_loss(freq_hz: float, mass: float, velocity_amplitude: float, p_loss: float) -> float:
    """Q = 2 pi f (m v^2 / 2) / P_loss."""
    if not p_loss > 0:
        raise DomainError("loss power must be > 0")
    return 2.0 * math.pi * freq_hz * 0.5 * mass * velocity_amplitude**2 / p_loss


def q_vs_pressure_curve(p: Particle, omega_com: float, omega_lib: float, pressures,
                        gas: GasEnvironment = GasEnvironment(),
                        const: PhysicalConstants = CONSTANTS) -> dict:
    """Gas-limited Q of one translational mode and the libration over a pressure grid (Pa).

    Q_librational is NaN where Kn <= 100.
    """
    pressures = np.asarray(pressures, dtype=float)
    if np.any(pressures <= 0):
        raise DomainError("pressure grid must be positive")
    q_com, q_lib, kn, valid = [], [], [], []
    for pr in pressures:
        g = replace(gas, pressure=float(pr))
        rep = damping_report(p, g, const)
        q_com.append(q_factor(omega_com, rep.gamma_com))
        q_lib.append(q_factor(omega_lib, rep.gamma_lib) if rep.lib_valid else math.nan)
        kn.append(rep.kn)
        valid.append(rep.lib_valid)
    return {
        "pressure_mbar": pressures / MBAR,
        "Q_translational": np.array(q_com),
        "Q_librational": np.array(q_lib),
        "kn": np.array(kn),
        "valid_lib": np.array(valid),
    }
