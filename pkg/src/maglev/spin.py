"""Coupling of the libration mode to a single NV spin near the magnet surface."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import CONSTANTS, DomainError, Particle, PhysicalConstants
from .trapmodel import libration_mode

MIN_STANDOFF = 10e-9  # m


@dataclass(frozen=True)
class SpinConfig:
    """Spin and bath parameters; ``d`` is the spin distance from the magnet surface."""

    d: float = 0.7e-6
    t2_star: float = 0.5e-3
    gamma_lib_assumed: float = 2 * math.pi * 1e-3
    t_bath: float = 4.0

    def __post_init__(self):
        if not self.d > 0:
            raise DomainError("spin distance must be > 0")
        if not self.t2_star > 0:
            raise DomainError("T2* must be > 0")
        if not (self.gamma_lib_assumed >= 0 and self.t_bath > 0):
            raise DomainError("linewidth must be >= 0 and bath temperature > 0")

    @property
    def gamma_s(self) -> float:
        """Spin dephasing rate 2 pi / T2* (rad/s)."""
        return 2.0 * math.pi / self.t2_star


def proposal_particle(radius: float = 0.25e-6, density: float = 7.4e3, bsat: float = 1.4) -> Particle:
    """Sub-micron sphere of bulk sintered NdFeB."""
    return Particle(radius=radius, density=density, bsat0=bsat)


def theta_zpf(p: Particle, omega_lib, const: PhysicalConstants = CONSTANTS):
    """Zero-point angle sqrt(hbar / (2 I omega_lib))."""
    omega_lib = np.asarray(omega_lib, dtype=float)
    if np.any(omega_lib <= 0):
        raise DomainError("libration frequency must be > 0")
    out = np.sqrt(const.hbar / (2.0 * p.inertia * omega_lib))
    return float(out) if out.ndim == 0 else out


def coupling_g0(p: Particle, spin: SpinConfig, omega_lib, const: PhysicalConstants = CONSTANTS):
    """g0 = gamma_e B_sat a^3 / (6 (a + d)^3) theta_zpf, spin along x."""
    d = max(spin.d, MIN_STANDOFF)
    geom = (p.radius / (p.radius + d)) ** 3
    return const.gamma_e * p.bsat0 * geom * theta_zpf(p, omega_lib, const) / 6.0


def thermal_occupation(omega, t_bath: float, const: PhysicalConstants = CONSTANTS):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0) or not t_bath > 0:
        raise DomainError("frequency and temperature must be > 0")
    with np.errstate(over="ignore"):
        out = 1.0 / np.expm1(const.hbar * omega / (const.kB * t_bath))
    return float(out) if out.ndim == 0 else out


def heating_rate(n_th, gamma_lib_assumed: float):
    """Gamma_lib = n_th gamma_lib (rad/s)."""
    if np.any(np.asarray(n_th) < 0) or gamma_lib_assumed < 0:
        raise DomainError("occupation and linewidth must be >= 0")
    return n_th * gamma_lib_assumed


def cooperativity(g0, spin: SpinConfig, gamma_heat):
    """C_q = 4 g0^2 / (gamma_s Gamma_lib)."""
    if np.any(np.asarray(gamma_heat) <= 0):
        raise DomainError("heating rate must be > 0")
    return 4.0 * np.asarray(g0) ** 2 / (spin.gamma_s * np.asarray(gamma_heat))


def cooperativity_from_rates(g0, gamma_s, gamma_heat):
    return 4.0 * np.asarray(g0) ** 2 / (np.asarray(gamma_s) * np.asarray(gamma_heat))


def cooling_rate(g0, spin: SpinConfig):
    """Resolved-sideband cooling rate 4 g0^2 / gamma_s (rad/s)."""
    return 4.0 * np.asarray(g0) ** 2 / spin.gamma_s


def cq_over_heating(c_q, gamma_lib: float, n_th):
    """C_q / (gamma_lib n_th). This has units of time; it is not a cooling rate."""
    return np.asarray(c_q) / (gamma_lib * np.asarray(n_th))


@dataclass
class SpinPoint:
    omega_lib: np.ndarray
    g0: np.ndarray
    n_th: np.ndarray
    gamma_heat: np.ndarray
    c_q: np.ndarray


def _evaluate(p: Particle, spin: SpinConfig, b0, const: PhysicalConstants) -> SpinPoint:
    b0 = np.asarray(b0, dtype=float)
    if np.any(b0 <= 0):
        raise DomainError("B0 must be > 0")
    w = np.vectorize(lambda b: libration_mode(b, p, const=const))(b0)
    g0 = coupling_g0(p, spin, w, const)
    n = thermal_occupation(w, spin.t_bath, const)
    heat = heating_rate(n, spin.gamma_lib_assumed)
    return SpinPoint(w, np.asarray(g0), np.asarray(n), np.asarray(heat),
                     cooperativity(g0, spin, heat))


def coupling_vs_field(b0_grid, p: Particle | None = None, spin: SpinConfig = SpinConfig(),
                      const: PhysicalConstants = CONSTANTS) -> dict:
    """Libration frequency, g0 and heating rate versus the static field B0 (T)."""
    p = proposal_particle() if p is None else p
    b0_grid = np.asarray(b0_grid, dtype=float)
    r = _evaluate(p, spin, b0_grid, const)
    return {
        "B0_T": b0_grid,
        "omega_lib_rad_s": r.omega_lib,
        "g0_rad_s": r.g0,
        "Gamma_lib_rad_s": r.gamma_heat,
        "C_q": r.c_q,
        "sideband_resolved": r.omega_lib > spin.gamma_s,
    }


@dataclass
class CooperativityMap:
    radius: np.ndarray  # m, rows
    distance: np.ndarray  # m, columns
    c_q: np.ndarray
    b0: float
    contour: list  # [(a, d)] along C_q = 1

    def to_dict(self) -> dict:
        return {"radius_m": self.radius.tolist(), "distance_m": self.distance.tolist(),
                "C_q": self.c_q.tolist(), "B0_T": self.b0,
                "contour_Cq_1": [list(pt) for pt in self.contour]}


def unit_contour(distance, row) -> float | None:
    """Distance where a monotone C_q row crosses 1, interpolated in log-log."""
    logc = np.log(row)
    sign = np.sign(logc)
    idx = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
    if idx.size == 0:
        return None
    k = idx[0]
    if logc[k] == logc[k + 1]:
        return float(distance[k])
    t = logc[k] / (logc[k] - logc[k + 1])
    return float(np.exp(np.log(distance[k]) + t * (np.log(distance[k + 1]) - np.log(distance[k]))))


def cooperativity_map(a_grid, d_grid, spin: SpinConfig = SpinConfig(), b0: float = 5e-3,
                      density: float = 7.4e3, bsat: float = 1.4,
                      const: PhysicalConstants = CONSTANTS) -> CooperativityMap:
    """Quantum cooperativity over particle radius (rows) and spin distance (columns)."""
    a_grid = np.asarray(a_grid, dtype=float)
    d_grid = np.maximum(np.asarray(d_grid, dtype=float), MIN_STANDOFF)
    if np.any(a_grid <= 0):
        raise DomainError("radius grid must be positive")
    c = np.empty((a_grid.size, d_grid.size))
    for i, a in enumerate(a_grid):
        p = proposal_particle(a, density, bsat)
        for j, d in enumerate(d_grid):
            c[i, j] = _evaluate(p, replace(spin, d=float(d)), b0, const).c_q
    contour = []
    for i, a in enumerate(a_grid):
        d1 = unit_contour(d_grid, c[i])
        if d1 is not None:
            contour.append((float(a), d1))
    return CooperativityMap(a_grid, d_grid, c, b0, contour)
