"""Laser heating of the levitated magnet and its effect on the eigenmodes.

The particle temperature follows from the steady-state balance
P_abs = P_rad + P_cond; the remanence drops linearly with temperature and
the eigenfrequencies follow (omega_i ~ B_sat, omega_lib ~ sqrt(B_sat)).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .core import CONSTANTS, DomainError, GasEnvironment, Particle, PhysicalConstants
from .trapmodel import ModeSet, TrapSetup, compute_modes

MAX_ITER = 200
LINEAR_MODEL_SPAN = 200.0  # K above t0 before the linear remanence model is distrusted

PRESSURE_CAVEAT = ("gas pressure is taken as the value at the particle; a gauge outside "
                   "the covered pocket can read differently")


class ThermoError(RuntimeError):
    pass


class FitError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class OpticalParams:
    p_laser: float = 1e-6
    waist: float = 10e-6
    wavelength: float = 633e-9

    def __post_init__(self):
        if not self.p_laser >= 0:
            raise DomainError("laser power must be >= 0")
        if not self.waist > 0:
            raise DomainError("beam waist must be > 0")


def beam_fraction(radius: float, waist: float):
    """Fraction 1 - exp(-2 a^2 / w^2) of a centred Gaussian beam hitting the sphere."""
    return -np.expm1(-2.0 * radius**2 / np.asarray(waist, dtype=float) ** 2)


def absorbed_power(opt: OpticalParams, p: Particle, p_laser=None, alpha: float | None = None):
    p_laser = opt.p_laser if p_laser is None else np.asarray(p_laser, dtype=float)
    alpha = p.alpha_abs if alpha is None else alpha
    return alpha * beam_fraction(p.radius, opt.waist) * p_laser


def _quartic_excess(delta, t_bath):
    """T^4 - Tb^4 written in terms of delta = T - Tb, exact for small delta."""
    return delta * (2.0 * t_bath + delta) * (2.0 * t_bath**2 + 2.0 * t_bath * delta + delta**2)


def radiated_power(T, t_bath: float, p: Particle, epsilon: float | None = None,
                   const: PhysicalConstants = CONSTANTS):
    eps = p.epsilon_em if epsilon is None else epsilon
    T = np.asarray(T, dtype=float)
    return eps * const.sigmaSB * p.area * _quartic_excess(T - t_bath, t_bath)


def conduction_coefficient(gas: GasEnvironment, p: Particle, pressure=None,
                           const: PhysicalConstants = CONSTANTS):
    """dP_cond/dT (W/K) for a diatomic free-molecular gas."""
    pressure = gas.pressure if pressure is None else np.asarray(pressure, dtype=float)
    return 3.0 * gas.c_acc * p.area * pressure * math.sqrt(const.kB / (2.0 * math.pi * gas.m_gas * gas.t_bath))


def conducted_power(T, gas: GasEnvironment, p: Particle, const: PhysicalConstants = CONSTANTS):
    return conduction_coefficient(gas, p, const=const) * (np.asarray(T, dtype=float) - gas.t_bath)


def _solve_excess(p_abs, rad_coeff, cond_coeff, t_bath, tol):
    """Temperature excess delta = T - Tb solving p_abs = rad_coeff (T^4 - Tb^4) + cond_coeff delta.

    Works elementwise. Bisection on a geometrically grown bracket, then
    Newton steps kept inside the bracket.
    """
    p_abs, rad_coeff, cond_coeff = np.broadcast_arrays(
        np.asarray(p_abs, dtype=float), np.asarray(rad_coeff, dtype=float),
        np.asarray(cond_coeff, dtype=float))

    def f(d):
        return p_abs - rad_coeff * _quartic_excess(d, t_bath) - cond_coeff * d

    lo = np.zeros(p_abs.shape)
    hi = np.full(p_abs.shape, float(t_bath))
    done = p_abs <= 0
    it = 0
    while True:
        grow = (~done) & (f(hi) > 0)
        if not grow.any():
            break
        it += 1
        if it > MAX_ITER:
            raise ThermoError("no upper temperature bracket found; is there any loss channel?")
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2.0 * hi, hi)

    while np.any((hi - lo)[~done] >= tol):
        it += 1
        if it > MAX_ITER:
            raise ThermoError("temperature bisection did not converge")
        mid = 0.5 * (lo + hi)
        pos = f(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)

    d = 0.5 * (lo + hi)
    for _ in range(4):
        dfdd = -4.0 * rad_coeff * (t_bath + d) ** 3 - cond_coeff
        step = np.where(dfdd < 0, f(d) / np.where(dfdd < 0, dfdd, -1.0), 0.0)
        d_new = d - step
        d = np.where((d_new >= lo) & (d_new <= hi), d_new, d)
    return np.where(done, 0.0, d)


@dataclass(frozen=True)
class ThermoState:
    temperature: float
    bsat: float
    p_abs: float
    p_rad: float
    p_cond: float

    @property
    def balance_residual(self) -> float:
        return self.p_abs - self.p_rad - self.p_cond


def bsat_at_temperature(T, p: Particle, bsat0: float | None = None):
    """B_sat(T) = B_sat(T0) [1 + zeta (T - T0)], clamped at zero."""
    b0 = p.bsat0 if bsat0 is None else bsat0
    T = np.asarray(T, dtype=float)
    if np.any(T > p.t0 + LINEAR_MODEL_SPAN):
        warnings.warn("temperature beyond the range of the linear remanence model", RuntimeWarning)
    raw = b0 * (1.0 + p.zeta_th * (T - p.t0))
    if np.any(raw < 0):
        warnings.warn("remanence clamped at zero", RuntimeWarning)
    out = np.maximum(raw, 0.0)
    return float(out) if out.ndim == 0 else out


def steady_state_temperature(opt: OpticalParams, gas: GasEnvironment, p: Particle,
                             tol: float = 1e-6, const: PhysicalConstants = CONSTANTS) -> ThermoState:
    p_abs = float(absorbed_power(opt, p))
    rad = p.epsilon_em * const.sigmaSB * p.area
    cond = float(conduction_coefficient(gas, p, const=const))
    d = 0.0 if p_abs == 0 else float(_solve_excess(p_abs, rad, cond, gas.t_bath, tol))
    T = gas.t_bath + d
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bsat = bsat_at_temperature(T, p)
    return ThermoState(T, bsat, p_abs, rad * _quartic_excess(d, gas.t_bath), cond * d)


def temperature_grid(p_laser, pressure, opt: OpticalParams, gas: GasEnvironment, p: Particle,
                     alpha: float | None = None, epsilon: float | None = None,
                     waist: float | None = None, tol: float = 1e-9,
                     const: PhysicalConstants = CONSTANTS):
    """Vectorised steady-state temperature over broadcastable laser power and pressure arrays."""
    alpha = p.alpha_abs if alpha is None else alpha
    eps = p.epsilon_em if epsilon is None else epsilon
    w = opt.waist if waist is None else waist
    p_abs = alpha * beam_fraction(p.radius, w) * np.asarray(p_laser, dtype=float)
    cond = conduction_coefficient(gas, p, pressure=pressure, const=const)
    return gas.t_bath + _solve_excess(p_abs, eps * const.sigmaSB * p.area, cond, gas.t_bath, tol)


def shifted_modes(opt: OpticalParams, gas: GasEnvironment, p: Particle,
                  setup: TrapSetup) -> tuple[ModeSet, ThermoState]:
    """Eigenmodes with the remanence at the laser-heated temperature."""
    state = steady_state_temperature(opt, gas, p)
    ratio = state.bsat / p.bsat0
    bsat_axes = None if setup.bsat_axes is None else tuple(np.asarray(setup.bsat_axes) * ratio)
    bsat_lib = None if setup.bsat_lib is None else setup.bsat_lib * ratio
    hot = replace(p, bsat0=max(state.bsat, 1e-300))
    modes = compute_modes(setup.scaled_curvatures(), hot, setup.omega_trap, setup.b0(),
                          bsat_axes, bsat_lib)
    return modes, state


@dataclass
class BsatMap:
    p_laser: np.ndarray  # W, columns
    pressure: np.ndarray  # Pa, rows
    relative_change: np.ndarray  # (B(T) - B(T0)) / B(T0), shape (rows, cols)
    temperature: np.ndarray
    failed: np.ndarray
    contour_levels: list


def bsat_drop_map(p_laser_grid, pressure_grid, opt: OpticalParams, p: Particle,
                  gas: GasEnvironment = GasEnvironment(), contour_levels=None) -> BsatMap:
    p_laser_grid = np.asarray(p_laser_grid, dtype=float)
    pressure_grid = np.asarray(pressure_grid, dtype=float)
    if np.any(p_laser_grid <= 0) or np.any(pressure_grid <= 0):
        raise DomainError("map grids must be positive")
    PL, PG = np.meshgrid(p_laser_grid, pressure_grid)
    failed = np.zeros(PL.shape, dtype=bool)
    try:
        T = temperature_grid(PL, PG, opt, gas, p)
    except ThermoError:
        T = np.full(PL.shape, np.nan)
        for idx in np.ndindex(PL.shape):
            try:
                T[idx] = temperature_grid(PL[idx], PG[idx], opt, gas, p)
            except ThermoError:
                failed[idx] = True
    rel = p.zeta_th * (T - p.t0)
    rel = np.maximum(rel, -1.0)
    if contour_levels is None:
        finite = T[np.isfinite(T)]
        contour_levels = list(np.unique(np.round(np.linspace(finite.min(), finite.max(), 7)[1:-1])))
    return BsatMap(p_laser_grid, pressure_grid, rel, T, failed, [float(c) for c in contour_levels])


def omega_from_bsat(bsat, kind: str, p: Particle, bpp: float | None = None,
                    omega_trap: float | None = None, b0: float | None = None,
                    const: PhysicalConstants = CONSTANTS):
    """omega_i = |B''| B_sat / (sqrt2 mu0 rho Omega), or omega_lib = sqrt(5 B0 B_sat / (2 mu0 rho a^2))."""
    bsat = np.asarray(bsat, dtype=float)
    if kind == "translational":
        if bpp is None or omega_trap is None:
            raise DomainError("translational model needs bpp and omega_trap")
        return abs(bpp) * bsat / (math.sqrt(2.0) * const.mu0 * p.density * omega_trap)
    if kind == "librational":
        if b0 is None:
            raise DomainError("librational model needs b0")
        return np.sqrt(5.0 * b0 * bsat / (2.0 * const.mu0 * p.density * p.radius**2))
    raise DomainError(f"unknown mode kind {kind!r}")


def model_frequencies(p_laser, alpha: float, bsat0: float, kind: str, gas: GasEnvironment,
                      p: Particle, waist: float, epsilon: float | None = None, **mode_inputs):
    """Eigenfrequency versus laser power for given (alpha, B_sat(T0)); epsilon defaults to alpha."""
    eps = alpha if epsilon is None else epsilon
    opt = OpticalParams(waist=waist)
    T = temperature_grid(p_laser, gas.pressure, opt, gas, p, alpha=alpha, epsilon=eps)
    bsat = np.maximum(bsat0 * (1.0 + p.zeta_th * (T - p.t0)), 0.0)
    return omega_from_bsat(bsat, kind, p, **mode_inputs)


@dataclass
class ThermoFit:
    alpha: float
    bsat0: float
    sigma_alpha: float
    sigma_bsat0: float
    covariance: np.ndarray
    residual_norm: float
    nfev: int
    epsilon: float | None = None
    sigma_epsilon: float | None = None
    waist: float | None = None
    sigma_waist: float | None = None
    note: str = PRESSURE_CAVEAT


def fit_thermo_model(p_laser, omega, kind: str, gas: GasEnvironment, p: Particle,
                     waist: float = 10e-6, bpp: float | None = None,
                     omega_trap: float | None = None, b0: float | None = None,
                     guess=(0.3, None), tie_emissivity: bool = True, fit_waist: bool = False,
                     max_nfev: int = 2000) -> ThermoFit:
    """Least-squares fit of (alpha, B_sat(T0)), by default with the emissivity tied to alpha.

    ``tie_emissivity=False`` fits epsilon separately; alpha and epsilon are then
    strongly correlated and the uncertainties are large. ``fit_waist`` adds the
    beam waist as a nuisance parameter. Uncertainties are 1 sigma from the
    Jacobian scaled by the residual variance.
    """
    p_laser = np.asarray(p_laser, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if p_laser.size < 4 or p_laser.shape != omega.shape:
        raise FitError("need at least four (P_laser, omega) observations of equal length")
    if kind not in ("translational", "librational"):
        raise DomainError(f"unknown mode kind {kind!r}")
    mode_inputs = {"bpp": bpp, "omega_trap": omega_trap} if kind == "translational" else {"b0": b0}

    alpha0, b_guess = guess
    if b_guess is None:
        # invert the mode formula at the lowest power, ignoring heating
        lowest = omega[np.argmin(p_laser)]
        unit = float(omega_from_bsat(1.0, kind, p, **mode_inputs))
        b_guess = lowest / unit if kind == "translational" else (lowest / unit) ** 2
    names = ["alpha", "bsat0"]
    x0 = [alpha0, b_guess]
    if not tie_emissivity:
        names.append("epsilon")
        x0.append(alpha0)
    if fit_waist:
        names.append("waist")
        x0.append(waist)
    x0 = np.asarray(x0, dtype=float)
    scale = np.abs(omega).mean()

    def unpack(x):
        d = dict(zip(names, x))
        return d["alpha"], d["bsat0"], d.get("epsilon"), d.get("waist", waist)

    def residuals(x):
        a, b, e, w = unpack(x)
        model = model_frequencies(p_laser, a, b, kind, gas, p, w, epsilon=e, **mode_inputs)
        return (model - omega) / scale

    res = least_squares(residuals, x0, method="lm", x_scale=np.abs(x0), xtol=1e-15,
                        ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    if res.status <= 0:
        raise FitError(f"fit did not converge: {res.message}", {"x": res.x, "nfev": res.nfev})
    J = res.jac
    dof = max(p_laser.size - len(x0), 1)
    s2 = float(np.sum(res.fun**2)) / dof
    jtj = J.T @ J
    cond = np.linalg.cond(jtj * np.outer(np.abs(x0), np.abs(x0)))
    if not np.isfinite(cond) or cond > 1e14:
        raise FitError("singular Jacobian; parameters are not identifiable from these data",
                       {"x": res.x, "cond": float(cond)})
    cov = np.linalg.inv(jtj) * s2
    sig = dict(zip(names, np.sqrt(np.diag(cov))))
    best = dict(zip(names, res.x))
    out = ThermoFit(float(best["alpha"]), float(best["bsat0"]), float(sig["alpha"]),
                    float(sig["bsat0"]), cov, float(np.linalg.norm(res.fun) * scale), int(res.nfev))
    if not tie_emissivity:
        out.epsilon, out.sigma_epsilon = float(best["epsilon"]), float(sig["epsilon"])
    if fit_waist:
        out.waist, out.sigma_waist = float(best["waist"]), float(sig["waist"])
    return out
