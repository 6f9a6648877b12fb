"""Closed-form trap characterisation: stability, eigenmodes, micromotion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .core import CONSTANTS, DomainError, Particle, PhysicalConstants, dipole_moment
from .fields import BiasCoil, CurvatureSet, coil_field_and_gradient, reference_curvatures

SECULAR_LIMIT = 0.4
# first instability boundary of the a = 0 Mathieu equation
MATHIEU_Q_MAX = 0.908
ANGULAR_STABILITY_FACTOR = 5.0

REGIMES = ("secular", "nonsecular_stable", "unstable")


class StabilityError(ValueError):
    def __init__(self, q):
        self.q = tuple(float(v) for v in q)
        super().__init__(f"trap is unstable: q = {self.q} (boundary {MATHIEU_Q_MAX})")


def classify_regime(q_max: float) -> str:
    if q_max >= MATHIEU_Q_MAX:
        return "unstable"
    if q_max < SECULAR_LIMIT:
        return "secular"
    return "nonsecular_stable"


@dataclass(frozen=True)
class StabilityParams:
    q_x: float
    q_y: float
    q_z: float

    @property
    def q(self) -> np.ndarray:
        return np.array([self.q_x, self.q_y, self.q_z])

    @property
    def regime(self) -> str:
        return classify_regime(max(self.q_x, self.q_y, self.q_z))

    @property
    def margin(self) -> float:
        """Distance of the largest q below the Mathieu boundary (negative when unstable)."""
        return MATHIEU_Q_MAX - max(self.q_x, self.q_y, self.q_z)


def _bsat_axes(p: Particle, bsat) -> np.ndarray:
    if bsat is None:
        return np.full(3, p.bsat0)
    b = np.broadcast_to(np.asarray(bsat, dtype=float), (3,)).copy()
    if np.any(b <= 0):
        raise DomainError("remanent field must be > 0")
    return b


def stability_params(curv: CurvatureSet, p: Particle, omega_trap: float | None = None,
                     bsat=None, const: PhysicalConstants = CONSTANTS) -> StabilityParams:
    """q_i = 2 |B''_i| B_sat / (mu0 rho_m Omega^2).

    ``bsat`` may be a scalar or one value per axis; it defaults to ``p.bsat0``.
    """
    omega = curv.omega_trap if omega_trap is None else omega_trap
    if not omega > 0:
        raise DomainError("drive frequency must be > 0")
    q = 2.0 * curv.magnitudes() * _bsat_axes(p, bsat) / (const.mu0 * p.density * omega**2)
    return StabilityParams(*q)


def translational_modes(sp: StabilityParams, omega_trap: float) -> tuple[float, float, float]:
    """omega_i = q_i Omega / (2 sqrt 2), rad/s."""
    if sp.regime == "unstable":
        raise StabilityError(sp.q)
    w = sp.q * omega_trap / (2.0 * math.sqrt(2.0))
    return float(w[0]), float(w[1]), float(w[2])


def libration_mode(b0: float, p: Particle, bsat: float | None = None,
                   const: PhysicalConstants = CONSTANTS) -> float:
    """omega_lib = sqrt(B0 B_sat V / (mu0 I)) = sqrt(5 B0 B_sat / (2 mu0 rho_m a^2))."""
    if not b0 > 0:
        raise DomainError("static field B0 must be > 0")
    bsat = p.bsat0 if bsat is None else bsat
    return math.sqrt(b0 * bsat * p.volume / (const.mu0 * p.inertia))


def libration_potential(theta, b0: float, p: Particle, bsat: float | None = None,
                        const: PhysicalConstants = CONSTANTS):
    """U_lib = mu B0 (1 - cos theta), zero at alignment."""
    bsat = p.bsat0 if bsat is None else bsat
    mu = dipole_moment(p, bsat, const)
    return mu * b0 * (1.0 - np.cos(theta))


def pseudo_potential(curv: CurvatureSet, p: Particle, omega_trap: float, positions,
                     axis: int | None = None, bsat=None, const: PhysicalConstants = CONSTANTS):
    """Time-averaged potential |d_i(mu_z B_1z)|^2 / (4 m Omega^2) for B_1z = B''_i x_i^2 / 2.

    With ``axis`` set, ``positions`` are coordinates along that axis and the
    single-axis potential is returned. Otherwise ``positions`` has shape
    (..., 3) and the sum over axes is returned.
    """
    if not omega_trap > 0:
        raise DomainError("drive frequency must be > 0")
    b = _bsat_axes(p, bsat)
    mu = b * p.volume / const.mu0
    k = (mu * curv.magnitudes()) ** 2 / (4.0 * p.mass * omega_trap**2)
    x = np.asarray(positions, dtype=float)
    if axis is not None:
        return k[axis] * x**2
    return np.sum(k * x**2, axis=-1)


@dataclass(frozen=True)
class ModeSet:
    """Angular eigenfrequencies (rad/s)."""

    omega_x: float
    omega_y: float
    omega_z: float
    omega_lib: float
    omega_trap: float
    stability: StabilityParams | None = None
    angular_factor: float = ANGULAR_STABILITY_FACTOR

    @property
    def translational(self) -> np.ndarray:
        return np.array([self.omega_x, self.omega_y, self.omega_z])

    @property
    def angular_stable(self) -> bool:
        return self.omega_lib > self.angular_factor * float(np.max(self.translational))

    def frequencies_hz(self) -> dict:
        two_pi = 2 * math.pi
        return {"f_x": self.omega_x / two_pi, "f_y": self.omega_y / two_pi,
                "f_z": self.omega_z / two_pi, "f_lib": self.omega_lib / two_pi,
                "f_trap": self.omega_trap / two_pi}


def compute_modes(curv: CurvatureSet, p: Particle, omega_trap: float, b0: float,
                  bsat_axes=None, bsat_lib: float | None = None,
                  const: PhysicalConstants = CONSTANTS) -> ModeSet:
    sp = stability_params(curv, p, omega_trap, bsat_axes, const)
    wx, wy, wz = translational_modes(sp, omega_trap)
    wlib = libration_mode(b0, p, bsat_lib, const)
    return ModeSet(wx, wy, wz, wlib, omega_trap, sp)


class Line(NamedTuple):
    freq_hz: float
    mode: str
    m: int
    n: int
    sign: int
    rank: int  # m + n; higher rank means weaker line


def micromotion_lines(modes: ModeSet, n_max: int = 2, m_max: int = 2,
                      include_lib: bool = True) -> list[Line]:
    """Sorted, de-duplicated list of |m Omega +- n omega_i| (Hz) with labels."""
    if n_max < 0 or m_max < 0:
        raise DomainError("n_max and m_max must be >= 0")
    two_pi = 2 * math.pi
    sources = [("x", modes.omega_x), ("y", modes.omega_y), ("z", modes.omega_z)]
    if include_lib:
        sources.append(("lib", modes.omega_lib))
    f_drive = modes.omega_trap / two_pi
    raw = []
    for m in range(m_max + 1):
        raw.append(Line(m * f_drive, "drive", m, 0, 1, m))
        for name, w in sources:
            f = w / two_pi
            for n in range(1, n_max + 1):
                for sign in (1, -1):
                    if m == 0 and sign < 0:
                        continue
                    val = m * f_drive + sign * n * f
                    raw.append(Line(abs(val), name, m, n, sign, m + n))
    raw.sort(key=lambda ln: (ln.freq_hz, ln.rank))
    out: list[Line] = []
    for ln in raw:
        if out and math.isclose(ln.freq_hz, out[-1].freq_hz, rel_tol=1e-12, abs_tol=1e-9):
            continue
        out.append(ln)
    return out


@dataclass(frozen=True)
class TrapSetup:
    """Everything needed to evaluate the eigenmodes at one operating point.

    ``curvatures`` are the reference values at ``curvatures.i_trap``; they are
    rescaled to ``i_trap``.
    """

    particle: Particle = Particle()
    curvatures: CurvatureSet = field(default_factory=reference_curvatures)
    coil: BiasCoil = BiasCoil()
    i_trap: float = 0.163
    omega_trap: float = 2 * math.pi * 2485.0
    bsat_axes: tuple | None = None
    bsat_lib: float | None = None

    def scaled_curvatures(self) -> CurvatureSet:
        return replace(self.curvatures.scaled_to(self.i_trap), omega_trap=self.omega_trap)

    def b0(self) -> float:
        return coil_field_and_gradient(self.coil)[0]

    def stability(self) -> StabilityParams:
        return stability_params(self.scaled_curvatures(), self.particle, self.omega_trap,
                                self.bsat_axes)

    def modes(self) -> ModeSet:
        return compute_modes(self.scaled_curvatures(), self.particle, self.omega_trap,
                             self.b0(), self.bsat_axes, self.bsat_lib)


SWEEP_PARAMETERS = {"i_trap": "A", "i_b0": "A", "omega_trap": "rad/s"}


@dataclass
class SweepResult:
    parameter: str
    grid: np.ndarray
    omega: dict  # name -> array (rad/s), NaN where unstable
    q_max: np.ndarray
    regime: list
    exponents: dict

    @property
    def any_unstable(self) -> bool:
        return "unstable" in self.regime

    def columns(self) -> dict:
        unit = SWEEP_PARAMETERS[self.parameter]
        cols = {f"{self.parameter}_{unit.replace('/', '_per_')}": self.grid}
        for name, w in self.omega.items():
            cols[f"{name}_rad_s"] = w
        cols["q_max"] = self.q_max
        cols["regime"] = np.array(self.regime)
        return cols


def power_law_exponent(x, y) -> float:
    """Least-squares slope of log y against log x over finite points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > 0) & (x > 0)
    if ok.sum() < 2:
        return float("nan")
    lx = np.log(x[ok])
    ly = np.log(y[ok])
    dx = lx - lx.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0:
        return float("nan")
    return float(np.dot(dx, ly - ly.mean()) / sxx)


def sweep_modes(parameter: str, grid: Sequence[float], base: TrapSetup) -> SweepResult:
    """Evaluate the modes over ``grid`` of one operating parameter.

    Unstable points keep their q value and regime but get NaN frequencies.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise DomainError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEP_PARAMETERS)}")
    grid = np.asarray(grid, dtype=float)
    names = ("omega_x", "omega_y", "omega_z", "omega_lib")
    omega = {n: np.full(grid.size, np.nan) for n in names}
    q_max = np.empty(grid.size)
    regime = []
    for k, value in enumerate(grid):
        if parameter == "i_b0":
            setup = replace(base, coil=replace(base.coil, i_b0=float(value)))
        else:
            setup = replace(base, **{parameter: float(value)})
        sp = setup.stability()
        q_max[k] = sp.q.max()
        regime.append(sp.regime)
        if sp.regime == "unstable":
            continue
        ms = setup.modes()
        for n in names:
            omega[n][k] = getattr(ms, n)
    exponents = {n: power_law_exponent(grid, omega[n]) for n in names}
    return SweepResult(parameter, grid, omega, q_max, regime, exponents)


@dataclass(frozen=True)
class LibrationSweep:
    slope_c: float  # rad/s per sqrt(A)
    omega_initial: float  # rad/s
    bsat: float  # T


def bsat_from_libration_sweep(delta_omega: float, i_initial: float, i_final: float,
                              p: Particle, coil: BiasCoil = BiasCoil(),
                              const: PhysicalConstants = CONSTANTS) -> LibrationSweep:
    """Remanent field from the libration shift between two coil currents.

    C = d_omega / (sqrt(I_f) - sqrt(I_i)), omega_lib(I_i) = C sqrt(I_i), and
    B_sat = (d_omega / (K (sqrt(I_f/I_i B0_i) - sqrt(B0_i))))^2 with
    K = sqrt(5 / (2 mu0 rho_m a^2)). B0_i comes from the coil model at I_i.
    """
    if not delta_omega > 0:
        raise DomainError("libration shift must be > 0")
    if not i_final > i_initial > 0:
        raise DomainError("need i_final > i_initial > 0")
    c = delta_omega / (math.sqrt(i_final) - math.sqrt(i_initial))
    omega_i = c * math.sqrt(i_initial)
    b0_i = coil_field_and_gradient(replace(coil, i_b0=i_initial), const=const)[0]
    k = math.sqrt(5.0 / (2.0 * const.mu0 * p.density * p.radius**2))
    bsat = (delta_omega / (k * (math.sqrt(i_final / i_initial * b0_i) - math.sqrt(b0_i)))) ** 2
    return LibrationSweep(c, omega_i, bsat)
