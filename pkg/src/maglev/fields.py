"""Analytic magnetostatics of the on-chip trap.

Filamentary circular loops stand in for the finite-width gold tracks. The
off-axis loop field uses complete elliptic integrals evaluated with the
arithmetic-geometric mean. FEM curvatures can be loaded instead of the
analytic ones (``CurvatureSet.from_json``); the bundled file carries the
values for I_inner = 163 mA at 2485 Hz.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .core import CONSTANTS, DomainError, Particle, PhysicalConstants

AGM_TOL = 1e-12
SINGULAR_DISTANCE = 1e-12  # m


class SingularityError(ValueError):
    """Field requested on a current filament."""


def ellipk_ellipe(m):
    """Complete elliptic integrals K(m), E(m) (parameter m = k^2) via AGM.

    Works elementwise on arrays. ``m`` must lie in [0, 1).
    """
    m = np.asarray(m, dtype=float)
    if np.any(m < 0) or np.any(m >= 1):
        raise DomainError("elliptic parameter must lie in [0, 1)")
    a = np.ones_like(m)
    b = np.sqrt(1.0 - m)
    c = np.sqrt(m)
    csum = 0.5 * c**2  # 2^(n-1) c_n^2 at n = 0
    power = 0.5
    for _ in range(64):
        a, b, c = 0.5 * (a + b), np.sqrt(a * b), 0.5 * (a - b)
        power *= 2.0
        csum = csum + power * c**2
        if np.all(np.abs(c) < AGM_TOL):
            break
    else:  # pragma: no cover - quadratic convergence makes this unreachable
        raise RuntimeError("AGM iteration did not converge")
    K = math.pi / (2.0 * a)
    E = K * (1.0 - csum)
    return K, E


@dataclass(frozen=True)
class CurrentLoop:
    """Filamentary loop in a plane z = center_z, centred on the z axis."""

    radius: float
    center_z: float = 0.0
    current: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"loop radius must be > 0, got {self.radius}")


def loop_field_axial(loop: CurrentLoop, z, const: PhysicalConstants = CONSTANTS):
    """On-axis B_z = mu0 I R^2 / (2 (R^2 + dz^2)^{3/2})."""
    dz = np.asarray(z, dtype=float) - loop.center_z
    R = loop.radius
    return const.mu0 * loop.current * R**2 / (2.0 * (R**2 + dz**2) ** 1.5)


def loop_field(loop: CurrentLoop, point, const: PhysicalConstants = CONSTANTS):
    """Full field of a loop at one point or an array of points (..., 3), in T."""
    pts = np.asarray(point, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    z = pts[..., 2] - loop.center_z
    R = loop.radius
    rho = np.hypot(x, y)

    alpha2 = (R - rho) ** 2 + z**2
    if np.any(np.sqrt(alpha2) < SINGULAR_DISTANCE):
        raise SingularityError("field point lies on the current filament")
    beta2 = (R + rho) ** 2 + z**2
    beta = np.sqrt(beta2)
    K, E = ellipk_ellipe(1.0 - alpha2 / beta2)
    C = const.mu0 * loop.current / math.pi

    r2 = rho**2 + z**2
    bz = C / (2.0 * alpha2 * beta) * ((R**2 - r2) * E + alpha2 * K)

    near_axis = rho < 1e-8 * R
    safe_rho = np.where(near_axis, 1.0, rho)
    brho = C * z / (2.0 * alpha2 * beta * safe_rho) * ((R**2 + r2) * E - alpha2 * K)
    # first-order expansion about the axis: B_rho = -(rho/2) dBz/dz
    brho_axis = 3.0 * const.mu0 * loop.current * R**2 * z * rho / (4.0 * (R**2 + z**2) ** 2.5)
    brho = np.where(near_axis, brho_axis, brho)

    cos_phi = np.where(near_axis, 1.0, x / safe_rho)
    sin_phi = np.where(near_axis, 0.0, y / safe_rho)
    return np.stack([brho * cos_phi, brho * sin_phi, bz], axis=-1)


@dataclass(frozen=True)
class TrapFieldModel:
    """Two coplanar concentric loops carrying I and -xi*I at drive frequency omega_trap.

    The loops' own ``current`` fields are ignored; currents come from
    ``i_trap`` and ``xi``. Default radii are track inner radius plus half the
    track width (60+25 um and 120+50 um).
    """

    inner: CurrentLoop = CurrentLoop(85e-6)
    outer: CurrentLoop = CurrentLoop(170e-6)
    xi: float = 2.0
    omega_trap: float = 2 * math.pi * 2485.0
    i_trap: float = 0.163

    def __post_init__(self):
        if not self.omega_trap > 0:
            raise DomainError("drive frequency must be > 0")

    def loops(self) -> tuple[CurrentLoop, CurrentLoop]:
        return (replace(self.inner, current=self.i_trap),
                replace(self.outer, current=-self.xi * self.i_trap))

    def amplitude(self, point, const: PhysicalConstants = CONSTANTS):
        """B_1(point): the field at the drive phase where cos(Omega t) = 1."""
        a, b = self.loops()
        return loop_field(a, point, const) + loop_field(b, point, const)


def trap_field(model: TrapFieldModel, point, t: float = 0.0, const: PhysicalConstants = CONSTANTS):
    return model.amplitude(point, const) * math.cos(model.omega_trap * t)


def cancelling_ratio(model: TrapFieldModel, center=(0.0, 0.0, 0.0)) -> float:
    """Current ratio xi for which the axial amplitude field vanishes at ``center``."""
    bi = loop_field(replace(model.inner, current=1.0), center)[2]
    bo = loop_field(replace(model.outer, current=1.0), center)[2]
    return float(bi / bo)


@dataclass(frozen=True)
class CurvatureSet:
    """Second derivatives d^2 B_{1,z} / dx_i^2 of the drive amplitude (T/m^2).

    Values from the analytic model are signed (Laplace forces bpp_z to have
    the opposite sign of bpp_x + bpp_y); FEM imports are magnitudes. All mode
    formulas use magnitudes.
    """

    bpp_x: float
    bpp_y: float
    bpp_z: float
    i_trap: float = 0.163
    omega_trap: float = 2 * math.pi * 2485.0
    source: str = "analytic"
    fit_residual: float = 0.0
    fit_warning: bool = False

    def __post_init__(self):
        if not all(np.isfinite([self.bpp_x, self.bpp_y, self.bpp_z])):
            raise DomainError("curvatures must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.bpp_x, self.bpp_y, self.bpp_z])

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.as_array())

    def scaled_to(self, i_trap: float) -> "CurvatureSet":
        """Curvatures are linear in the trap current."""
        s = i_trap / self.i_trap
        return replace(self, bpp_x=self.bpp_x * s, bpp_y=self.bpp_y * s,
                       bpp_z=self.bpp_z * s, i_trap=i_trap)

    def to_dict(self) -> dict:
        return {
            "bpp_x_T_per_m2": self.bpp_x,
            "bpp_y_T_per_m2": self.bpp_y,
            "bpp_z_T_per_m2": self.bpp_z,
            "i_trap_A": self.i_trap,
            "omega_trap_Hz": self.omega_trap / (2 * math.pi),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurvatureSet":
        return cls(
            bpp_x=float(d["bpp_x_T_per_m2"]),
            bpp_y=float(d["bpp_y_T_per_m2"]),
            bpp_z=float(d["bpp_z_T_per_m2"]),
            i_trap=float(d["i_trap_A"]),
            omega_trap=2 * math.pi * float(d["omega_trap_Hz"]),
            source=str(d.get("source", "import")),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "CurvatureSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def reference_curvatures() -> CurvatureSet:
    """Bundled FEM curvatures {2.15, 2.83, 4.54} x 1e5 T/m^2 at 163 mA, 2485 Hz."""
    text = resources.files("maglev.data").joinpath("reference_curvatures.json").read_text()
    return CurvatureSet.from_dict(json.loads(text))


_AXES = np.eye(3)


def extract_curvatures(model: TrapFieldModel, half_range: float = 15e-6, n_points: int = 21,
                       degree: int = 2, sampling: str = "gauss", center=(0.0, 0.0, 0.0),
                       residual_threshold: float = 1e-2) -> CurvatureSet:
    """Fit a polynomial to B_{1,z} along each axis through ``center``.

    ``degree=2`` is the plain parabola fit. Over a +-15 um window the quartic
    part of the loop field leaks into the fitted x^2 coefficient by several
    per cent; ``degree=6`` isolates the true second derivative.

    ``sampling="gauss"`` places the samples at Gauss-Legendre nodes and
    weights the fit with the quadrature weights, which makes the result the
    continuous L2 projection and hence insensitive to the sample count.
    ``sampling="uniform"`` is an ordinary equally spaced least-squares fit.
    """
    if not half_range > 0:
        raise DomainError("half_range must be > 0")
    if n_points < 21:
        raise DomainError("at least 21 samples per axis are required")
    if degree < 2:
        raise DomainError("fit degree must be >= 2")
    if sampling == "gauss":
        u, w = np.polynomial.legendre.leggauss(n_points)
    elif sampling == "uniform":
        u = np.linspace(-1.0, 1.0, n_points)
        w = np.ones(n_points)
    else:
        raise DomainError(f"unknown sampling {sampling!r}")

    center = np.asarray(center, dtype=float)
    sw = np.sqrt(w)
    vander = np.vander(u, degree + 1, increasing=True)
    curv = []
    worst = 0.0
    for axis in _AXES:
        pts = center + np.outer(u * half_range, axis)
        bz = model.amplitude(pts)[:, 2]
        coef, *_ = np.linalg.lstsq(vander * sw[:, None], bz * sw, rcond=None)
        resid = bz - vander @ coef
        spread = np.sqrt(np.sum(w * (bz - np.sum(w * bz) / np.sum(w)) ** 2))
        rel = np.sqrt(np.sum(w * resid**2)) / spread if spread > 0 else 0.0
        worst = max(worst, rel)
        curv.append(2.0 * coef[2] / half_range**2)
    flag = worst > residual_threshold
    return CurvatureSet(*curv, i_trap=model.i_trap, omega_trap=model.omega_trap,
                        source="analytic", fit_residual=worst, fit_warning=flag)


@dataclass(frozen=True)
class BiasCoil:
    """External static-field coil above the trap.

    ``model="anchor"`` scales the FEM anchor (B0, B0' at ``anchor_current``)
    linearly; it is only defined at the trap position. ``model="geometric"``
    treats the winding as ``windings`` filamentary loops of radius ``radius``
    spread over ``length`` starting ``z0`` above the trap centre. The coil
    geometry is assumed; radius 14 mm and length 13 mm reproduce the
    anchor to a few per cent.
    """

    windings: int = 835
    radius: float = 14e-3
    length: float = 13e-3
    z0: float = 8.2e-3
    i_b0: float = 0.100
    model: str = "anchor"
    anchor_current: float = 0.145
    anchor_b0: float = 1.8e-3
    anchor_gradient: float = 0.19

    def __post_init__(self):
        if self.windings < 1:
            raise DomainError("coil needs at least one winding")
        if not self.z0 > 0:
            raise DomainError("coil standoff z0 must be > 0")
        if self.model not in ("anchor", "geometric"):
            raise DomainError(f"unknown coil model {self.model!r}")


# alternative calibration current quoted for the same 1.8 mT anchor
ANCHOR_CURRENT_CAPTION = 0.150


def coil_field_and_gradient(coil: BiasCoil, z: float | None = None,
                            const: PhysicalConstants = CONSTANTS) -> tuple[float, float]:
    """(B0, dB0/dz) on the coil axis at distance ``z`` below the coil bottom.

    The gradient is taken along the trap's upward z axis (towards the coil),
    so it is positive. ``z`` defaults to the trap position ``coil.z0``.
    """
    z = coil.z0 if z is None else z
    if coil.model == "anchor":
        if not math.isclose(z, coil.z0, rel_tol=0, abs_tol=1e-12):
            raise DomainError("the calibration-anchor coil model is only defined at z0")
        s = coil.i_b0 / coil.anchor_current
        return coil.anchor_b0 * s, coil.anchor_gradient * s

    heights = z + coil.length * (np.arange(coil.windings) + 0.5) / coil.windings
    R = coil.radius
    pref = const.mu0 * coil.i_b0 * R**2 / 2.0
    b0 = np.sum(pref / (R**2 + heights**2) ** 1.5)
    grad = np.sum(3.0 * pref * heights / (R**2 + heights**2) ** 2.5)
    return float(b0), float(grad)


def levitation_current(coil: BiasCoil, p: Particle, bsat: float | None = None,
                       g: float = CONSTANTS.g_accel, const: PhysicalConstants = CONSTANTS) -> float:
    """Coil current whose gradient force mu_z B0' balances gravity m g."""
    bsat = p.bsat0 if bsat is None else bsat
    if not bsat > 0:
        raise DomainError("remanent field must be > 0")
    required = const.mu0 * p.density * g / bsat
    _, grad_per_amp = coil_field_and_gradient(replace(coil, i_b0=1.0), const=const)
    return required / grad_per_amp
