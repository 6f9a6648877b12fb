"""Run configuration: a JSON file with unit-suffixed keys, validated by pydantic.

This is the only place where non-SI units (um, mbar, mT, ...) appear; the
``to_*`` methods convert into the SI domain objects used everywhere else.
"""
from __future__ import annotations

import json
import math
import re
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import MBAR, GasEnvironment, Particle
from .fields import BiasCoil, CurvatureSet
from .spin import SpinConfig
from .thermo import OpticalParams
from .trapmodel import TrapSetup


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParticleSection(_Section):
    radius_um: float = Field(6.5, gt=0)
    density_kg_m3: float = Field(3.6e3, gt=0)
    bsat_T: float = Field(0.45, gt=0)
    bsat_axes_T: Optional[tuple[float, float, float]] = (0.45, 0.45, 0.51)
    bsat_lib_T: Optional[float] = Field(None, gt=0)
    zeta_th_per_K: float = -0.13e-2
    sigma_el_S_m: float = Field(0.67e6, ge=0)
    alpha_abs: float = Field(0.184, ge=0, le=1)
    epsilon_em: float = Field(0.184, ge=0, le=1)
    t0_K: float = Field(300.0, gt=0)

    def to_particle(self) -> Particle:
        return Particle(radius=self.radius_um * 1e-6, density=self.density_kg_m3, bsat0=self.bsat_T,
                        zeta_th=self.zeta_th_per_K, sigma_el=self.sigma_el_S_m,
                        alpha_abs=self.alpha_abs, epsilon_em=self.epsilon_em, t0=self.t0_K)


class GasSection(_Section):
    pressure_mbar: float = Field(1.0, ge=0)
    t_bath_K: float = Field(300.0, gt=0)
    m_gas_kg: float = Field(4.81e-26, gt=0)
    d_m_nm: float = Field(0.372, gt=0)
    c_acc: float = Field(0.65, ge=0, le=1)

    def to_gas(self) -> GasEnvironment:
        return GasEnvironment(pressure=self.pressure_mbar * MBAR, t_bath=self.t_bath_K,
                              m_gas=self.m_gas_kg, d_m=self.d_m_nm * 1e-9, c_acc=self.c_acc)


class TrapSection(_Section):
    i_trap_A: float = Field(0.163, gt=0)
    f_trap_Hz: float = Field(2485.0, gt=0)
    bpp_x_T_per_m2: float = 2.15e5
    bpp_y_T_per_m2: float = 2.83e5
    bpp_z_T_per_m2: float = 4.54e5
    bpp_ref_current_A: float = Field(0.163, gt=0)
    curvature_file: Optional[str] = None

    def curvatures(self, base_dir: Path | None = None) -> CurvatureSet:
        if self.curvature_file:
            path = Path(self.curvature_file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return CurvatureSet.from_json(path)
        return CurvatureSet(self.bpp_x_T_per_m2, self.bpp_y_T_per_m2, self.bpp_z_T_per_m2,
                            i_trap=self.bpp_ref_current_A,
                            omega_trap=2 * math.pi * self.f_trap_Hz, source="config")


class CoilSection(_Section):
    i_b0_A: float = Field(0.100, gt=0)
    model: Literal["anchor", "geometric"] = "anchor"
    windings: int = Field(835, ge=1)
    radius_mm: float = Field(14.0, gt=0)
    length_mm: float = Field(13.0, gt=0)
    z0_mm: float = Field(8.2, gt=0)
    anchor_current_A: float = Field(0.145, gt=0)
    anchor_b0_mT: float = Field(1.8, gt=0)
    anchor_gradient_T_per_m: float = Field(0.19, gt=0)

    def to_coil(self) -> BiasCoil:
        return BiasCoil(windings=self.windings, radius=self.radius_mm * 1e-3,
                        length=self.length_mm * 1e-3, z0=self.z0_mm * 1e-3, i_b0=self.i_b0_A,
                        model=self.model, anchor_current=self.anchor_current_A,
                        anchor_b0=self.anchor_b0_mT * 1e-3,
                        anchor_gradient=self.anchor_gradient_T_per_m)


class OpticalSection(_Section):
    p_laser_W: float = Field(1e-6, ge=0)
    waist_um: float = Field(..., gt=0)
    wavelength_nm: float = Field(633.0, gt=0)

    def to_optical(self) -> OpticalParams:
        return OpticalParams(self.p_laser_W, self.waist_um * 1e-6, self.wavelength_nm * 1e-9)


class SpinSection(_Section):
    radius_um: float = Field(0.25, gt=0)
    density_kg_m3: float = Field(7.4e3, gt=0)
    bsat_T: float = Field(1.4, gt=0)
    d_um: float = Field(0.7, gt=0)
    t2_star_ms: float = Field(0.5, gt=0)
    linewidth_Hz: float = Field(1e-3, ge=0)
    t_bath_K: float = Field(4.0, gt=0)
    b0_mT: float = Field(5.0, gt=0)

    def to_spin(self) -> SpinConfig:
        return SpinConfig(d=self.d_um * 1e-6, t2_star=self.t2_star_ms * 1e-3,
                          gamma_lib_assumed=2 * math.pi * self.linewidth_Hz, t_bath=self.t_bath_K)

    def to_particle(self) -> Particle:
        return Particle(radius=self.radius_um * 1e-6, density=self.density_kg_m3, bsat0=self.bsat_T)


class SimulationSection(_Section):
    steps_per_period: float = Field(40.0, gt=20)
    duration_s: float = Field(0.2, gt=0)
    scheme: Literal["rk4", "semi_implicit"] = "rk4"
    include_noise: bool = False
    include_damping: bool = False
    include_libration: bool = True
    drive_model: Literal["analytic_curvature", "full_field"] = "analytic_curvature"
    sample_every: int = Field(1, ge=1)
    x0_um: tuple[float, float, float] = (1.0, 1.0, 1.0)
    theta0_rad: float = 0.0
    bias_offset_m_s2: tuple[float, float, float] = (0.0, 0.0, 0.0)


class RunConfig(_Section):
    particle: ParticleSection = ParticleSection()
    gas: GasSection = GasSection()
    trap: TrapSection = TrapSection()
    coil: CoilSection = CoilSection()
    optical: Optional[OpticalSection] = None
    spin: SpinSection = SpinSection()
    simulation: SimulationSection = SimulationSection()
    out_dir: str = "maglev_out"
    format: Literal["csv", "json"] = "csv"
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_axes(self):
        if self.particle.bsat_axes_T is not None and min(self.particle.bsat_axes_T) <= 0:
            raise ValueError("particle.bsat_axes_T entries must be > 0")
        return self

    def trap_setup(self, base_dir: Path | None = None) -> TrapSetup:
        p = self.particle
        return TrapSetup(particle=p.to_particle(), curvatures=self.trap.curvatures(base_dir),
                         coil=self.coil.to_coil(), i_trap=self.trap.i_trap_A,
                         omega_trap=2 * math.pi * self.trap.f_trap_Hz,
                         bsat_axes=p.bsat_axes_T, bsat_lib=p.bsat_lib_T)

    def optical_params(self) -> OpticalParams:
        if self.optical is None:
            raise ConfigError("this operation needs an 'optical' section with 'waist_um'")
        return self.optical.to_optical()


def _line_of(text: str, loc: tuple) -> int | None:
    """Best-effort line number of the key path ``loc`` in JSON ``text``."""
    pos = 0
    line = None
    for key in loc:
        if not isinstance(key, str):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            where = ".".join(str(k) for k in loc) or "<root>"
            if err["type"] == "missing":
                line = _line_of(text, loc[:-1]) if len(loc) > 1 else None
                msg = f"missing required key '{loc[-1]}'"
            else:
                line = _line_of(text, loc)
                msg = err["msg"]
            lines.append(f"{source}:{line if line is not None else '?'}: {where}: {msg}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path) -> tuple[RunConfig, Path]:
    path = Path(path)
    return parse_config(path.read_text(), str(path)), path.parent


def default_config() -> RunConfig:
    return parse_config(resources.files("maglev.data").joinpath("default_config.json").read_text(),
                        "default_config.json")


def reference_values() -> dict:
    """Bundled literature/measurement constants, each with a provenance string."""
    return json.loads(resources.files("maglev.data").joinpath("reference_values.json").read_text())
