"""Time-domain integration of the trapped magnet.

State per trajectory: (x, y, z, vx, vy, vz, theta, theta_dot), with theta the
tilt of the moment about the y axis. Translational acceleration in the
curvature model::

    a_i = (mu B''_i / m) x_i cos(Omega t) + a_bias,i - gamma v_i

which per axis is the Mathieu equation x'' + (Omega^2 / 2) q_i cos(Omega t) x = 0.
Libration: theta'' = -(mu B0 / I) sin(theta) - gamma_lib theta_dot.
Thermal noise enters as Euler-Maruyama velocity kicks after each step.
With ``include_libration=False`` the angle is frozen, which lifts the step
limit set by the libration frequency for translation-only runs.
"""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analysis import TimeSeries, psd_welch, peak_frequency
from .core import CONSTANTS, DomainError, GasEnvironment, Particle, PhysicalConstants
from .dissipation import gamma_librational, gamma_translational
from .fields import TrapFieldModel
from .trapmodel import TrapSetup

COLUMNS = ("x", "y", "z", "vx", "vy", "vz", "theta", "theta_dot")
MAGIC = b"MGLVTRJ\x00"
SCHEMA_VERSION = 1
ESCAPE_RADIUS = 40e-6
MIN_STEPS_PER_PERIOD = 20
NOISE_CHUNK = 4096


class IntegrationError(RuntimeError):
    pass


@dataclass
class DynamicState:
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta: float = 0.0
    theta_dot: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.r, float), np.asarray(self.v, float),
                               [self.theta, self.theta_dot]])

    @classmethod
    def from_vector(cls, s) -> "DynamicState":
        s = np.asarray(s, dtype=float)
        return cls(s[0:3].copy(), s[3:6].copy(), float(s[6]), float(s[7]))


@dataclass(frozen=True)
class SimConfig:
    dt: float
    duration: float
    scheme: str = "rk4"
    include_noise: bool = False
    include_damping: bool = False
    seed: int = 0
    drive_model: str = "analytic_curvature"
    sample_every: int = 1
    escape_radius: float = ESCAPE_RADIUS
    include_libration: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.duration > 0):
            raise DomainError("dt and duration must be > 0")
        if self.scheme not in ("rk4", "semi_implicit"):
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.drive_model not in ("analytic_curvature", "full_field"):
            raise DomainError(f"unknown drive model {self.drive_model!r}")
        if self.sample_every < 1:
            raise DomainError("sample_every must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class Physics:
    """Coefficients of the equations of motion for one trajectory, SI units."""

    omega_trap: float
    kappa: tuple = (0.0, 0.0, 0.0)  # mu B''_i / m, 1/s^2
    omega_lib: float = 0.0
    gamma: float = 0.0  # rad/s
    gamma_lib: float = 0.0
    a_bias: tuple = (0.0, 0.0, 0.0)  # residual static acceleration, m/s^2
    mass: float = 1.0
    inertia: float = 1.0
    t_bath: float = 300.0
    mu: float = 0.0  # A m^2, only used with the full-field drive
    trap: TrapFieldModel | None = None
    b0: float = 0.0

    @classmethod
    def from_q(cls, q, omega_trap: float, p: Particle = Particle(), **kw) -> "Physics":
        """Drive coefficients from Mathieu parameters: kappa_i = q_i Omega^2 / 2."""
        q = np.broadcast_to(np.asarray(q, dtype=float), (3,))
        return cls(omega_trap=omega_trap, kappa=tuple(q * omega_trap**2 / 2.0), mass=p.mass,
                   inertia=p.inertia, **kw)

    @classmethod
    def from_setup(cls, setup: TrapSetup, gas: GasEnvironment | None = None,
                   a_bias=(0.0, 0.0, 0.0), const: PhysicalConstants = CONSTANTS) -> "Physics":
        p = setup.particle
        curv = setup.scaled_curvatures()
        b = np.broadcast_to(np.asarray(setup.bsat_axes if setup.bsat_axes is not None else p.bsat0,
                                       dtype=float), (3,))
        mu_axes = b * p.volume / const.mu0
        kappa = mu_axes * curv.as_array() / p.mass
        modes = setup.modes()
        g = gl = 0.0
        t_bath = 300.0
        if gas is not None:
            g = gamma_translational(p, gas, const)
            gl = gamma_librational(p, gas, const)[0]
            t_bath = gas.t_bath
        bl = setup.bsat_lib if setup.bsat_lib is not None else p.bsat0
        return cls(omega_trap=setup.omega_trap, kappa=tuple(kappa), omega_lib=modes.omega_lib,
                   gamma=g, gamma_lib=gl, a_bias=tuple(a_bias), mass=p.mass, inertia=p.inertia,
                   t_bath=t_bath, mu=bl * p.volume / const.mu0,
                   trap=TrapFieldModel(omega_trap=setup.omega_trap, i_trap=setup.i_trap),
                   b0=setup.b0())


class _Coeffs:
    """Per-member coefficient arrays for a batch of trajectories."""

    def __init__(self, phys: Sequence[Physics], damping: bool, libration: bool = True):
        self.lib = 1.0 if libration else 0.0
        self.omega = np.array([p.omega_trap for p in phys])[:, None]
        self.kappa = np.array([p.kappa for p in phys], dtype=float)
        self.wl2 = np.array([p.omega_lib**2 for p in phys])
        self.a_bias = np.array([p.a_bias for p in phys], dtype=float)
        self.gamma = np.array([p.gamma if damping else 0.0 for p in phys])[:, None]
        self.gamma_lib = np.array([p.gamma_lib if damping else 0.0 for p in phys])
        self.mass = np.array([p.mass for p in phys])
        self.inertia = np.array([p.inertia for p in phys])
        self.t_bath = np.array([p.t_bath for p in phys])
        self.mu = np.array([p.mu for p in phys])
        self.b0 = np.array([p.b0 for p in phys])
        self.traps = [p.trap for p in phys]


def _field_and_gradient(trap: TrapFieldModel, r: np.ndarray, h: float = 50e-9):
    """Drive amplitude B(r) (..., 3) and Jacobian dB_j/dx_i (..., 3, 3) by central differences."""
    b = trap.amplitude(r)
    jac = np.empty(r.shape[:-1] + (3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        jac[..., i, :] = (trap.amplitude(r + e) - trap.amplitude(r - e)) / (2 * h)
    return b, jac


def equations_of_motion(state, t: float, c: _Coeffs, drive_model: str = "analytic_curvature"):
    """Time derivative of a batch of states with shape (N, 8)."""
    s = np.atleast_2d(state)
    r, v, th, thd = s[:, 0:3], s[:, 3:6], s[:, 6], s[:, 7]
    d = np.empty_like(s)
    d[:, 0:3] = v
    d[:, 6] = thd
    if drive_model == "analytic_curvature":
        d[:, 3:6] = c.kappa * r * np.cos(c.omega * t) + c.a_bias - c.gamma * v
        d[:, 7] = -c.wl2 * np.sin(th) - c.gamma_lib * thd
        d[:, 6:8] *= c.lib
    else:
        acc = np.empty((s.shape[0], 3))
        torque = np.empty(s.shape[0])
        for k, trap in enumerate(c.traps):
            if trap is None:
                raise DomainError("full-field drive needs a TrapFieldModel")
            b, jac = _field_and_gradient(trap, r[k])
            cos_t = math.cos(float(c.omega[k, 0]) * t)
            m_hat = np.array([math.sin(th[k]), 0.0, math.cos(th[k])])
            acc[k] = c.mu[k] * (jac @ m_hat) * cos_t / c.mass[k]
            bx, bz = b[0] * cos_t, b[2] * cos_t + c.b0[k]
            torque[k] = c.mu[k] * (math.cos(th[k]) * bx - math.sin(th[k]) * bz)
        d[:, 3:6] = acc + c.a_bias - c.gamma * v
        d[:, 7] = torque / c.inertia - c.gamma_lib * thd
        d[:, 6:8] *= c.lib
    return d


def _rk4(s, t, dt, c, dm):
    k1 = equations_of_motion(s, t, c, dm)
    k2 = equations_of_motion(s + 0.5 * dt * k1, t + 0.5 * dt, c, dm)
    k3 = equations_of_motion(s + 0.5 * dt * k2, t + 0.5 * dt, c, dm)
    k4 = equations_of_motion(s + dt * k3, t + dt, c, dm)
    return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _semi_implicit(s, t, dt, c, dm):
    """Symplectic Euler: kick the velocities, then drift the coordinates."""
    out = s.copy()
    acc = equations_of_motion(s, t, c, dm)
    out[:, 3:6] += dt * acc[:, 3:6]
    out[:, 7] += dt * acc[:, 7]
    out[:, 0:3] += dt * out[:, 3:6]
    out[:, 6] += dt * out[:, 7]
    return out


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (n, 8)
    dt: float  # spacing of the recorded grid
    escaped: bool = False
    escape_step: int | None = None
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def column(self, name: str) -> np.ndarray:
        return self.states[:, COLUMNS.index(name)]

    @property
    def x(self):
        return self.column("x")

    @property
    def y(self):
        return self.column("y")

    @property
    def z(self):
        return self.column("z")

    @property
    def theta(self):
        return self.column("theta")

    @property
    def final_state(self) -> DynamicState:
        return DynamicState.from_vector(self.states[-1])

    def header(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "dt": self.dt, "columns": ["t", *COLUMNS],
                "n_rows": int(self.t.size), "escaped": self.escaped,
                "escape_step": self.escape_step, "metadata": self.metadata}

    def to_binary(self, path) -> None:
        """Magic, uint32 header length, JSON header, then column-major little-endian float64."""
        head = json.dumps(self.header(), sort_keys=True).encode()
        data = np.column_stack([self.t, self.states]).T.astype("<f8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(data.tobytes())

    @classmethod
    def from_binary(cls, path) -> "Trajectory":
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise ValueError(f"{path}: not a trajectory file")
            (n_head,) = struct.unpack("<I", fh.read(4))
            head = json.loads(fh.read(n_head))
            if head["schema_version"] != SCHEMA_VERSION:
                raise ValueError(f"unsupported schema version {head['schema_version']}")
            cols = len(head["columns"])
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(cols, head["n_rows"]).T
        return cls(data[:, 0].copy(), data[:, 1:].copy(), head["dt"], head["escaped"],
                   head["escape_step"], head.get("metadata", {}))

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.t, self.states]), delimiter=",",
                   header=",".join(["t_s", "x_m", "y_m", "z_m", "vx_m_s", "vy_m_s", "vz_m_s",
                                    "theta_rad", "theta_dot_rad_s"]), comments="", fmt="%.17g")


def thermal_initial_states(phys: Sequence[Physics], omega_secular, seed: int) -> list:
    """Draw positions and velocities from the thermal distribution of each secular mode."""
    out = []
    for i, ph in enumerate(phys):
        rng = member_rng(seed, i)
        kt = CONSTANTS.kB * ph.t_bath
        w = np.asarray(omega_secular, dtype=float)
        r = rng.standard_normal(3) * np.sqrt(kt / (ph.mass * w**2))
        v = rng.standard_normal(3) * math.sqrt(kt / ph.mass)
        th = thd = 0.0
        if ph.omega_lib > 0:
            th = rng.standard_normal() * math.sqrt(kt / (ph.inertia * ph.omega_lib**2))
            thd = rng.standard_normal() * math.sqrt(kt / ph.inertia)
        out.append(DynamicState(r, v, th, thd))
    return out


def max_stable_dt(phys: Physics, libration: bool = True) -> float:
    """Largest allowed step: 20 steps per period of the drive or of the libration."""
    fastest = max(phys.omega_trap, phys.omega_lib if libration else 0.0)
    return 2 * math.pi / (MIN_STEPS_PER_PERIOD * fastest)


def member_rng(seed: int, member: int) -> np.random.Generator:
    """Noise generator of ensemble member ``member``; equals SeedSequence(seed).spawn(n)[member]."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(member,)))


def integrate_ensemble(config: SimConfig, initial: Sequence[DynamicState],
                       physics: Sequence[Physics] | Physics, member_offset: int = 0) -> list:
    """Integrate independent trajectories in lock step.

    Each member has its own noise generator derived from ``config.seed`` and
    its global index ``member_offset + i``, so a member's trajectory does not
    depend on how an ensemble is split into batches.
    """
    n = len(initial)
    phys = [physics] * n if isinstance(physics, Physics) else list(physics)
    if len(phys) != n:
        raise DomainError("need one Physics per initial state")
    for ph in phys:
        if config.dt >= max_stable_dt(ph, config.include_libration):
            raise DomainError(f"dt must be below 2 pi / ({MIN_STEPS_PER_PERIOD} max(Omega, omega_lib))")
    c = _Coeffs(phys, config.include_damping, config.include_libration)
    step = _rk4 if config.scheme == "rk4" else _semi_implicit
    dt = config.dt
    n_steps = config.n_steps
    every = config.sample_every
    n_rec = n_steps // every + 1

    s = np.array([st.as_vector() for st in initial])
    rec = np.empty((n, n_rec, 8))
    rec[:, 0] = s
    alive = np.ones(n, dtype=bool)
    escape_step = [None] * n
    n_valid = np.full(n, n_rec)

    noisy = config.include_noise
    if noisy:
        rngs = [member_rng(config.seed, member_offset + i) for i in range(n)]
        kt = CONSTANTS.kB * c.t_bath
        sig_v = np.sqrt(2 * kt * c.gamma[:, 0] * dt / c.mass)[:, None]
        sig_w = c.lib * np.sqrt(2 * kt * c.gamma_lib * dt / c.inertia)
        chunk = None

    for k in range(1, n_steps + 1):
        t = (k - 1) * dt
        with np.errstate(over="ignore", invalid="ignore"):
            s_new = step(s, t, dt, c, config.drive_model)
        if noisy:
            j = (k - 1) % NOISE_CHUNK
            if j == 0:
                chunk = np.stack([g.standard_normal((NOISE_CHUNK, 4)) for g in rngs], axis=1)
            xi = chunk[j]
            s_new[:, 3:6] += sig_v * xi[:, 0:3]
            s_new[:, 7] += sig_w * xi[:, 3]
        s = np.where(alive[:, None], s_new, s)
        if not np.all(np.isfinite(s)):
            bad = int(np.nonzero(~np.all(np.isfinite(s), axis=1))[0][0])
            raise IntegrationError(f"non-finite state in member {bad} at step {k} (t = {k * dt:g} s)")
        with np.errstate(over="ignore"):
            radius = np.linalg.norm(s[:, 0:3], axis=1)
        out = alive & (radius > config.escape_radius)
        for m in np.nonzero(out)[0]:
            escape_step[m] = k
            n_valid[m] = k // every + 1
            rec[m, k // every] = s[m]
        alive &= ~out
        if k % every == 0:
            rec[alive, k // every] = s[alive]
        if not alive.any():
            break

    t_rec = np.arange(n_rec) * dt * every
    return [Trajectory(t_rec[:n_valid[m]].copy(), rec[m, :n_valid[m]].copy(), dt * every,
                       escape_step[m] is not None, escape_step[m],
                       {"seed": config.seed, "member": member_offset + m, "scheme": config.scheme})
            for m in range(n)]


def integrate(config: SimConfig, initial: DynamicState, physics: Physics) -> Trajectory:
    return integrate_ensemble(config, [initial], [physics])[0]


def _ensemble_job(args):
    return integrate_ensemble(*args)


def integrate_parallel(config: SimConfig, initial: Sequence[DynamicState],
                       physics: Sequence[Physics] | Physics, workers: int = 1) -> list:
    """integrate_ensemble split over ``workers`` processes; identical results for any worker count."""
    n = len(initial)
    phys = [physics] * n if isinstance(physics, Physics) else list(physics)
    if workers <= 1 or n < 2:
        return integrate_ensemble(config, initial, phys)
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    jobs = [(config, list(initial[a:b]), phys[a:b], int(a)) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
        parts = list(pool.map(_ensemble_job, jobs))
    return [t for part in parts for t in part]


def total_energy(traj: Trajectory, phys: Physics) -> np.ndarray:
    """Kinetic + libration + static bias energy; conserved without drive and damping."""
    v2 = np.sum(traj.states[:, 3:6] ** 2, axis=1)
    kin = 0.5 * phys.mass * v2 + 0.5 * phys.inertia * traj.column("theta_dot") ** 2
    lib = phys.inertia * phys.omega_lib**2 * (1 - np.cos(traj.theta))
    bias = -phys.mass * traj.states[:, 0:3] @ np.asarray(phys.a_bias)
    return kin + lib + bias


def synthetic_detector_trace(traj: Trajectory, weights=(1.0, 1.0, 1.0, 1.0), quadratic=0.0,
                             noise_floor: float = 0.0, seed: int = 0,
                             scale: float = 1e6) -> TimeSeries:
    """Scalar signal s = w . u + c . u^2 + noise with u = scale * (x, y, z) and theta.

    ``scale`` converts metres to micrometres so that linear and quadratic
    weights are of similar order.
    """
    w = np.broadcast_to(np.asarray(weights, dtype=float), (4,))
    cq = np.broadcast_to(np.asarray(quadratic, dtype=float), (4,))
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(cq))):
        raise DomainError("weights must be finite")
    u = np.column_stack([traj.states[:, 0:3] * scale, traj.theta])
    sig = u @ w + (u**2) @ cq
    if noise_floor > 0:
        sig = sig + noise_floor * np.random.default_rng(seed).standard_normal(sig.size)
    return TimeSeries(sig, 1.0 / traj.dt, {"source": "synthetic", "seed": seed})


def secular_frequency_measure(traj: Trajectory, omega_trap: float, min_samples: int = 2**14,
                              snr: float = 10.0) -> dict:
    """Dominant PSD frequency (Hz) of x, y, z below Omega / 2; NaN where no peak stands out."""
    if len(traj) < min_samples:
        raise DomainError(f"need at least {min_samples} samples, got {len(traj)}")
    fs = 1.0 / traj.dt
    f_max = omega_trap / (4 * math.pi)
    out = {}
    for axis in ("x", "y", "z"):
        sig = traj.column(axis)
        if not np.any(sig):
            out[axis] = math.nan
            continue
        spec = psd_welch(TimeSeries(sig - sig.mean(), fs), segment_length=len(sig))
        m = (spec.freq > 0) & (spec.freq < f_max)
        psd = spec.psd[m]
        if psd.size < 3 or psd.max() < snr * np.median(psd):
            out[axis] = math.nan
            continue
        out[axis] = peak_frequency(spec.freq[m], psd)
    return out

