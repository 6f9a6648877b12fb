"""Command-line entry point: ``maglev <subcommand> [options]``.

All outputs are plot-ready CSV or JSON files in ``--out``; a JSON summary
goes to stdout. Exit codes: 0 ok, 1 failed ``--check``, 2 unstable sweep
point, 3 configuration or input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, dissipation, dynamics, recipes, thermo, trapmodel
from .config import ConfigError, RunConfig, default_config, load_config
from .core import MBAR, DomainError

EXIT_CHECK_FAILED = 1
EXIT_UNSTABLE = 2
EXIT_INPUT = 3


def num_threads() -> int:
    """Worker cap from MAGLEV_NUM_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("MAGLEV_NUM_THREADS", "1")))
    except ValueError:
        return 1


# -- output helpers ---------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(cols: dict, out_dir: Path, name: str, fmt: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{name}.json"
        path.write_text(dump_json(cols))
        return path
    path = out_dir / f"{name}.csv"
    keys = list(cols)
    n = len(np.asarray(cols[keys[0]]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for i in range(n):
            w.writerow([_fmt(np.asarray(cols[k])[i]) for k in keys])
    return path


def write_matrix(mat: tuple, out_dir: Path, name: str, fmt: str) -> Path:
    row_name, rows, col_name, cols, values = mat
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{name}.json"
        path.write_text(dump_json({row_name: rows, col_name: cols, "values": values}))
        return path
    path = out_dir / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{row_name}\\{col_name}"] + [_fmt(c) for c in cols])
        for r, row in zip(rows, values):
            w.writerow([_fmt(r)] + [_fmt(v) for v in row])
    return path


def emit(summary: dict, out_dir: Path, name: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = dump_json(summary)
    (out_dir / f"{name}_summary.json").write_text(text)
    sys.stdout.write(text)


# -- input helpers ----------------------------------------------------------

def load_series(path: str, column: str | None = None, fs: float | None = None) -> analysis.TimeSeries:
    """Read a time series from a binary trajectory or a CSV with a header row.

    CSV: a first column named ``t_s``/``t``/``time`` fixes the sample rate;
    otherwise ``fs`` is required.
    """
    p = Path(path)
    with open(p, "rb") as fh:
        magic = fh.read(len(dynamics.MAGIC))
    if magic == dynamics.MAGIC:
        traj = dynamics.Trajectory.from_binary(p)
        return analysis.TimeSeries(traj.column(column or "x"), 1.0 / traj.dt, {"source": str(p)})
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    names = [h.strip() for h in header]
    if column is None:
        idx = 1 if names[0] in ("t_s", "t", "time") and len(names) > 1 else 0
    else:
        matches = [i for i, n in enumerate(names) if n == column or n.split("_")[0] == column]
        if not matches:
            raise ConfigError(f"{path}: no column {column!r} in {names}")
        idx = matches[0]
    if fs is None:
        if names[0] not in ("t_s", "t", "time"):
            raise ConfigError(f"{path}: no time column; pass --fs")
        fs = 1.0 / float(np.mean(np.diff(data[:, 0])))
    return analysis.TimeSeries(data[:, idx], fs, {"source": str(p)})


def load_spectrum(path: str) -> analysis.Spectrum:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    f, psd = data[:, 0], data[:, 1]
    return analysis.Spectrum(f, psd, float(f[1] - f[0]), "file")


def _spectrum_or_psd(args) -> analysis.Spectrum:
    with open(args.input, "rb") as fh:
        head = fh.read(7)
    if head == b"freq_Hz":
        return load_spectrum(args.input)
    ts = load_series(args.input, args.column, args.fs)
    return analysis.psd_welch(ts, args.segment, args.overlap)


def _config(args) -> tuple[RunConfig, Path | None]:
    if args.config:
        cfg, base = load_config(args.config)
    else:
        cfg, base = default_config(), None
    update = {}
    if args.out:
        update["out_dir"] = args.out
    if args.format:
        update["format"] = args.format
    if args.seed is not None:
        update["seed"] = args.seed
    if update:
        cfg = cfg.model_copy(update=update)
    return cfg, base


# -- subcommands ------------------------------------------------------------

def cmd_modes(args, cfg: RunConfig, base) -> int:
    setup = cfg.trap_setup(base)
    sp = setup.stability()
    out = Path(cfg.out_dir)
    summary = {"q": sp.q, "regime": sp.regime, "margin": sp.margin}
    if sp.regime == "unstable":
        emit(summary, out, "modes")
        return EXIT_UNSTABLE
    modes = setup.modes()
    summary.update({"omega_rad_s": {"x": modes.omega_x, "y": modes.omega_y, "z": modes.omega_z,
                                    "lib": modes.omega_lib},
                    "f_Hz": modes.frequencies_hz(), "angular_stable": modes.angular_stable,
                    "b0_T": setup.b0()})
    lines = trapmodel.micromotion_lines(modes, args.n_max, args.m_max)
    write_table({"freq_Hz": [l.freq_hz for l in lines], "mode": [l.mode for l in lines],
                 "m": [l.m for l in lines], "n": [l.n for l in lines],
                 "sign": [l.sign for l in lines], "rank": [l.rank for l in lines]},
                out, "micromotion_lines", cfg.format)
    emit(summary, out, "modes")
    return 0


def cmd_sweep(args, cfg: RunConfig, base) -> int:
    grid = np.linspace(args.start, args.stop, args.num)
    if args.parameter == "omega_trap":
        grid = 2 * math.pi * grid
    res = trapmodel.sweep_modes(args.parameter, grid, cfg.trap_setup(base))
    out = Path(cfg.out_dir)
    write_table(res.columns(), out, f"sweep_{args.parameter}", cfg.format)
    emit({"parameter": args.parameter, "exponents": res.exponents,
          "unstable_points": res.regime.count("unstable")}, out, f"sweep_{args.parameter}")
    return EXIT_UNSTABLE if res.any_unstable else 0


def cmd_simulate(args, cfg: RunConfig, base) -> int:
    sim = cfg.simulation
    setup = cfg.trap_setup(base)
    gas = cfg.gas.to_gas() if (sim.include_damping or sim.include_noise) else None
    phys = dynamics.Physics.from_setup(setup, gas, a_bias=sim.bias_offset_m_s2)
    fastest = max(setup.omega_trap, phys.omega_lib if sim.include_libration else 0.0)
    dt = 2 * math.pi / (sim.steps_per_period * fastest)
    sc = dynamics.SimConfig(dt=dt, duration=sim.duration_s, scheme=sim.scheme,
                            include_noise=sim.include_noise, include_damping=sim.include_damping,
                            seed=cfg.seed, drive_model=sim.drive_model, sample_every=sim.sample_every,
                            include_libration=sim.include_libration)
    init = dynamics.DynamicState(np.array(sim.x0_um) * 1e-6, np.zeros(3), sim.theta0_rad, 0.0)
    members = max(args.members, 1)
    trajs = dynamics.integrate_parallel(sc, [init] * members, phys, num_threads())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"dt_s": dt, "steps": sc.n_steps, "members": members, "escaped": [t.escaped for t in trajs]}
    for k, t in enumerate(trajs):
        stem = "trajectory" if members == 1 else f"trajectory_{k:03d}"
        t.to_binary(out / f"{stem}.mgtraj")
        if cfg.format == "csv":
            t.to_csv(out / f"{stem}.csv")
    if len(trajs[0]) >= 2**14:
        summary["secular_f_Hz"] = dynamics.secular_frequency_measure(trajs[0], setup.omega_trap)
    emit(summary, out, "simulate")
    return 0


def cmd_thermo(args, cfg: RunConfig, base) -> int:
    out = Path(cfg.out_dir)
    p = cfg.particle.to_particle()
    gas = cfg.gas.to_gas()
    opt = cfg.optical_params()
    if args.action == "steady-state":
        st = thermo.steady_state_temperature(opt, gas, p)
        modes, _ = thermo.shifted_modes(opt, gas, p, cfg.trap_setup(base))
        emit({"T_K": st.temperature, "bsat_T": st.bsat, "P_abs_W": st.p_abs, "P_rad_W": st.p_rad,
              "P_cond_W": st.p_cond, "f_Hz": modes.frequencies_hz()}, out, "thermo_steady_state")
        return 0
    if args.action == "map":
        res = recipes.fig3c(cfg)
        for name, mat in res.matrices.items():
            write_matrix(mat, out, name, cfg.format)
        emit({**res.summary, "checks": res.checks}, out, "thermo_map")
        return 0
    data = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
    setup = cfg.trap_setup(base)
    if args.kind == "translational":
        axis = "xyz".index(args.axis)
        extra = {"bpp": float(setup.scaled_curvatures().magnitudes()[axis]),
                 "omega_trap": setup.omega_trap}
    else:
        extra = {"b0": setup.b0()}
    fit = thermo.fit_thermo_model(data[:, 0], data[:, 1], args.kind, gas, p, opt.waist,
                                  fit_waist=args.fit_waist, **extra)
    emit({"alpha": fit.alpha, "sigma_alpha": fit.sigma_alpha, "bsat0_T": fit.bsat0,
          "sigma_bsat0_T": fit.sigma_bsat0, "residual_norm_rad_s": fit.residual_norm,
          "waist_m": fit.waist, "note": fit.note}, out, "thermo_fit")
    return 0


def parse_pressure_grid(text: str) -> np.ndarray:
    """'lo,hi,n' in mbar, log-spaced."""
    try:
        lo, hi, n = text.split(",")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise DomainError(f"pressure grid must be 'lo,hi,n' in mbar, got {text!r}") from None
    if not (0 < lo < hi and n >= 2):
        raise DomainError("pressure grid needs 0 < lo < hi and n >= 2")
    return np.logspace(math.log10(lo), math.log10(hi), n)


def cmd_qfactor(args, cfg: RunConfig, base) -> int:
    setup = cfg.trap_setup(base)
    p = setup.particle
    modes = setup.modes()
    gas = cfg.gas.to_gas()
    grid = parse_pressure_grid(args.pressure_grid)
    curve = dissipation.q_vs_pressure_curve(p, modes.omega_x, modes.omega_lib, grid * MBAR, gas)
    out = Path(cfg.out_dir)
    write_table({k: curve[k] for k in ("pressure_mbar", "Q_translational", "Q_librational",
                                       "kn", "valid_lib")}, out, "q_vs_pressure", cfg.format)
    hi_kn = curve["kn"] > 10
    slope = trapmodel.power_law_exponent(curve["pressure_mbar"][hi_kn],
                                         curve["Q_translational"][hi_kn])
    bpp = float(setup.scaled_curvatures().magnitudes()[0])
    eddy = dissipation.eddy_loss_conventions(p, setup.omega_trap / (2 * math.pi), bpp)
    rep = dissipation.damping_report(p, gas)
    checks = recipes.fig4b(cfg).checks
    emit({"slope_kn_gt_10": slope, "eddy_loss_W": eddy, "kn": rep.kn,
          "mean_free_path_m": rep.mean_free_path, "gamma_com_rad_s": rep.gamma_com,
          "checks": checks}, out, "qfactor")
    if args.check and not all(checks.values()):
        return EXIT_CHECK_FAILED
    return 0


def cmd_spin(args, cfg: RunConfig, base) -> int:
    res = recipes.fig5b(cfg) if args.action == "map-b0" else recipes.fig5c(cfg)
    out = Path(cfg.out_dir)
    for name, cols in res.tables.items():
        write_table(cols, out, name, cfg.format)
    for name, mat in res.matrices.items():
        write_matrix(mat, out, name, cfg.format)
    emit({**res.summary, "checks": res.checks}, out, f"spin_{args.action}")
    return 0


def cmd_analyze(args, cfg: RunConfig, base) -> int:
    out = Path(cfg.out_dir)
    if args.action == "psd":
        ts = load_series(args.input, args.column, args.fs)
        spec = analysis.psd_welch(ts, args.segment, args.overlap, args.window)
        write_table({"freq_Hz": spec.freq, "psd": spec.psd}, out, "psd", cfg.format)
        emit({"resolution_Hz": spec.resolution, "window": spec.window,
              "integrated_power": spec.integrate()}, out, "psd")
    elif args.action == "fit-lorentzian":
        spec = _spectrum_or_psd(args)
        fit = analysis.lorentzian_fit(spec, (args.f_lo, args.f_hi), relative=args.relative)
        emit(fit.to_dict(), out, "lorentzian")
    elif args.action == "ringdown":
        ts = load_series(args.input, args.column, args.fs)
        fit = analysis.ringdown_analysis(ts, args.peak, args.cal, args.peak_band, args.cal_band,
                                         args.bins)
        write_table({"t_s": fit.bin_times, "ratio": fit.bin_ratio}, out, "ringdown_bins", cfg.format)
        emit(fit.to_dict(), out, "ringdown")
    elif args.action == "spectrogram":
        ts = load_series(args.input, args.column, args.fs)
        band = (args.f_lo, args.f_hi) if args.f_lo is not None else None
        res = analysis.spectrogram_jitter(ts, args.segments, args.seconds, band)
        write_table({"t_s": res.segment_times, "peak_Hz": res.peak_freqs}, out, "peak_frequencies",
                    cfg.format)
        write_matrix(("t_s", res.segment_times, "freq_Hz", res.freq, res.spectrogram), out,
                     "spectrogram", cfg.format)
        emit({"jitter_std_Hz": res.std, "histogram_counts": res.histogram[0],
              "histogram_edges_Hz": res.histogram[1]}, out, "spectrogram")
    else:
        spec = _spectrum_or_psd(args)
        modes = cfg.trap_setup(base).modes()
        lines = trapmodel.micromotion_lines(modes)
        m = analysis.identify_lines(spec, lines, args.tolerance, args.k_mad)
        emit({"matches": [{"predicted_Hz": l.freq_hz, "mode": l.mode, "m": l.m, "n": l.n,
                           "peak_Hz": f, "delta_Hz": d} for l, f, d in m.matches],
              "unmatched_peaks_Hz": m.unmatched_peaks, "threshold": m.threshold}, out, "identify")
    return 0


def cmd_run(args, cfg: RunConfig, base) -> int:
    res = recipes.run_recipe(args.recipe, cfg)
    out = Path(cfg.out_dir)
    for name, cols in res.tables.items():
        write_table(cols, out, f"{args.recipe}_{name}", cfg.format)
    for name, mat in res.matrices.items():
        write_matrix(mat, out, f"{args.recipe}_{name}", cfg.format)
    emit({"recipe": args.recipe, "description": recipes.DESCRIPTIONS[args.recipe],
          **res.summary, "checks": res.checks, "passed": res.passed}, out, args.recipe)
    if args.check and not res.passed:
        return EXIT_CHECK_FAILED
    return 0


def validate_config(cfg: RunConfig, base=None) -> dict:
    """Physics sanity report for a parsed configuration."""
    setup = cfg.trap_setup(base)
    sp = setup.stability()
    report = {"schema": "ok", "q": sp.q, "regime": sp.regime, "warnings": []}
    if sp.regime == "unstable":
        report["warnings"].append("trap is unstable (q >= 0.908)")
    else:
        modes = setup.modes()
        report["angular_stable"] = modes.angular_stable
        if not modes.angular_stable:
            report["warnings"].append("omega_lib is not well above the translational modes")
    rep = dissipation.damping_report(setup.particle, cfg.gas.to_gas())
    report["kn"] = rep.kn
    report["gamma_lib_valid"] = rep.lib_valid
    if not rep.lib_valid:
        report["warnings"].append("Kn <= 100: the librational damping model is outside its range")
    report["optical_section"] = cfg.optical is not None
    return report


def cmd_validate(args, cfg: RunConfig, base) -> int:
    report = validate_config(cfg, base)
    sys.stdout.write(dump_json(report))
    if args.check and report["warnings"]:
        return EXIT_CHECK_FAILED
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (default: bundled)")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--format", choices=("csv", "json"), help="table format")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--check", action="store_true", help="nonzero exit on failed checks")

    ap = argparse.ArgumentParser(prog="maglev", description="Magnetic Paul trap toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("modes", parents=[common], help="eigenfrequencies and micromotion lines")
    p.add_argument("--n-max", type=int, default=2)
    p.add_argument("--m-max", type=int, default=2)
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("sweep", parents=[common], help="modes over one operating parameter")
    p.add_argument("parameter", choices=sorted(trapmodel.SWEEP_PARAMETERS))
    p.add_argument("--start", type=float, required=True, help="A, or Hz for omega_trap")
    p.add_argument("--stop", type=float, required=True)
    p.add_argument("--num", type=int, default=21)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common], help="integrate the equations of motion")
    p.add_argument("--members", type=int, default=1, help="independent noise realisations")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("thermo", parents=[common], help="laser heating")
    p.add_argument("action", choices=("steady-state", "map", "fit"))
    p.add_argument("--data", help="CSV with columns P_laser_W, omega_rad_s (fit)")
    p.add_argument("--kind", choices=("translational", "librational"), default="translational")
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--fit-waist", action="store_true")
    p.set_defaults(func=cmd_thermo)

    p = sub.add_parser("qfactor", parents=[common], help="Q versus gas pressure and eddy loss")
    p.add_argument("--pressure-grid", default="1e-3,1e3,61", help="lo,hi,n in mbar (log-spaced)")
    p.set_defaults(func=cmd_qfactor)

    p = sub.add_parser("spin", parents=[common], help="spin-mechanical coupling maps")
    p.add_argument("action", choices=("map-b0", "map-ad"))
    p.set_defaults(func=cmd_spin)

    p = sub.add_parser("analyze", parents=[common], help="detector-signal analysis")
    p.add_argument("action", choices=("psd", "fit-lorentzian", "ringdown", "spectrogram", "identify"))
    p.add_argument("input", help="CSV or binary trajectory")
    p.add_argument("--column")
    p.add_argument("--fs", type=float, help="sample rate (Hz) for CSV without a time column")
    p.add_argument("--segment", type=int)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--window", default="hann")
    p.add_argument("--f-lo", type=float)
    p.add_argument("--f-hi", type=float)
    p.add_argument("--relative", action="store_true", help="relative residual weighting")
    p.add_argument("--peak", type=float, help="ringdown mode frequency (Hz)")
    p.add_argument("--cal", type=float, help="calibration tone frequency (Hz)")
    p.add_argument("--peak-band", type=float, default=3.0)
    p.add_argument("--cal-band", type=float, default=0.6)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--segments", type=int, default=100)
    p.add_argument("--seconds", type=float, default=6.0)
    p.add_argument("--tolerance", type=float, default=2.0)
    p.add_argument("--k-mad", type=float, default=6.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", parents=[common], help="figure data pipelines")
    p.add_argument("recipe", choices=recipes.RECIPES)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", parents=[common], help="check a configuration without running")
    p.add_argument("path", nargs="?", help="configuration file (or use --config)")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate" and args.path:
        args.config = args.path
    try:
        cfg, base = _config(args)
        return args.func(args, cfg, base)
    except (ConfigError, DomainError, analysis.AnalysisError, FileNotFoundError) as exc:
        sys.stderr.write(f"maglev: error: {exc}\n")
        return EXIT_INPUT
    except (thermo.FitError, analysis.FitError, trapmodel.StabilityError) as exc:
        sys.stderr.write(f"maglev: error: {exc}\n")
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
