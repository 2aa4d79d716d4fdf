"""Command-line front end.

Subcommands: run, fit, spectrum, calibrate-noise, titrate, sensitivity,
reproduce.  Flag values carry unit suffixes parsed by the same lexer as
the sequence language (78mT, 16ns, 2s).  Exit codes: 0 success, 2 bad
usage or configuration, 3 runtime failure; diagnostics go to stderr.
The environment variable SPINFORGE_SEED overrides any configured seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, chemsense, engine, protocols
from . import reproduce as repro
from . import sequences, svg, units
from .pulseq import CompileError, ParseError, compile_schedule, parse_one
from .readout import ReadoutModel
from .reproduce import write_atomic

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


def _seed(args) -> int:
    env = os.environ.get("SPINFORGE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SPINFORGE_SEED must be an integer, got {env!r}")
    return args.seed


def _unit_arg(dimension):
    def parse(text):
        try:
            return units.parse_quantity(text, dimension)
        except units.UnitError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _read_csv_columns(path: str) -> dict:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ConfigError(f"{path}: empty or headerless CSV")
    header = [h.strip() for h in lines[0].split(",")]
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ConfigError(f"{path}: malformed CSV row {ln!r}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ConfigError(f"{path}: non-numeric CSV row {ln!r}") from None
    data = np.asarray(rows)
    return {name: data[:, i] for i, name in enumerate(header)}


def _require_xy(cols: dict, path: str):
    if "x" not in cols or "y" not in cols:
        raise ConfigError(f"{path}: CSV must have columns x and y")
    return cols["x"], cols["y"]


def _emit_sweep(result, outdir: str, name: str, want_svg: bool,
                x_log=False) -> None:
    out = Path(outdir)
    write_atomic(out / f"{name}.csv", result.to_csv())
    write_atomic(out / f"{name}.json", result.metadata_json() + "\n")
    if want_svg:
        plot = svg.LinePlot(title=name,
                            x_label=f"{result.axis_name} ({result.axis_unit})",
                            y_label="contrast", x_log=x_log)
        plot.add(result.x, result.y)
        write_atomic(out / f"{name}.svg", svg.render(plot))


def _noise_from_args(args) -> engine.NoiseModel:
    if args.noise_delta is not None and args.noise_tau is not None:
        return engine.NoiseModel(args.noise_delta, args.noise_tau)
    cal = engine.calibrate_noise(args.calib_t2, args.calib_s)
    return cal.noise


# --- subcommand handlers ----------------------------------------------------

def cmd_run(args) -> int:
    seed = _seed(args)
    proto = args.protocol
    if proto == "odmr":
        cfg = protocols.OdmrConfig(
            b0=args.b0, f_start=args.f_start, f_stop=args.f_stop,
            points=args.points, amplitude=args.amplitude, hwhm=args.hwhm,
            f0_override=args.f0,
            averages=args.averages or 100_000, sweeps=args.sweeps or 26)
        compile_schedule(parse_one(sequences.odmr_source()),
                         event_cap=args.event_cap)
        result = protocols.run_odmr(cfg, seed=seed)
        _emit_sweep(result, args.out, "odmr", args.svg)
    elif proto == "rabi":
        cfg = protocols.RabiConfig(
            power_w=args.power, rabi_slope=args.rabi_slope,
            t_max=args.t_max, dt=args.dt, spin_model=args.spin_model,
            averages=args.averages or 410_000, sweeps=args.sweeps or 1)
        compile_schedule(parse_one(sequences.rabi_source()),
                         {"t": cfg.t_max}, event_cap=args.event_cap)
        result = protocols.run_rabi(cfg, seed=seed)
        _emit_sweep(result, args.out, "rabi", args.svg)
    elif proto == "t1":
        cfg = protocols.T1Config(
            t_min=args.t_min, t_max=args.t_max_t1, points=args.points,
            t1=args.t1, stretch=args.stretch,
            averages=args.averages or 10_000, sweeps=args.sweeps or 50)
        result = protocols.run_t1(cfg, seed=seed)
        _emit_sweep(result, args.out, "t1", args.svg, x_log=True)
    elif proto in ("cpmg", "hahn"):
        n = 1 if proto == "hahn" else args.n
        noise = _noise_from_args(args)
        # compile the pulse program once to validate timing and the cap
        t2_est = engine.t2_time(n, noise)
        sequences.compile_cpmg(n, t2_est / (2 * n), event_cap=args.event_cap)
        cfg = protocols.CpmgConfig(
            n_pulses=n, noise=noise, backend=args.backend,
            trajectories=args.trajectories, points=args.points,
            averages=args.averages or 10_000, sweeps=args.sweeps or 100)
        result = protocols.run_cpmg(cfg, seed=seed)
        _emit_sweep(result, args.out, f"cpmg_n{n}", args.svg, x_log=True)
    elif proto == "spinlock":
        noise = _noise_from_args(args)
        cfg = protocols.SpinlockConfig(
            f_spinlock=args.f_sl, t1=args.t1, noise=noise,
            averages=args.averages or 100_000, sweeps=args.sweeps or 1)
        compile_schedule(parse_one(sequences.spinlock_source()),
                         {"t_lock": cfg.t_max}, event_cap=args.event_cap)
        result = protocols.run_spinlock(cfg, seed=seed)
        _emit_sweep(result, args.out, "spinlock", args.svg, x_log=True)
    elif proto == "casr":
        cfg = protocols.CasrConfig(
            nu_rf=args.nu_rf, nu_base=args.nu_base, b_rf=args.b_rf,
            t_s=args.duration, averages=args.averages or 1000)
        compile_schedule(parse_one(sequences.casr_source()),
                         event_cap=args.event_cap)
        result = protocols.run_casr(cfg, seed=seed)
        _emit_sweep(result, args.out, "casr", args.svg)
    else:
        raise ConfigError(f"unknown protocol {proto!r}")
    print(f"wrote {proto} artifacts to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cols = _read_csv_columns(args.input)
    x, y = _require_xy(cols, args.input)
    fixed = {}
    for item in args.fix or []:
        name, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"--fix expects name=value, got {item!r}")
        fixed[name] = float(value)
    sigma = cols.get("y_err") if args.weighted else None
    try:
        result = analysis.fit(args.model, x, y, fixed=fixed, sigma=sigma)
    except analysis.FitError as exc:
        raise ConfigError(str(exc)) from None
    text = result.to_json()
    print(text)
    if args.out:
        write_atomic(Path(args.out), text + "\n")
    if not result.converged:
        print(f"fit did not converge: {result.message}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cols = _read_csv_columns(args.input)
    x, y = _require_xy(cols, args.input)
    try:
        spec = analysis.spectrum_from_times(x, y - float(np.mean(y)),
                                            window=args.window,
                                            zero_pad=args.zero_pad)
    except analysis.SpectrumError as exc:
        raise ConfigError(str(exc)) from None
    out = {"bin_width_hz": spec.bin_width, "window": spec.window,
           "zero_pad": spec.zero_pad}
    try:
        peak, fwhm = analysis.peak_fwhm(spec, f_min=args.f_min)
        out.update({"peak_hz": peak, "fwhm_hz": fwhm})
    except analysis.SpectrumError as exc:
        print(f"peak search: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if args.out:
            text = "x,y\n" + "".join(
                f"{f!r},{m!r}\n"
                for f, m in zip(spec.frequencies, spec.magnitude))
            write_atomic(Path(args.out), text)
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_calibrate_noise(args) -> int:
    n_list = tuple(int(v) for v in args.n_list.split(",")) \
        if args.n_list else engine.TABLE_N
    try:
        cal = engine.calibrate_noise(args.t2, args.s, n_list=n_list)
    except engine.CalibrationError as exc:
        raise ConfigError(str(exc)) from None
    out = {
        "delta_rad_per_s": cal.noise.delta,
        "tau_c_s": cal.noise.tau_c,
        "achieved_a_s": cal.achieved_a,
        "achieved_s": cal.achieved_s,
        "feasible": cal.feasible,
        "target_t2_s": cal.target_t2,
        "target_s": cal.target_s,
        "t2_times_s": list(cal.t2_times),
        "n_list": list(cal.n_list),
    }
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        write_atomic(Path(args.out), text + "\n")
    if not cal.feasible:
        print(f"targets not reachable: closest achievable exponent is "
              f"{cal.achieved_s:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_titrate(args) -> int:
    seed = _seed(args)
    concs = tuple(units.parse_concentration(v)
                  for v in args.concentrations.split(",")) \
        if args.concentrations else tuple(chemsense.default_concentration_grid())
    cfg = protocols.TitrationConfig(concentrations=concs)
    points = protocols.run_titration(cfg, seed=seed)
    out = Path(args.out)
    write_atomic(out / "titration_model.csv",
                 chemsense.titration_table(concs, cfg.model))
    write_atomic(out / "titration_model.json",
                 chemsense.model_json(cfg.model) + "\n")
    concs_arr, amps = protocols.titration_amplitudes(points)
    write_atomic(out / "titration.csv", "x,y\n" + "".join(
        f"{c!r},{a!r}\n" for c, a in zip(concs_arr, amps)))
    fit = protocols.fit_titration(points)
    write_atomic(out / "fit.json", fit.to_json() + "\n")
    print(fit.to_json())
    if not fit.converged:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    seed = _seed(args)
    b_values = [units.parse_field(v) for v in args.b_list.split(",")]
    cfg = protocols.CasrConfig(nu_rf=args.nu_rf, nu_base=args.nu_base,
                               t_s=args.duration,
                               averages=args.averages or 1000)
    model = ReadoutModel(photons_per_readout=args.r0, contrast=args.contrast)
    try:
        result = protocols.run_sensitivity(b_values, cfg, model, seed=seed)
    except (analysis.FitError, analysis.SpectrumError) as exc:
        print(f"sensitivity estimate failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = {
        "eta_t_per_sqrt_hz": result.eta_t_per_sqrt_hz,
        "slope_per_tesla": result.slope_per_tesla,
        "noise_floor": result.noise_floor,
        "b_values_t": list(result.b_values),
        "peak_amplitudes": list(result.peak_amplitudes),
        "linearity_warning": result.linearity_warning,
    }
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        write_atomic(Path(args.out), text + "\n")
    if result.linearity_warning:
        print("warning: quadratic response exceeds 10% of linear; "
              "reduce the drive amplitudes", file=sys.stderr)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    seed = _seed(args)
    if args.figure not in repro.FIGURE_IDS:
        raise ConfigError(f"unknown figure id {args.figure!r}; "
                          f"have {', '.join(repro.FIGURE_IDS)}")
    report = repro.run_bundle(args.figure, args.out, seed=seed,
                              workers=args.workers)
    print((Path(args.out) / "report.txt").read_text(), end="")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spinforge",
        description="Simulate and analyze spin-pair defect sensing "
                    "experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a measurement protocol")
    run.add_argument("--protocol", required=True,
                     choices=["odmr", "rabi", "t1", "hahn", "cpmg",
                              "spinlock", "casr"])
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=1,
                     help="RNG seed (recorded in metadata)")
    run.add_argument("--averages", type=int, default=None,
                     help="readout averages per point")
    run.add_argument("--sweeps", type=int, default=None,
                     help="full-sweep repetitions")
    run.add_argument("--svg", action="store_true", help="emit an SVG plot")
    run.add_argument("--event-cap", type=int, default=10_000_000,
                     help="compiled-schedule event limit")
    run.add_argument("--b0", type=_unit_arg("field"), default=78e-3,
                     help="bias field, e.g. 78mT")
    run.add_argument("--f-start", type=_unit_arg("frequency"), default=2.0e9,
                     help="sweep start, e.g. 2.0GHz")
    run.add_argument("--f-stop", type=_unit_arg("frequency"), default=2.4e9,
                     help="sweep stop, e.g. 2.4GHz")
    run.add_argument("--f0", type=_unit_arg("frequency"), default=None,
                     help="resonance override, e.g. 2.19GHz")
    run.add_argument("--points", type=int, default=401,
                     help="sweep points")
    run.add_argument("--amplitude", type=float, default=5.83e-4,
                     help="peak contrast (fraction)")
    run.add_argument("--hwhm", type=_unit_arg("frequency"), default=12.9e6,
                     help="line half width, e.g. 12.9MHz")
    run.add_argument("--power", type=_unit_arg("power"), default=30.0,
                     help="MW power, e.g. 30W")
    run.add_argument("--rabi-slope", type=float, default=9.2e6,
                     help="nutation slope in Hz per sqrt(W)")
    run.add_argument("--t-max", type=_unit_arg("time"), default=200e-9,
                     help="nutation sweep end, e.g. 200ns")
    run.add_argument("--dt", type=_unit_arg("time"), default=1e-9,
                     help="nutation sweep step, e.g. 1ns")
    run.add_argument("--spin-model", choices=["single", "pair"],
                     default="pair")
    run.add_argument("--t-min", type=_unit_arg("time"), default=2e-6,
                     help="relaxation sweep start, e.g. 2us")
    run.add_argument("--t-max-t1", type=_unit_arg("time"), default=180e-6,
                     help="relaxation sweep end, e.g. 180us")
    run.add_argument("--t1", type=_unit_arg("time"), default=25.87e-6,
                     help="relaxation time, e.g. 25.87us")
    run.add_argument("--stretch", type=float, default=0.665,
                     help="stretched-exponential exponent")
    run.add_argument("--n", type=int, default=8,
                     help="number of pi pulses (cpmg)")
    run.add_argument("--backend", choices=["analytic", "mc"],
                     default="analytic")
    run.add_argument("--trajectories", type=int, default=10_000,
                     help="Monte Carlo trajectories")
    run.add_argument("--noise-delta", type=float, default=None,
                     help="bath rms amplitude in rad/s")
    run.add_argument("--noise-tau", type=_unit_arg("time"), default=None,
                     help="bath correlation time, e.g. 1us")
    run.add_argument("--calib-t2", type=_unit_arg("time"), default=45e-9,
                     help="calibration target T2(1), e.g. 45ns")
    run.add_argument("--calib-s", type=float, default=0.79,
                     help="calibration target exponent")
    run.add_argument("--f-sl", type=_unit_arg("frequency"), default=300e6,
                     help="spin-lock frequency, e.g. 300MHz")
    run.add_argument("--nu-rf", type=_unit_arg("frequency"), default=15.626e6,
                     help="applied RF frequency, e.g. 15.626MHz")
    run.add_argument("--nu-base", type=_unit_arg("frequency"),
                     default=15.625e6,
                     help="sequence-tuned frequency, e.g. 15.625MHz")
    run.add_argument("--b-rf", type=_unit_arg("field"), default=3e-6,
                     help="RF amplitude, e.g. 3uT")
    run.add_argument("--duration", type=_unit_arg("time"), default=2.0,
                     help="total sampling time, e.g. 2s")
    run.set_defaults(handler=cmd_run)

    fit_p = sub.add_parser("fit", help="fit a model to CSV data")
    fit_p.add_argument("--model", required=True,
                       choices=sorted(analysis.MODEL_ZOO))
    fit_p.add_argument("--input", required=True, help="CSV with columns x,y")
    fit_p.add_argument("--fix", action="append",
                       help="freeze a parameter, e.g. --fix stretch=2.40")
    fit_p.add_argument("--weighted", action="store_true",
                       help="weight by the y_err column when present")
    fit_p.add_argument("--out", help="write the fit JSON here as well")
    fit_p.set_defaults(handler=cmd_fit)

    sp = sub.add_parser("spectrum", help="magnitude spectrum of a CSV series")
    sp.add_argument("--input", required=True, help="CSV with columns x,y")
    sp.add_argument("--window", choices=["rect", "hann"], default="rect")
    sp.add_argument("--zero-pad", type=int, default=4)
    sp.add_argument("--f-min", type=float, default=0.0,
                    help="ignore bins below this frequency in Hz")
    sp.add_argument("--out", help="write spectrum CSV here")
    sp.set_defaults(handler=cmd_spectrum)

    cal = sub.add_parser("calibrate-noise",
                         help="fit a bath model to coherence-time targets")
    cal.add_argument("--t2", type=_unit_arg("time"), required=True,
                     help="target T2 for one pi pulse, e.g. 45ns")
    cal.add_argument("--s", type=float, required=True,
                     help="target power-law exponent")
    cal.add_argument("--n-list", default=None,
                     help="comma-separated pulse numbers")
    cal.add_argument("--out", help="write calibration JSON here")
    cal.set_defaults(handler=cmd_calibrate_noise)

    ti = sub.add_parser("titrate", help="synthetic ion titration")
    ti.add_argument("--concentrations", default=None,
                    help="comma-separated, e.g. 1uM,10uM,1mM")
    ti.add_argument("--seed", type=int, default=1)
    ti.add_argument("--out", required=True, help="output directory")
    ti.set_defaults(handler=cmd_titrate)

    se = sub.add_parser("sensitivity", help="CASR field sensitivity estimate")
    se.add_argument("--b-list", required=True,
                    help="comma-separated RF amplitudes, e.g. 1uT,2uT,4uT")
    se.add_argument("--nu-rf", type=_unit_arg("frequency"), default=15.626e6)
    se.add_argument("--nu-base", type=_unit_arg("frequency"), default=15.625e6)
    se.add_argument("--duration", type=_unit_arg("time"), default=0.5)
    se.add_argument("--averages", type=int, default=1000)
    se.add_argument("--r0", type=float, default=1e4,
                    help="baseline photons per readout")
    se.add_argument("--contrast", type=float, default=0.004,
                    help="readout contrast fraction")
    se.add_argument("--seed", type=int, default=1)
    se.add_argument("--out", help="write sensitivity JSON here")
    se.set_defaults(handler=cmd_sensitivity)

    rp = sub.add_parser("reproduce", help="run a named reproduction bundle")
    rp.add_argument("--figure", required=True,
                    help=f"one of {', '.join(repro.FIGURE_IDS)}")
    rp.add_argument("--out", required=True, help="bundle directory")
    rp.add_argument("--seed", type=int, default=1)
    rp.add_argument("--workers", type=int, default=1,
                    help="worker threads (outputs are identical for any value)")
    rp.set_defaults(handler=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; keep its convention
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except (ConfigError, ParseError, CompileError, units.UnitError,
            protocols.ProtocolError, engine.CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (engine.EngineError, analysis.FitError, analysis.SpectrumError,
            chemsense.ChemSenseError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
