"""End-to-end experiment drivers: schedule/waveform generation, spin
response, photon emission and referencing, packed into SweepResult records.

Generator-truth conventions:
  * relaxation decays use the stretched-exponential ensemble envelope at
    the protocol layer (the engine's T1 channel is plain exponential),
  * coherence decays come from the noise engine (analytic backend by
    default, Monte Carlo on demand),
  * laser repolarization is ideal by default (knob),
  * reported ODMR-style contrast is quench-positive: resonance increases
    the referenced contrast value.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import analysis, chemsense, engine, readout
from .engine import (DriveParams, NoiseModel, coherence_analytic,
                     field_to_frequency, mc_coherence, pair_rabi, t1rho_rate)
from .readout import ReadoutModel, ReferencingScheme, emit, referenced_contrast


class ProtocolError(ValueError):
    pass


# --- result record ---------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    protocol: str
    axis_name: str
    axis_unit: str
    axis_values: tuple
    contrast_values: tuple
    averages: int
    sweeps: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.axis_values) != len(self.contrast_values):
            raise ProtocolError("axis and contrast lengths differ")
        vals = np.concatenate([np.asarray(self.axis_values, dtype=float),
                               np.asarray(self.contrast_values, dtype=float)])
        if not np.all(np.isfinite(vals)):
            raise ProtocolError("non-finite values in sweep result")

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.axis_values, dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.contrast_values, dtype=float)

    def to_csv(self) -> str:
        lines = ["x,y"]
        for a, c in zip(self.axis_values, self.contrast_values):
            lines.append(f"{float(a)!r},{float(c)!r}")
        return "\n".join(lines) + "\n"

    def metadata_json(self) -> str:
        from . import __version__
        meta = {
            "protocol": self.protocol,
            "axis_name": self.axis_name,
            "axis_unit": self.axis_unit,
            "columns": {"x": f"{self.axis_name} ({self.axis_unit})",
                        "y": "contrast"},
            "averages": self.averages,
            "sweeps": self.sweeps,
            "seed": self.seed,
            "points": len(self.axis_values),
            "metadata": _plain(self.metadata),
            "config_hash": config_hash(self.metadata),
            "tool_version": __version__,
        }
        return json.dumps(meta, indent=2, sort_keys=True)


def _plain(obj):
    """Recursively convert configs/arrays into JSON-serializable values."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [float(v) for v in obj.ravel()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return _plain(asdict(obj))
    return obj


def config_hash(config) -> str:
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"),
                      default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- ODMR -------------------------------------------------------------------

@dataclass(frozen=True)
class OdmrConfig:
    b0: float = 78e-3                 # T
    f_start: float = 2.0e9            # Hz
    f_stop: float = 2.4e9             # Hz
    points: int = 401
    amplitude: float = 5.83e-4        # peak referenced contrast
    hwhm: float = 12.9e6              # Hz
    f0_override: float | None = None  # Hz; defaults to gamma_e * B0
    power_broadening: float = 0.0     # relative saturation, widens the line
    averages: int = 100_000
    sweeps: int = 26


def run_odmr(config: OdmrConfig, model: ReadoutModel | None = None,
             seed: int = 0) -> SweepResult:
    """Swept-MW fluorescence spectrum with an MW-off reference.

    The reported contrast is 1 - signal/reference, so a resonant drive
    shows up as a positive Lorentzian of the configured amplitude.
    """
    model = model or ReadoutModel()
    if config.points < 1:
        raise ProtocolError("need at least one frequency point")
    if config.amplitude > model.contrast:
        raise ProtocolError(
            f"peak contrast {config.amplitude} exceeds readout contrast "
            f"{model.contrast}")
    f = np.linspace(config.f_start, config.f_stop, config.points)
    f0 = (config.f0_override if config.f0_override is not None
          else field_to_frequency(config.b0))
    hwhm = config.hwhm * math.sqrt(1.0 + config.power_broadening)
    u = (f - f0) / hwhm
    p = (config.amplitude / model.contrast) / (1.0 + u * u)
    shots = config.averages * config.sweeps
    sig = emit(p, model, shots, seed, stream=(1, 0))
    ref = emit(np.zeros_like(p), model, shots, seed, stream=(1, 1))
    ratio = referenced_contrast(sig, ref, ReferencingScheme("mw_off", "ratio"))
    contrast = 1.0 - ratio
    return SweepResult(
        "odmr", "frequency", "Hz", tuple(f), tuple(contrast),
        config.averages, config.sweeps, seed,
        metadata={"config": config, "readout": model, "f0_hz": f0})


# --- Rabi -------------------------------------------------------------------

@dataclass(frozen=True)
class RabiConfig:
    power_w: float = 30.0
    rabi_slope: float = 9.2e6         # Hz per sqrt(W)
    t_max: float = 200e-9             # s
    dt: float = 1e-9                  # s
    spin_model: str = "pair"          # single | pair
    decay_time: float | None = None   # optional damping envelope
    averages: int = 410_000
    sweeps: int = 1


def run_rabi(config: RabiConfig, model: ReadoutModel | None = None,
             seed: int = 0) -> SweepResult:
    """Rabi nutation versus pulse duration at Omega = slope * sqrt(P)."""
    model = model or ReadoutModel()
    if config.power_w < 0:
        raise ProtocolError("power must be >= 0")
    if config.spin_model not in ("single", "pair"):
        raise ProtocolError(f"unknown spin model {config.spin_model!r}")
    t = np.arange(0.0, config.t_max, config.dt)
    omega = config.rabi_slope * math.sqrt(config.power_w)
    if config.spin_model == "single":
        p = 0.5 * (1.0 - np.cos(2.0 * np.pi * omega * t))
    else:
        p = 1.0 - pair_rabi(omega, t)
    if config.decay_time is not None:
        steady = float(np.mean(p))
        p = steady + (p - steady) * np.exp(-t / config.decay_time)
    shots = config.averages * config.sweeps
    sig = emit(p, model, shots, seed, stream=(2, 0))
    ref = emit(np.zeros_like(p), model, shots, seed, stream=(2, 1))
    contrast = 1.0 - referenced_contrast(
        sig, ref, ReferencingScheme("mw_off", "ratio"))
    return SweepResult(
        "rabi", "pulse_duration", "s", tuple(t), tuple(contrast),
        config.averages, config.sweeps, seed,
        metadata={"config": config, "readout": model, "omega_hz": omega})


def rabi_peak_frequency(result: SweepResult, zero_pad: int = 8) -> float:
    """Dominant nutation frequency from the interpolated FFT peak."""
    y = result.y - float(np.mean(result.y))
    dt = float(result.x[1] - result.x[0])
    spec = analysis.spectrum(y, dt, window="hann", zero_pad=zero_pad)
    f_peak, _ = analysis.peak_fwhm(spec, f_min=spec.bin_width * 2)
    return f_peak


# --- T1 -----------------------------------------------------------------------

@dataclass(frozen=True)
class T1Config:
    t_min: float = 2e-6
    t_max: float = 180e-6
    points: int = 60
    t1: float = 25.87e-6              # generator truth
    stretch: float = 0.665            # ensemble envelope exponent
    log_spacing: bool = True
    averages: int = 10_000
    sweeps: int = 50


def run_t1(config: T1Config, model: ReadoutModel | None = None,
           seed: int = 0) -> SweepResult:
    """Relaxation decay with the pi-pulse reference scheme.

    Measurement starts polarized, reference starts inverted; the ratio of
    the two readouts decays as the stretched-exponential envelope times
    the readout contrast.
    """
    model = model or ReadoutModel()
    if config.log_spacing:
        t = np.geomspace(config.t_min, config.t_max, config.points)
    else:
        t = np.linspace(config.t_min, config.t_max, config.points)
    env = np.exp(-np.power(t / config.t1, config.stretch))
    p_meas = 0.5 * (1.0 - env)
    p_ref = 0.5 * (1.0 + env)
    shots = config.averages * config.sweeps
    sig = emit(p_meas, model, shots, seed, stream=(3, 0))
    ref = emit(p_ref, model, shots, seed, stream=(3, 1))
    ratio = referenced_contrast(sig, ref, ReferencingScheme("pi_pulse", "ratio"))
    contrast = ratio - 1.0
    return SweepResult(
        "t1", "delay", "s", tuple(t), tuple(contrast),
        config.averages, config.sweeps, seed,
        metadata={"config": config, "readout": model})


# --- Hahn echo / CPMG ----------------------------------------------------------

@dataclass(frozen=True)
class CpmgConfig:
    n_pulses: int = 1
    t_min: float | None = None        # total evolution time 2 N tau
    t_max: float | None = None
    points: int = 25
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(1.1485e9, 1e-5))
    backend: str = "analytic"         # analytic | mc
    trajectories: int = 10_000
    averages: int = 10_000
    sweeps: int = 100

    def time_axis(self) -> np.ndarray:
        """Total-evolution-time axis; by default spans ~3 decay times."""
        t2 = engine.t2_time(self.n_pulses, self.noise)
        lo = self.t_min if self.t_min is not None else t2 / 20.0
        hi = self.t_max if self.t_max is not None else 3.0 * t2
        return np.geomspace(lo, hi, self.points)


def run_cpmg(config: CpmgConfig, model: ReadoutModel | None = None,
             seed: int = 0) -> SweepResult:
    """Coherence decay versus total evolution time T = 2 N tau.

    N = 1 is the Hahn echo.  The final pi/2 pulse alternates with 3pi/2
    for referencing; the reported contrast is the normalized difference,
    about (readout contrast) * W(T).
    """
    model = model or ReadoutModel()
    if config.n_pulses < 1:
        raise ProtocolError("n_pulses must be >= 1")
    if config.backend not in ("analytic", "mc"):
        raise ProtocolError(f"unknown backend {config.backend!r}")
    t = config.time_axis()
    if config.backend == "analytic":
        w = np.array([coherence_analytic(tt, config.n_pulses, config.noise)
                      for tt in t])
    else:
        w = mc_coherence(t, config.n_pulses, config.noise,
                         config.trajectories, seed)
    p_pi2 = 0.5 * (1.0 + w)
    p_3pi2 = 0.5 * (1.0 - w)
    shots = config.averages * config.sweeps
    sig = emit(p_pi2, model, shots, seed, stream=(4, config.n_pulses, 0))
    ref = emit(p_3pi2, model, shots, seed, stream=(4, config.n_pulses, 1))
    contrast = referenced_contrast(
        sig, ref, ReferencingScheme("final_pulse_alternation", "difference"))
    return SweepResult(
        "cpmg", "total_evolution_time", "s", tuple(t), tuple(contrast),
        config.averages, config.sweeps, seed,
        metadata={"config": config, "readout": model,
                  "n_pulses": config.n_pulses})


def run_hahn(config: CpmgConfig | None = None,
             model: ReadoutModel | None = None, seed: int = 0) -> SweepResult:
    cfg = replace(config or CpmgConfig(), n_pulses=1)
    return run_cpmg(cfg, model, seed)


def analyze_cpmg_family(results: list[SweepResult],
                        fixed_stretch_from: int = 256,
                        fixed_stretch: float = 2.40) -> dict:
    """Shared-normalization analysis of a CPMG family.

    The N=1 curve is fit with a free amplitude; every dataset is divided
    by that amplitude and refit with amplitude fixed to 1.  The stretch
    exponent stays free below `fixed_stretch_from` pi pulses and is frozen
    at `fixed_stretch` from there up.  Returns per-N fits plus the
    power-law fit of T2(N).
    """
    by_n = sorted(results, key=lambda r: r.metadata["n_pulses"])
    first = by_n[0]
    if first.metadata["n_pulses"] != 1:
        raise ProtocolError("family must include N = 1 for normalization")
    base = analysis.fit("stretchedexp", first.x, first.y)
    amp = base.estimates[0]
    rows = []
    for res in by_n:
        n = res.metadata["n_pulses"]
        fixed = {"amplitude": 1.0}
        if n >= fixed_stretch_from:
            fixed["stretch"] = fixed_stretch
        f = analysis.fit("stretchedexp", res.x, res.y / amp, fixed=fixed)
        rows.append({"n_pulses": n, "t2": float(f.estimates[1]),
                     "t2_err": float(f.errors[1]),
                     "stretch": float(f.estimates[2]),
                     "stretch_fixed": "stretch" in fixed,
                     "converged": f.converged})
    ns = np.array([r["n_pulses"] for r in rows], dtype=float)
    t2s = np.array([r["t2"] for r in rows])
    pl = analysis.fit("powerlaw", ns, t2s)
    return {"normalization_amplitude": float(amp), "rows": rows,
            "powerlaw_prefactor": float(pl.estimates[0]),
            "powerlaw_exponent": float(pl.estimates[1]),
            "powerlaw_converged": pl.converged}


# --- spin lock -------------------------------------------------------------------

@dataclass(frozen=True)
class SpinlockConfig:
    f_spinlock: float = 300e6         # Hz; see README on the default choice
    t1: float = 25.87e-6
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(1.1485e9, 1e-5))
    t_min: float = 100e-9
    t_max: float = 60e-6
    points: int = 30
    stretch: float = 1.0
    averages: int = 100_000
    sweeps: int = 1


def run_spinlock(config: SpinlockConfig, model: ReadoutModel | None = None,
                 seed: int = 0) -> SweepResult:
    """Rotating-frame relaxation decay at rate t1rho_rate."""
    model = model or ReadoutModel()
    if config.f_spinlock <= 0:
        raise ProtocolError("spin-lock frequency must be > 0")
    rate = t1rho_rate(config.noise, config.f_spinlock, config.t1)
    t = np.geomspace(config.t_min, config.t_max, config.points)
    env = np.exp(-np.power(t * rate, config.stretch))
    p_a = 0.5 * (1.0 + env)
    p_b = 0.5 * (1.0 - env)
    shots = config.averages * config.sweeps
    sig = emit(p_a, model, shots, seed, stream=(5, 0))
    ref = emit(p_b, model, shots, seed, stream=(5, 1))
    contrast = referenced_contrast(
        sig, ref, ReferencingScheme("final_pulse_alternation", "difference"))
    return SweepResult(
        "spinlock", "lock_duration", "s", tuple(t), tuple(contrast),
        config.averages, config.sweeps, seed,
        metadata={"config": config, "readout": model,
                  "gamma_1rho_per_s": rate})


# --- CASR ---------------------------------------------------------------------

@dataclass(frozen=True)
class CasrConfig:
    nu_rf: float = 15.626e6           # Hz, applied RF
    nu_base: float = 15.625e6         # Hz, sequence-tuned frequency
    b_rf: float = 3e-6                # T, RF amplitude
    t_s: float = 2.0                  # s, total sampling time
    tau: float = 16e-9                # s, inter-pi-pulse half delay
    pi2_duration: float = 5e-9
    pi_duration: float = 10e-9
    laser_duration: float = 5e-6
    phi0: float = 0.0                 # rad, initial RF phase
    averages: int = 1000
    period_override: float | None = None


def casr_geometry(config: CasrConfig) -> dict:
    """Subsequence timing: XY-2 window offsets, padding and repetition
    period (an integer multiple of 1/nu_base)."""
    tau, p2, p1 = config.tau, config.pi2_duration, config.pi_duration
    window = 2 * p2 + 2 * p1 + 4 * tau
    # toggling intervals relative to window start (sign, start, stop)
    t0 = p2
    intervals = (
        (+1.0, t0, t0 + tau),
        (-1.0, t0 + tau + p1, t0 + 3 * tau + p1),
        (+1.0, t0 + 3 * tau + 2 * p1, t0 + 4 * tau + 2 * p1),
    )
    rf_period = 1.0 / config.nu_base
    raw = config.laser_duration + window
    period = (config.period_override if config.period_override is not None
              else math.ceil(raw / rf_period) * rf_period)
    cycles = period / rf_period
    if abs(cycles - round(cycles)) > 1e-6:
        raise ProtocolError(
            f"subsequence period {period!r} s is not an integer multiple of "
            f"1/nu_base = {rf_period!r} s")
    if period < raw:
        raise ProtocolError("subsequence period shorter than its contents")
    return {"window": window, "intervals": intervals, "period": period,
            "pad": period - raw, "mw_start": config.laser_duration}


def _window_response(intervals, nu: float) -> complex:
    """F(nu) = integral of y(t) exp(i 2 pi nu t) over the MW window."""
    total = 0.0 + 0.0j
    w = 2.0 * np.pi * nu
    for sign, a, b in intervals:
        total += sign * (np.exp(1j * w * b) - np.exp(1j * w * a)) / (1j * w)
    return total


def run_casr(config: CasrConfig, model: ReadoutModel | None = None,
             seed: int = 0) -> SweepResult:
    """Synchronized-readout stream: one readout per XY-2 subsequence.

    A detuning nu_rf - nu_base appears as a beat across the stream; the
    per-subsequence phase is the exact window integral of the RF waveform
    against the toggling function.
    """
    model = model or ReadoutModel()
    geo = casr_geometry(config)
    n_seq = int(config.t_s / geo["period"])
    if n_seq < 8:
        raise ProtocolError("sampling time too short for a usable stream")
    k = np.arange(n_seq)
    t_start = k * geo["period"] + geo["mw_start"]
    resp = _window_response(geo["intervals"], config.nu_rf)
    carrier = 2.0 * np.pi * config.nu_rf * t_start + config.phi0
    phase = engine.GAMMA_E_RAD_PER_T * config.b_rf * np.imag(
        np.exp(1j * carrier) * resp)
    p = 0.5 * (1.0 + np.sin(phase))
    counts = emit(p, model, config.averages, seed, stream=(6, 0))
    stream = counts / model.photons_per_readout
    return SweepResult(
        "casr", "time", "s", tuple(t_start), tuple(stream),
        config.averages, 1, seed,
        metadata={"config": config, "readout": model,
                  "period_s": geo["period"], "n_subsequences": n_seq,
                  "window_response_abs": abs(resp)})


def casr_spectrum(result: SweepResult, window: str = "rect",
                  zero_pad: int = 4) -> analysis.Spectrum:
    dt = float(result.x[1] - result.x[0])
    y = result.y - float(np.mean(result.y))
    return analysis.spectrum(y, dt, window=window, zero_pad=zero_pad)


def run_sensitivity(b_values, config: CasrConfig,
                    model: ReadoutModel | None = None,
                    seed: int = 0) -> analysis.SensitivityResult:
    """CASR sensitivity: spectra at several RF amplitudes, through-origin
    slope, noise floor from signal-free bins."""
    model = model or ReadoutModel()
    spectra = []
    for i, b in enumerate(b_values):
        res = run_casr(replace(config, b_rf=float(b)), model, seed + i)
        spectra.append(casr_spectrum(res))
    dnu = abs(config.nu_rf - config.nu_base)
    return analysis.estimate_sensitivity(
        b_values, spectra, dnu, config.t_s, config.averages)


# --- titration -------------------------------------------------------------------

@dataclass(frozen=True)
class TitrationConfig:
    concentrations: tuple = tuple(chemsense.default_concentration_grid())
    model: chemsense.TitrationModel = field(
        default_factory=chemsense.TitrationModel)
    odmr_template: OdmrConfig = field(default_factory=lambda: OdmrConfig(
        f_start=2.1e9, f_stop=2.28e9, points=121,
        averages=20_000, sweeps=9))
    t1_template: T1Config = field(default_factory=lambda: T1Config(
        averages=20_000, sweeps=20, stretch=1.0))
    readout_contrast: float = 0.2     # ion-sensing contrast scale


@dataclass(frozen=True)
class TitrationPoint:
    concentration: float
    t1_s: float
    odmr: SweepResult
    t1_sweep: SweepResult


def run_titration(config: TitrationConfig | None = None,
                  seed: int = 0) -> list[TitrationPoint]:
    """Per concentration: the quench model sets T1, which feeds a T1 decay
    and an ODMR spectrum whose amplitude follows the contrast model."""
    config = config or TitrationConfig()
    concs = tuple(float(c) for c in config.concentrations)
    if any(c <= 0 for c in concs) or list(concs) != sorted(concs):
        raise ProtocolError("concentrations must be positive and sorted")
    model = ReadoutModel(contrast=config.readout_contrast)
    points = []
    for i, c in enumerate(concs):
        t1c = chemsense.t1_of_concentration(c, config.model)
        amp = chemsense.contrast_of_concentration(c, config.model)
        odmr_cfg = replace(config.odmr_template, amplitude=amp)
        t1_cfg = replace(config.t1_template, t1=t1c,
                         t_max=min(max(8.0 * t1c, 4e-6), 180e-6))
        points.append(TitrationPoint(
            concentration=c, t1_s=t1c,
            odmr=run_odmr(odmr_cfg, model, seed=seed * 1000 + 2 * i),
            t1_sweep=run_t1(t1_cfg, model, seed=seed * 1000 + 2 * i + 1)))
    return points


def titration_amplitudes(points: list[TitrationPoint]) -> tuple:
    """Lorentzian-fit each spectrum; return (concentrations, amplitudes)."""
    concs, amps = [], []
    for pt in points:
        f = analysis.fit("lorentzian", pt.odmr.x, pt.odmr.y)
        concs.append(pt.concentration)
        amps.append(float(f.estimates[0]))
    return np.asarray(concs), np.asarray(amps)


def fit_titration(points: list[TitrationPoint]) -> analysis.FitResult:
    concs, amps = titration_amplitudes(points)
    return analysis.fit("hill", concs, amps)
