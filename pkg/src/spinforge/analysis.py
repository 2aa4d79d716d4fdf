"""Nonlinear least-squares fitting, FFT spectral estimation and the
magnetometry sensitivity calibration.

The fitter blends gradient-descent and Gauss-Newton steps through an
adaptive damping factor (multiply by 3 on a rejected step, divide by 3 on
an accepted one).  Every model in the zoo carries an analytic Jacobian;
tests verify each against central finite differences.  Singular normal
equations are reported, never silently regularized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class FitError(ValueError):
    pass


class SpectrumError(ValueError):
    pass


# --- model zoo --------------------------------------------------------------

@dataclass(frozen=True)
class FitModel:
    id: str
    param_names: tuple
    param_units: tuple
    fn: object
    jac: object
    guess: object


def _lorentzian(x, p):
    amp, f0, hwhm = p
    u = (x - f0) / hwhm
    return amp / (1.0 + u * u)


def _lorentzian_jac(x, p):
    amp, f0, hwhm = p
    u = (x - f0) / hwhm
    d = 1.0 + u * u
    j = np.empty((len(x), 3))
    j[:, 0] = 1.0 / d
    j[:, 1] = amp * 2.0 * u / (hwhm * d * d)
    j[:, 2] = amp * 2.0 * u * u / (hwhm * d * d)
    return j


def _lorentzian_guess(x, y):
    base = float(np.median(y))
    i = int(np.argmax(np.abs(y - base)))
    amp = y[i] - base
    half = base + 0.5 * amp
    above = np.abs(y - base) >= np.abs(half - base)
    width = (x[above].max() - x[above].min()) / 2.0 if above.sum() > 1 else \
        (x.max() - x.min()) / 10.0
    return np.array([amp + base, x[i], max(width, abs(x[1] - x[0]))])


def _stretched_exp(x, p):
    amp, tscale, c = p
    z = np.power(np.clip(x / tscale, 0.0, None), c)
    return amp * np.exp(-z)


def _stretched_exp_jac(x, p):
    amp, tscale, c = p
    r = np.clip(x / tscale, 0.0, None)
    z = np.power(r, c)
    e = np.exp(-z)
    j = np.empty((len(x), 3))
    j[:, 0] = e
    j[:, 1] = amp * e * c * z / tscale
    with np.errstate(divide="ignore", invalid="ignore"):
        lnr = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
    j[:, 2] = -amp * e * z * lnr
    return j


def _stretched_exp_guess(x, y):
    amp = float(np.max(y))
    if amp <= 0:
        amp = 1.0
    frac = np.clip(y / amp, 1e-9, 1.0)
    below = np.nonzero(frac < math.exp(-1.0))[0]
    tscale = x[below[0]] if len(below) else x[-1]
    # log-log slope of -ln(y/amp) vs x estimates the stretch exponent
    mask = (frac < 0.9) & (frac > 1e-6) & (x > 0)
    if mask.sum() >= 2:
        lx = np.log(x[mask])
        lz = np.log(-np.log(frac[mask]))
        c = float(np.polyfit(lx, lz, 1)[0])
        c = min(max(c, 0.1), 3.0)
    else:
        c = 1.0
    return np.array([amp, max(tscale, x[1] if len(x) > 1 else 1.0), c])


def _power_law(x, p):
    a, s = p
    return a * np.power(x, s)


def _power_law_jac(x, p):
    a, s = p
    xs = np.power(x, s)
    j = np.empty((len(x), 2))
    j[:, 0] = xs
    j[:, 1] = a * xs * np.log(x)
    return j


def _power_law_guess(x, y):
    mask = (x > 0) & (y > 0)
    if mask.sum() < 2:
        raise FitError("power-law guess needs positive data")
    s, loga = np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)
    return np.array([math.exp(loga), s])


def _linear0(x, p):
    return p[0] * x


def _linear0_jac(x, p):
    return x.reshape(-1, 1).astype(float)


def _linear0_guess(x, y):
    denom = float(np.dot(x, x))
    if denom == 0:
        raise FitError("linear-through-origin guess needs nonzero x")
    return np.array([float(np.dot(x, y)) / denom])


def _hill(x, p):
    c0, kd, n, offset = p
    z = np.power(np.clip(x / kd, 0.0, None), n)
    return c0 / (1.0 + z) + offset


def _hill_jac(x, p):
    c0, kd, n, offset = p
    r = np.clip(x / kd, 0.0, None)
    z = np.power(r, n)
    d = 1.0 + z
    j = np.empty((len(x), 4))
    j[:, 0] = 1.0 / d
    j[:, 1] = c0 * n * z / (kd * d * d)
    with np.errstate(divide="ignore", invalid="ignore"):
        lnr = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
    j[:, 2] = -c0 * z * lnr / (d * d)
    j[:, 3] = 1.0
    return j


def _hill_guess(x, y):
    hi, lo = float(np.max(y)), float(np.min(y))
    mid = 0.5 * (hi + lo)
    order = np.argsort(x)
    xs, ys = x[order], y[order]
    crossing = xs[-1]
    for a, b, ya, yb in zip(xs[:-1], xs[1:], ys[:-1], ys[1:]):
        if (ya - mid) * (yb - mid) <= 0 and a > 0:
            crossing = math.sqrt(a * max(b, a))
            break
    return np.array([hi - lo, max(crossing, 1e-12), 1.0, lo])


def _damped_cosine(x, p):
    amp, freq, phase, decay, offset = p
    return amp * np.cos(2 * np.pi * freq * x + phase) * np.exp(-x / decay) + offset


def _damped_cosine_jac(x, p):
    amp, freq, phase, decay, offset = p
    w = 2 * np.pi * freq * x + phase
    e = np.exp(-x / decay)
    j = np.empty((len(x), 5))
    j[:, 0] = np.cos(w) * e
    j[:, 1] = -amp * 2 * np.pi * x * np.sin(w) * e
    j[:, 2] = -amp * np.sin(w) * e
    j[:, 3] = amp * np.cos(w) * e * x / decay**2
    j[:, 4] = 1.0
    return j


def _damped_cosine_guess(x, y):
    offset = float(np.mean(y))
    amp = float(np.std(y)) * math.sqrt(2.0)
    n = len(x)
    dt = x[1] - x[0] if n > 1 else 1.0
    mag = np.abs(np.fft.rfft(y - offset, 4 * n))
    freqs = np.fft.rfftfreq(4 * n, dt)
    mag[0] = 0.0
    freq = float(freqs[int(np.argmax(mag))])
    return np.array([amp, max(freq, 1.0 / (x[-1] - x[0] + dt)), 0.0,
                     float(x[-1] - x[0] + dt), offset])


MODEL_ZOO = {
    "lorentzian": FitModel(
        "lorentzian", ("amplitude", "center", "hwhm"), ("", "Hz", "Hz"),
        _lorentzian, _lorentzian_jac, _lorentzian_guess),
    "stretchedexp": FitModel(
        "stretchedexp", ("amplitude", "timescale", "stretch"), ("", "s", ""),
        _stretched_exp, _stretched_exp_jac, _stretched_exp_guess),
    "powerlaw": FitModel(
        "powerlaw", ("prefactor", "exponent"), ("", ""),
        _power_law, _power_law_jac, _power_law_guess),
    "linear0": FitModel(
        "linear0", ("slope",), ("",),
        _linear0, _linear0_jac, _linear0_guess),
    "hill": FitModel(
        "hill", ("quenchable", "kd", "hill_n", "offset"),
        ("", "mol/L", "", ""),
        _hill, _hill_jac, _hill_guess),
    "dampedcosine": FitModel(
        "dampedcosine", ("amplitude", "frequency", "phase", "decay", "offset"),
        ("", "Hz", "rad", "s", ""),
        _damped_cosine, _damped_cosine_jac, _damped_cosine_guess),
}


# --- damped least-squares core ----------------------------------------------

@dataclass
class FitResult:
    model: str
    estimates: np.ndarray
    errors: np.ndarray
    rss: float
    iterations: int
    converged: bool
    covariance: np.ndarray
    param_names: tuple = ()
    message: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "model": self.model,
            "params": {name: est for name, est in
                       zip(self.param_names or
                           [f"p{i}" for i in range(len(self.estimates))],
                           map(float, self.estimates))},
            "errors": {name: err for name, err in
                       zip(self.param_names or
                           [f"p{i}" for i in range(len(self.estimates))],
                           map(float, self.errors))},
            "rss": float(self.rss),
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
        }, indent=2, sort_keys=True)


def _numeric_jac(fun, p, f0, rel_step=1e-6):
    j = np.empty((len(f0), len(p)))
    for k in range(len(p)):
        h = rel_step * max(abs(p[k]), 1e-8)
        pp = p.copy(); pp[k] += h
        pm = p.copy(); pm[k] -= h
        j[:, k] = (np.asarray(fun(pp)) - np.asarray(fun(pm))) / (2.0 * h)
    return j


def least_squares(fun, p0, jac=None, max_iter=200, step_tol=1e-8,
                  grad_tol=1e-10, lam0=1e-3):
    """Minimize sum(fun(p)^2) with Levenberg-style adaptive damping.

    fun maps parameters to a residual vector.  jac(p) returns the residual
    Jacobian; central finite differences are used when absent.
    """
    p = np.asarray(p0, dtype=float).copy()
    r = np.asarray(fun(p), dtype=float)
    rss = float(np.dot(r, r))
    lam = lam0
    converged = False
    message = ""
    it = 0
    for it in range(1, max_iter + 1):
        j = np.asarray(jac(p)) if jac is not None else _numeric_jac(fun, p, r)
        jtj = j.T @ j
        g = j.T @ r
        if float(np.max(np.abs(g))) < grad_tol:
            converged = True
            break
        accepted = False
        for _ in range(50):
            damp = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = np.linalg.solve(damp, -g)
            except np.linalg.LinAlgError:
                lam *= 3.0
                if lam > 1e14:
                    message = "singular normal equations"
                    break
                continue
            if not np.all(np.isfinite(step)):
                message = "singular normal equations"
                break
            p_new = p + step
            try:
                r_new = np.asarray(fun(p_new), dtype=float)
            except (ValueError, FloatingPointError, OverflowError):
                lam *= 3.0
                continue
            rss_new = float(np.dot(r_new, r_new))
            if np.isfinite(rss_new) and rss_new < rss:
                rel = np.max(np.abs(step) / np.maximum(np.abs(p), 1e-30))
                p, r, rss = p_new, r_new, rss_new
                lam = max(lam / 3.0, 1e-14)
                accepted = True
                if rel < step_tol:
                    converged = True
                break
            lam *= 3.0
            if lam > 1e14:
                message = "damping exhausted (local minimum or singular)"
                break
        if not accepted:
            if not message:
                converged = True     # no descent direction left: stationary
            break
        if converged:
            break
    else:
        message = f"no convergence after {max_iter} iterations"
    nfree = len(p)
    dof = max(len(r) - nfree, 1)
    j = np.asarray(jac(p)) if jac is not None else _numeric_jac(fun, p, r)
    jtj = j.T @ j
    # scale-invariant rank check: parameters of hugely different units are
    # fine, genuinely collinear directions are not
    d = np.sqrt(np.diag(jtj))
    singular = (not np.all(np.isfinite(d))) or np.any(d <= 0)
    if not singular:
        corr = jtj / np.outer(d, d)
        w = np.linalg.eigvalsh(corr)
        singular = w[0] <= w[-1] * 1e-12
    if singular:
        cov = np.full((nfree, nfree), np.inf)
        errors = np.full(nfree, np.inf)
        if not message:
            message = "singular normal equations at optimum"
        converged = False
    else:
        cov = np.linalg.inv(jtj) * (rss / dof)
        errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult("", p, errors, rss, it, converged, cov, message=message)


def fit(model_id: str, x, y, p0=None, fixed: dict | None = None,
        sigma=None, max_iter=200) -> FitResult:
    """Fit a zoo model to (x, y).

    fixed maps parameter names to frozen values (e.g. amplitude fixed to 1,
    stretch fixed to 2.40).  sigma, when given, weights residuals 1/sigma.
    """
    if model_id not in MODEL_ZOO:
        raise FitError(f"unknown model {model_id!r}; have {sorted(MODEL_ZOO)}")
    model = MODEL_ZOO[model_id]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise FitError("x and y must be equal-length 1-D arrays")
    if not np.all(np.isfinite(x)):
        raise FitError("x contains non-finite values")
    fixed = dict(fixed or {})
    for name in fixed:
        if name not in model.param_names:
            raise FitError(f"unknown fixed parameter {name!r} for {model_id}")
    free_idx = [i for i, n in enumerate(model.param_names) if n not in fixed]
    if len(x) < len(free_idx) + 1:
        raise FitError(
            f"need at least {len(free_idx) + 1} points to fit {model_id}, "
            f"got {len(x)}")
    full0 = np.asarray(p0, dtype=float) if p0 is not None else model.guess(x, y)
    if len(full0) != len(model.param_names):
        raise FitError(f"initial guess must have {len(model.param_names)} entries")
    for name, val in fixed.items():
        full0[model.param_names.index(name)] = val
    w = 1.0 / np.asarray(sigma, dtype=float) if sigma is not None else None

    def expand(pfree):
        full = full0.copy()
        full[free_idx] = pfree
        return full

    def resid(pfree):
        r = model.fn(x, expand(pfree)) - y
        return r * w if w is not None else r

    def jac(pfree):
        j = model.jac(x, expand(pfree))[:, free_idx]
        return j * w[:, None] if w is not None else j

    res = least_squares(resid, full0[free_idx], jac=jac, max_iter=max_iter)
    full = expand(res.estimates)
    full_err = np.zeros(len(full))
    for k, i in enumerate(free_idx):
        full_err[i] = res.errors[k]
    return FitResult(model_id, full, full_err, res.rss, res.iterations,
                     res.converged, res.covariance,
                     param_names=model.param_names, message=res.message)


# --- spectra ------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray      # Hz, uniform bins from 0
    magnitude: np.ndarray        # amplitude units of the input series
    window: str
    zero_pad: int
    dt: float
    n_samples: int
    window_sum: float = field(default=0.0)

    @property
    def bin_width(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])


def spectrum(series, dt: float, window: str = "rect",
             zero_pad: int = 4) -> Spectrum:
    """Magnitude spectrum, amplitude-normalized: a unit cosine peaks near 1.

    Rect or Hann window; zero padding refines the bin grid for peak
    interpolation without adding information.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or len(y) < 8:
        raise SpectrumError("need a 1-D series of at least 8 samples")
    if dt <= 0:
        raise SpectrumError("dt must be > 0")
    if zero_pad < 1:
        raise SpectrumError("zero_pad must be >= 1")
    if window == "rect":
        w = np.ones(len(y))
    elif window == "hann":
        w = np.hanning(len(y))
    else:
        raise SpectrumError(f"unknown window {window!r} (rect or hann)")
    wsum = float(np.sum(w))
    nfft = int(len(y) * zero_pad)
    raw = np.abs(np.fft.rfft(y * w, nfft))
    mag = raw * 2.0 / wsum
    mag[0] = raw[0] / wsum
    if nfft % 2 == 0:
        mag[-1] = raw[-1] / wsum
    freqs = np.fft.rfftfreq(nfft, dt)
    return Spectrum(freqs, mag, window, zero_pad, dt, len(y), wsum)


def spectrum_from_times(t, series, window: str = "rect",
                        zero_pad: int = 4) -> Spectrum:
    """Like spectrum(), but checks that the time axis is uniform."""
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        raise SpectrumError("need at least 2 time points")
    steps = np.diff(t)
    dt = float(np.median(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise SpectrumError("non-uniform sampling rejected")
    return spectrum(series, dt, window, zero_pad)


def peak_fwhm(spec: Spectrum, f_min: float = 0.0,
              f_max: float | None = None) -> tuple[float, float]:
    """Peak frequency (parabolic interpolation) and FWHM (linear
    interpolation of the half-maximum crossings)."""
    f = spec.frequencies
    m = spec.magnitude.copy()
    sel = f >= f_min
    if f_max is not None:
        sel &= f <= f_max
    if not np.any(sel):
        raise SpectrumError("empty frequency selection")
    msel = np.where(sel, m, 0.0)
    i = int(np.argmax(msel))
    peak = msel[i]
    floor = float(np.median(m[sel]))
    if peak <= 5.0 * max(floor, 1e-300):
        raise SpectrumError("no significant peak (below 5x median magnitude)")
    df = spec.bin_width
    f_peak = f[i]
    if 0 < i < len(m) - 1 and m[i - 1] > 0 and m[i + 1] > 0:
        la, lb, lc = math.log(m[i - 1]), math.log(m[i]), math.log(m[i + 1])
        denom = la - 2.0 * lb + lc
        if denom < 0:
            f_peak = f[i] + 0.5 * (la - lc) / denom * df
    half = 0.5 * peak
    lo = None
    for k in range(i, 0, -1):
        if m[k - 1] <= half <= m[k]:
            frac = (m[k] - half) / (m[k] - m[k - 1])
            lo = f[k] - frac * df
            break
    hi = None
    for k in range(i, len(m) - 1):
        if m[k + 1] <= half <= m[k]:
            frac = (m[k] - half) / (m[k] - m[k + 1])
            hi = f[k] + frac * df
            break
    if lo is None or hi is None:
        raise SpectrumError("half-maximum crossings not found")
    return float(f_peak), float(hi - lo)


# --- sensitivity calibration ---------------------------------------------------

@dataclass(frozen=True)
class SensitivityResult:
    eta_t_per_sqrt_hz: float
    slope_per_tesla: float       # spectral peak amplitude per Tesla
    noise_floor: float           # rms magnitude of signal-free bins
    peak_amplitudes: tuple
    b_values: tuple
    linearity_warning: bool


def estimate_sensitivity(b_values, spectra, signal_freq: float,
                         t_s: float, averages: int,
                         exclude_bw: float | None = None) -> SensitivityResult:
    """Field sensitivity from CASR spectra at several drive amplitudes.

    Slope k of peak amplitude vs B from a through-origin fit; noise floor
    sigma from signal-free bins; eta = (sigma/k) * sqrt(t_s * averages).
    A quadratic component above 10% of the linear one flags a regime
    warning (phase no longer small).
    """
    b = np.asarray(b_values, dtype=float)
    if len(b) < 3:
        raise FitError("need >= 3 amplitudes in the linear regime")
    if len(spectra) != len(b):
        raise FitError("b_values and spectra length mismatch")
    bw = exclude_bw if exclude_bw is not None else 20.0 / t_s
    peaks = []
    for spec in spectra:
        sel = np.abs(spec.frequencies - signal_freq) <= bw
        if not np.any(sel):
            raise SpectrumError("signal frequency outside spectrum")
        peaks.append(float(np.max(spec.magnitude[sel])))
    peaks = np.asarray(peaks)
    slope = fit("linear0", b, peaks).estimates[0]
    # quadratic check: peaks ~ k B + q B^2
    design = np.vstack([b, b * b]).T
    kq, *_ = np.linalg.lstsq(design, peaks, rcond=None)
    warning = abs(kq[1]) * float(np.max(b)) > 0.1 * abs(kq[0])
    ref = spectra[int(np.argmax(b))]
    free = (np.abs(ref.frequencies - signal_freq) > 3.0 * bw) \
        & (ref.frequencies > 2.0 * bw)
    # odd harmonics of the beat also carry signal; mask the third
    free &= np.abs(ref.frequencies - 3.0 * signal_freq) > 3.0 * bw
    if not np.any(free):
        raise SpectrumError("no signal-free bins for the noise floor")
    sigma = float(np.sqrt(np.mean(ref.magnitude[free] ** 2)))
    eta = sigma / slope * math.sqrt(t_s * averages)
    return SensitivityResult(float(eta), float(slope), sigma,
                             tuple(map(float, peaks)), tuple(map(float, b)),
                             bool(warning))
