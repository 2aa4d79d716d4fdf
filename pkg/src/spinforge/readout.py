"""Fluorescence readout: spin observables to photon counts with shot
noise, plus the three referencing schemes used to turn raw counts into
contrast values.

The photon model is Poisson throughout (never a Gaussian approximation),
so low-count configurations remain valid.  The baseline photon number per
readout is a config knob; absolute photon rates are not calibrated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream


class ReadoutError(ValueError):
    pass


@dataclass(frozen=True)
class ReadoutModel:
    """photons_per_readout is the baseline count R0; contrast is the
    fractional fluorescence change for a fully responding spin."""

    photons_per_readout: float = 1e4
    contrast: float = 0.004
    readout_duration: float = 5e-6
    polarity: str = "positive"

    def __post_init__(self):
        if self.photons_per_readout <= 0:
            raise ReadoutError("photons_per_readout must be > 0")
        if not 0.0 < self.contrast < 1.0:
            raise ReadoutError("contrast must be in (0, 1)")
        if self.polarity != "positive":
            raise ReadoutError("only positive polarity is defined")

    def mean_counts(self, p):
        """Expected counts for spin observable p in [0, 1]: R0 (1 - eps p)."""
        return self.photons_per_readout * (1.0 - self.contrast * np.asarray(p))


_SCHEME_COMBOS = {
    ("mw_off", "ratio"), ("mw_off", "difference"),
    ("pi_pulse", "ratio"), ("pi_pulse", "difference"),
    ("final_pulse_alternation", "difference"),
}


@dataclass(frozen=True)
class ReferencingScheme:
    kind: str = "mw_off"          # mw_off | pi_pulse | final_pulse_alternation
    combine: str = "ratio"        # ratio | difference

    def __post_init__(self):
        if (self.kind, self.combine) not in _SCHEME_COMBOS:
            raise ReadoutError(
                f"unsupported referencing scheme {self.kind}/{self.combine}")


def emit(p, model: ReadoutModel, averages: int, seed: int = 0,
         stream: tuple = ()) -> np.ndarray | float:
    """Mean of `averages` Poisson draws with mean R0 (1 - eps p).

    The sum of independent Poisson counts is Poisson, so the average is
    drawn as Poisson(averages * mean) / averages: distribution-exact and
    fast at any averaging depth.  Deterministic for a fixed (seed, stream).
    """
    if averages < 1:
        raise ReadoutError("averages must be >= 1")
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0) or np.any(p_arr > 1):
        raise ReadoutError("spin observable must lie in [0, 1]")
    rng = substream(seed, 0x5E, *stream)
    lam = model.mean_counts(p_arr) * averages
    counts = rng.poisson(lam) / averages
    return counts if np.ndim(p) else float(counts)


def referenced_contrast(signal, reference, scheme: ReferencingScheme):
    """Combine signal and reference counts into a contrast value.

    ratio: signal/reference.  difference: (signal - reference)/reference.
    final_pulse_alternation pairs the two sequence endings (signal = pi/2
    ending, reference = 3pi/2 ending) and returns their normalized
    difference 2 (reference - signal)/(signal + reference).
    """
    s = np.asarray(signal, dtype=float)
    r = np.asarray(reference, dtype=float)
    if scheme.kind == "final_pulse_alternation":
        denom = s + r
        if np.any(denom <= 0):
            raise ReadoutError("non-positive combined counts")
        value = 2.0 * (r - s) / denom
    elif scheme.combine == "ratio":
        if np.any(r <= 0):
            raise ReadoutError("zero or negative reference counts")
        value = s / r
        if np.any(np.abs(value - 1.0) > 1.0):
            raise ReadoutError("ratio contrast outside [0, 2]")
        return value if np.ndim(signal) or np.ndim(reference) else float(value)
    else:
        if np.any(r <= 0):
            raise ReadoutError("zero or negative reference counts")
        value = (s - r) / r
    if np.any(np.abs(value) > 1.0):
        raise ReadoutError("contrast outside [-1, 1]")
    return value if np.ndim(signal) or np.ndim(reference) else float(value)
