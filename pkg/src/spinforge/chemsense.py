"""Paramagnetic-ion sensing forward model: cooperative surface binding
drives T1 quenching and the matching ODMR-contrast reduction.

Quenching enters through the bound-site occupancy, not bulk concentration:
theta = (c/Kd)^n / (1 + (c/Kd)^n).  The contrast curve C0 (1 - theta) + A
is algebraically identical to C0/(1 + (c/Kd)^n) + A, the form used when
fitting titration data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class ChemSenseError(ValueError):
    pass


@dataclass(frozen=True)
class TitrationModel:
    kd: float = 1.69e-5                  # mol/L
    hill_n: float = 0.78
    t1_water: float = 27e-6              # s
    gamma_max: float = 3.086e5           # 1/s added relaxation at saturation
    quenchable_contrast: float = 0.1195  # contrast fraction that quenches
    baseline_contrast: float = 0.0272    # unquenchable floor

    def __post_init__(self):
        if min(self.kd, self.hill_n, self.t1_water, self.gamma_max,
               self.quenchable_contrast, self.baseline_contrast) <= 0:
            raise ChemSenseError("all titration parameters must be positive")
        if not self.hill_n <= 4.0:
            raise ChemSenseError("hill_n must be in (0, 4]")
        if self.quenchable_contrast + self.baseline_contrast > 1.0:
            raise ChemSenseError("total contrast cannot exceed 1")

    @classmethod
    def with_t1_at_1mm(cls, t1_at_1mm: float = 3e-6, **kw) -> "TitrationModel":
        """Pin the saturation relaxation rate so T1(1 mM) comes out as
        requested.  The saturated T1 is not an observed quantity; this is
        the declared free knob."""
        probe = cls(gamma_max=1.0, **kw)
        theta = occupancy(1e-3, probe)
        gmax = (1.0 / t1_at_1mm - 1.0 / probe.t1_water) / theta
        if gmax <= 0:
            raise ChemSenseError("t1_at_1mm must be shorter than t1_water")
        return cls(gamma_max=gmax, **kw)


def occupancy(concentration, model: TitrationModel):
    """Bound-site fraction theta(c) = (c/Kd)^n / (1 + (c/Kd)^n)."""
    c = np.asarray(concentration, dtype=float)
    if np.any(c < 0):
        raise ChemSenseError("concentration must be >= 0")
    z = np.power(c / model.kd, model.hill_n)
    theta = z / (1.0 + z)
    return theta if np.ndim(concentration) else float(theta)


def t1_of_concentration(concentration, model: TitrationModel):
    """1/T1(c) = 1/T1_water + Gamma_max * theta(c)."""
    theta = np.asarray(occupancy(concentration, model))
    t1 = 1.0 / (1.0 / model.t1_water + model.gamma_max * theta)
    return t1 if np.ndim(concentration) else float(t1)


def contrast_of_concentration(concentration, model: TitrationModel):
    """ODMR contrast proxy C(c) = C0 (1 - theta(c)) + A."""
    theta = np.asarray(occupancy(concentration, model))
    c = model.quenchable_contrast * (1.0 - theta) + model.baseline_contrast
    return c if np.ndim(concentration) else float(c)


def titration_table(concentrations, model: TitrationModel) -> str:
    """CSV of the noiseless forward model over a concentration grid."""
    rows = ["concentration_mol_per_L,theta,t1_s,contrast"]
    for c in concentrations:
        rows.append(f"{float(c)!r},{occupancy(c, model)!r},"
                    f"{t1_of_concentration(c, model)!r},"
                    f"{contrast_of_concentration(c, model)!r}")
    return "\n".join(rows) + "\n"


def model_json(model: TitrationModel) -> str:
    return json.dumps({
        "kd_mol_per_L": model.kd,
        "hill_n": model.hill_n,
        "t1_water_s": model.t1_water,
        "gamma_max_per_s": model.gamma_max,
        "quenchable_contrast": model.quenchable_contrast,
        "baseline_contrast": model.baseline_contrast,
    }, indent=2, sort_keys=True)


def default_concentration_grid(n_points: int = 13) -> np.ndarray:
    """Log-spaced grid over the titration range 1 uM to 100 mM."""
    return np.logspace(math.log10(1e-6), math.log10(1e-1), n_points)
