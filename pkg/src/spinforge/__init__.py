"""spinforge: simulate and analyze spin-1/2 pair defect sensing experiments.

Subpackages in dependency order: units and pulseq (sequence language),
engine (spin evolution and noise), readout (photon statistics), analysis
(fitting and spectra), chemsense (ion-sensing model), protocols
(end-to-end experiments) and cli (command-line front end).
"""

__version__ = "0.1.0"

from . import analysis, chemsense, engine, protocols, pulseq, readout, units

__all__ = ["analysis", "chemsense", "engine", "protocols", "pulseq",
           "readout", "units", "__version__"]
