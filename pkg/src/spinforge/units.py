"""Unit-suffixed quantity parsing, shared by the pulse DSL and the CLI.

A quantity token is a number immediately followed by a unit suffix, e.g.
``5us``, ``12.9MHz``, ``78mT``. One table drives both the sequence grammar
and command-line flags so the two never disagree.
"""

from __future__ import annotations

import re
from decimal import Decimal

# suffix -> (dimension, power-of-ten exponent to the SI base unit);
# decimal exponents keep parsed values exactly equal to the equivalent
# literal (5us is the same float as 5e-6)
UNIT_TABLE = {
    # time -> seconds
    "ns": ("time", -9),
    "us": ("time", -6),
    "ms": ("time", -3),
    "s": ("time", 0),
    # frequency -> Hz
    "Hz": ("frequency", 0),
    "kHz": ("frequency", 3),
    "MHz": ("frequency", 6),
    "GHz": ("frequency", 9),
    # magnetic field -> Tesla
    "nT": ("field", -9),
    "uT": ("field", -6),
    "mT": ("field", -3),
    "T": ("field", 0),
    # power -> Watt
    "mW": ("power", -3),
    "W": ("power", 0),
    # concentration -> mol/L
    "nM": ("concentration", -9),
    "uM": ("concentration", -6),
    "mM": ("concentration", -3),
    "M": ("concentration", 0),
    # angle -> degrees (kept in degrees; callers convert)
    "deg": ("angle", 0),
}


def scale_to_si(number_text: str, suffix: str) -> float:
    """Exactly scale a decimal literal by the suffix's power of ten."""
    _, exp = UNIT_TABLE[suffix]
    return float(Decimal(number_text) * Decimal(10) ** exp)

_NUMBER_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


class UnitError(ValueError):
    """Raised for malformed or dimensionally wrong quantity strings."""


def split_quantity_text(text: str) -> tuple[str, str]:
    """Split '12.9MHz' into ('12.9', 'MHz'). Raises UnitError on junk."""
    stripped = text.strip()
    m = _NUMBER_RE.match(stripped)
    if m is None:
        raise UnitError(f"expected a number in {text!r}")
    return m.group(0), stripped[m.end():].strip()


def split_quantity(text: str) -> tuple[float, str]:
    """Split '12.9MHz' into (12.9, 'MHz'). Raises UnitError on junk."""
    number, suffix = split_quantity_text(text)
    return float(number), suffix


def parse_quantity(text: str, dimension: str) -> float:
    """Parse a unit-suffixed string into SI units of the given dimension.

    A bare number is accepted only for dimension 'none'.
    """
    stripped = text.strip()
    m = _NUMBER_RE.match(stripped)
    if m is None:
        raise UnitError(f"expected a number in {text!r}")
    suffix = stripped[m.end():].strip()
    if dimension == "none":
        if suffix:
            raise UnitError(f"unexpected unit {suffix!r} on dimensionless value")
        return float(m.group(0))
    if not suffix:
        raise UnitError(f"missing unit on {text!r} (expected a {dimension} unit)")
    if suffix not in UNIT_TABLE:
        raise UnitError(f"unknown unit {suffix!r}")
    dim, _ = UNIT_TABLE[suffix]
    if dim != dimension:
        raise UnitError(f"unit {suffix!r} is a {dim} unit, expected {dimension}")
    return scale_to_si(m.group(0), suffix)


def parse_time(text: str) -> float:
    return parse_quantity(text, "time")


def parse_frequency(text: str) -> float:
    return parse_quantity(text, "frequency")


def parse_field(text: str) -> float:
    return parse_quantity(text, "field")


def parse_power(text: str) -> float:
    return parse_quantity(text, "power")


def parse_concentration(text: str) -> float:
    return parse_quantity(text, "concentration")


def format_si(value: float, dimension: str) -> str:
    """Render an SI value with the largest unit that keeps |mantissa| >= 1."""
    candidates = sorted(
        ((suf, exp) for suf, (dim, exp) in UNIT_TABLE.items() if dim == dimension),
        key=lambda kv: kv[1],
    )
    if not candidates:
        return repr(value)
    best = candidates[0]
    for suf, exp in candidates:
        if abs(value) >= 10.0 ** exp:
            best = (suf, exp)
    return f"{value / 10.0 ** best[1]:g}{best[0]}"
