"""DSL source builders for the measurement protocols.

Each function returns pulse-sequence text for one protocol; the shipped
corpus files under corpus/ are generated from these builders, and a test
keeps the two from drifting apart.  Compiling these sequences validates
protocol timing (placeholders, loop expansion, event caps) even for
drivers that evaluate their physics in closed form.
"""

from __future__ import annotations

from importlib import resources

from .pulseq import (PulseCalibration, SeqDef, Schedule, compile_schedule,
                     parse_one)

CORPUS_NAMES = ("odmr", "odmr_lowpower", "rabi", "t1", "echo", "cpmg8",
                "spinlock", "casr")


def odmr_source() -> str:
    """Initialize, drive 5 us at the probe frequency, read.  The MW-off
    reference is handled by the referencing scheme, not the sequence."""
    return ("# swept-frequency magnetic resonance, 5 us laser / 5 us drive\n"
            "seq odmr {\n"
            "  laser 5us\n"
            "  mw 5us x\n"
            "  read\n"
            "}\n")


def odmr_lowpower_source() -> str:
    """Low-broadening variant: long initialization, reduced drive."""
    return ("seq odmr_lowpower {\n"
            "  laser 100us\n"
            "  mw 10us x amp=0.2\n"
            "  read\n"
            "}\n")


def rabi_source() -> str:
    return ("# nutation: variable-length resonant pulse\n"
            "seq rabi {\n"
            "  laser 5us\n"
            "  mw $t x\n"
            "  read\n"
            "}\n")


def t1_source() -> str:
    """Relaxation pair: plain delay, plus the pi-prepended reference."""
    return ("seq t1 {\n"
            "  laser 5us\n"
            "  wait $T\n"
            "  read\n"
            "}\n"
            "\n"
            "seq t1_ref {\n"
            "  laser 5us\n"
            "  mw pi x\n"
            "  wait $T\n"
            "  read\n"
            "}\n")


def echo_source() -> str:
    """Hahn echo with the alternating final-pulse endings."""
    return ("seq echo {\n"
            "  laser 5us\n"
            "  mw pi/2 y\n"
            "  wait $tau\n"
            "  mw pi x\n"
            "  wait $tau\n"
            "  mw pi/2 y\n"
            "  read\n"
            "}\n"
            "\n"
            "seq echo_alt {\n"
            "  laser 5us\n"
            "  mw pi/2 y\n"
            "  wait $tau\n"
            "  mw pi x\n"
            "  wait $tau\n"
            "  mw 3pi/2 y\n"
            "  read\n"
            "}\n")


def cpmg_source(n_pulses: int = 8) -> str:
    """pi/2 - tau - [pi - 2tau] x (N-1) - pi - tau - pi/2."""
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    name = f"cpmg{n_pulses}"
    lines = [f"seq {name} {{",
             "  laser 5us",
             "  mw pi/2 y",
             "  wait $tau"]
    if n_pulses > 1:
        lines += ["  mw pi x",
                  f"  repeat {n_pulses - 1} {{",
                  "    wait $tau",
                  "    wait $tau",
                  "    mw pi x",
                  "  }"]
    else:
        lines += ["  mw pi x"]
    lines += ["  wait $tau",
              "  mw pi/2 y",
              "  read",
              "}"]
    return "\n".join(lines) + "\n"


def spinlock_source() -> str:
    """Lock pulse at reduced amplitude, deliberately off resonance."""
    return ("seq spinlock {\n"
            "  laser 5us\n"
            "  mw pi/2 x\n"
            "  wait 2ns\n"
            "  mw $t_lock y amp=0.3 detune=40MHz\n"
            "  wait 2ns\n"
            "  mw pi/2 x\n"
            "  read\n"
            "}\n")


def casr_source(repeats: int = 16) -> str:
    """Synchronized XY-2 readout units; the trailing pad stretches each
    unit to 5120 ns, an integer multiple of the 64 ns RF period."""
    return ("seq casr {\n"
            f"  repeat {repeats} {{\n"
            "    laser 5us\n"
            "    mw pi/2 x\n"
            "    wait 16ns\n"
            "    mw pi x\n"
            "    wait 32ns\n"
            "    mw pi y\n"
            "    wait 16ns\n"
            "    mw pi/2 x\n"
            "    wait 26ns\n"
            "    read\n"
            "  }\n"
            "}\n")


_GENERATORS = {
    "odmr": odmr_source,
    "odmr_lowpower": odmr_lowpower_source,
    "rabi": rabi_source,
    "t1": t1_source,
    "echo": echo_source,
    "cpmg8": cpmg_source,
    "spinlock": spinlock_source,
    "casr": casr_source,
}


def generated_source(name: str) -> str:
    if name not in _GENERATORS:
        raise KeyError(f"unknown corpus sequence {name!r}")
    return _GENERATORS[name]()


def corpus_source(name: str) -> str:
    """Text of a shipped .pseq corpus file."""
    ref = resources.files("spinforge") / "corpus" / f"{name}.pseq"
    return ref.read_text()


def compile_cpmg(n_pulses: int, tau: float,
                 calib: PulseCalibration | None = None,
                 event_cap: int | None = None) -> Schedule:
    """Parse and compile a CPMG-N sequence at a given interpulse half-delay."""
    seq = parse_one(cpmg_source(n_pulses))
    kw = {} if event_cap is None else {"event_cap": event_cap}
    return compile_schedule(seq, {"tau": tau}, calib, **kw)
