"""Pulse-sequence DSL: parser, compiler and sweep expansion.

Grammar (one definition per named sequence, ``#`` comments, free whitespace)::

    file    := def*
    def     := "seq" IDENT "{" instr* "}"
    instr   := "laser" dur | "mw" angle phase opt* | "wait" dur | "read"
             | "repeat" INT "{" instr* "}"
    angle   := "pi/2" | "pi" | "3pi/2" | dur
    phase   := "x" | "y" | "-x" | "-y" | NUMBER "deg"
    opt     := "amp=" NUMBER | "detune=" freq
    dur     := NUMBER ("ns"|"us"|"ms"|"s") | "$" IDENT
    freq    := NUMBER ("Hz"|"kHz"|"MHz"|"GHz")

Parsing yields an immutable instruction tree with source positions for
diagnostics.  Compilation binds placeholders, resolves symbolic angles
through a pulse calibration and expands loops into a flat, absolutely
timestamped Schedule.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .units import UNIT_TABLE, scale_to_si, split_quantity_text

MAX_NESTING = 16
DEFAULT_EVENT_CAP = 10_000_000

_PHASE_DEG = {"x": 0.0, "y": 90.0, "-x": 180.0, "-y": 270.0}
_ANGLES = ("pi/2", "pi", "3pi/2")
_KEYWORDS = {"seq", "laser", "mw", "wait", "read", "repeat"}


class PulseSeqError(ValueError):
    """Base for DSL errors; carries the source position when known."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)


class ParseError(PulseSeqError):
    pass


class CompileError(PulseSeqError):
    pass


# --- instruction tree ---------------------------------------------------

@dataclass(frozen=True)
class Instruction:
    """One node of the parsed tree.

    duration is seconds (float), a placeholder name (str) or a symbolic
    angle from ``pi/2 | pi | 3pi/2`` (str) for mw instructions.
    """

    kind: str                     # laser | mw | wait | read | repeat
    duration: float | str | None = None
    phase_deg: float | None = None
    amp_rel: float = 1.0
    detune_hz: float = 0.0
    count: int | None = None      # repeat only
    body: tuple = ()              # repeat only
    pos: tuple[int, int] = (0, 0)

    def structural_key(self):
        """Identity ignoring source positions, for round-trip comparison."""
        return (
            self.kind, self.duration, self.phase_deg, self.amp_rel,
            self.detune_hz, self.count,
            tuple(c.structural_key() for c in self.body),
        )


@dataclass(frozen=True)
class SeqDef:
    name: str
    body: tuple[Instruction, ...]
    pos: tuple[int, int] = (0, 0)

    def structural_key(self):
        return (self.name, tuple(i.structural_key() for i in self.body))


@dataclass(frozen=True)
class PulseCalibration:
    """Calibrated pulse durations; symbolic angles resolve through these."""

    pi2_duration: float = 5e-9
    pi_duration: float = 10e-9

    def duration_of(self, angle: str) -> float:
        if angle == "pi/2":
            return self.pi2_duration
        if angle == "pi":
            return self.pi_duration
        if angle == "3pi/2":
            return 3.0 * self.pi2_duration
        raise CompileError(f"unknown symbolic angle {angle!r}")


@dataclass(frozen=True)
class Event:
    t_start: float
    duration: float
    kind: str                 # laser | mw | wait | read
    phase_deg: float = 0.0
    amp_rel: float = 1.0
    detune_hz: float = 0.0


@dataclass(frozen=True)
class Schedule:
    events: tuple[Event, ...]
    total_duration: float
    readout_count: int
    unbound: frozenset = field(default_factory=frozenset)

    def to_csv(self) -> str:
        lines = ["t_start_s,duration_s,kind,phase_deg,amp_rel,detune_hz"]
        for e in self.events:
            lines.append(
                f"{e.t_start!r},{e.duration!r},{e.kind},"
                f"{e.phase_deg!r},{e.amp_rel!r},{e.detune_hz!r}"
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepSpec:
    placeholder: str
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("sweep values must be non-empty")
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("sweep values must be finite")
        diffs = [b - a for a, b in zip(vals, vals[1:])]
        if diffs and not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            raise ValueError("sweep values must be strictly monotone")
        object.__setattr__(self, "values", vals)


# --- tokenizer ----------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    for lineno, line in enumerate(source.splitlines(), start=1):
        hash_idx = line.find("#")
        if hash_idx >= 0:
            line = line[:hash_idx]
        col = 0
        n = len(line)
        while col < n:
            ch = line[col]
            if ch.isspace():
                col += 1
                continue
            if ch in "{}":
                tokens.append(_Token(ch, lineno, col + 1))
                col += 1
                continue
            start = col
            while col < n and not line[col].isspace() and line[col] not in "{}#":
                col += 1
            tokens.append(_Token(line[start:col], lineno, start + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, expect: str | None = None) -> _Token:
        tok = self._peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else _Token("", 1, 1)
            what = f"{expect!r}" if expect else "more input"
            raise ParseError(f"unexpected end of input, expected {what}",
                             last.line, last.col)
        if expect is not None and tok.text != expect:
            raise ParseError(f"expected {expect!r}, got {tok.text!r}",
                             tok.line, tok.col)
        self.pos += 1
        return tok

    def parse_file(self) -> tuple[SeqDef, ...]:
        defs = []
        while self._peek() is not None:
            tok = self._peek()
            if tok.text != "seq":
                raise ParseError(f"expected 'seq', got {tok.text!r}",
                                 tok.line, tok.col)
            defs.append(self._parse_def())
        return tuple(defs)

    def _parse_def(self) -> SeqDef:
        seq_tok = self._next("seq")
        name_tok = self._next()
        if name_tok.text in _KEYWORDS or name_tok.text == "{":
            raise ParseError("expected sequence name after 'seq'",
                             name_tok.line, name_tok.col)
        self._next("{")
        body = self._parse_block(depth=1)
        return SeqDef(name_tok.text, body, (seq_tok.line, seq_tok.col))

    def _parse_block(self, depth: int) -> tuple[Instruction, ...]:
        instrs = []
        while True:
            tok = self._peek()
            if tok is None:
                last = self.tokens[-1]
                raise ParseError("unclosed '{'", last.line, last.col)
            if tok.text == "}":
                self._next()
                return tuple(instrs)
            instrs.append(self._parse_instr(depth))

    def _parse_instr(self, depth: int) -> Instruction:
        tok = self._next()
        pos = (tok.line, tok.col)
        if tok.text == "laser":
            return Instruction("laser", duration=self._parse_dur(), pos=pos)
        if tok.text == "wait":
            return Instruction("wait", duration=self._parse_dur(), pos=pos)
        if tok.text == "read":
            return Instruction("read", pos=pos)
        if tok.text == "mw":
            return self._parse_mw(pos)
        if tok.text == "repeat":
            return self._parse_repeat(pos, depth)
        raise ParseError(f"unknown keyword {tok.text!r}", tok.line, tok.col)

    def _parse_repeat(self, pos, depth) -> Instruction:
        count_tok = self._next()
        try:
            count = int(count_tok.text)
        except ValueError:
            raise ParseError(f"expected repeat count, got {count_tok.text!r}",
                             count_tok.line, count_tok.col) from None
        if count < 1:
            raise ParseError("repeat count must be >= 1",
                             count_tok.line, count_tok.col)
        if depth + 1 > MAX_NESTING:
            raise ParseError(f"nesting depth exceeds {MAX_NESTING}", *pos)
        self._next("{")
        body = self._parse_block(depth + 1)
        return Instruction("repeat", count=count, body=body, pos=pos)

    def _parse_mw(self, pos) -> Instruction:
        angle_tok = self._next()
        if angle_tok.text in _ANGLES:
            duration: float | str = angle_tok.text
        else:
            duration = self._parse_dur_token(angle_tok)
        phase = self._parse_phase()
        amp = 1.0
        detune = 0.0
        while True:
            tok = self._peek()
            if tok is None or "=" not in tok.text:
                break
            key, _, val = self._next().text.partition("=")
            if not val:
                nxt = self._next()
                val = nxt.text
            if key == "amp":
                try:
                    amp = float(val)
                except ValueError:
                    raise ParseError(f"bad amp value {val!r}",
                                     tok.line, tok.col) from None
                if not 0.0 < amp <= 1.0:
                    raise ParseError(f"amp_rel {amp:g} out of range (0, 1]",
                                     tok.line, tok.col)
            elif key == "detune":
                detune = self._parse_freq_text(val, tok)
            else:
                raise ParseError(f"unknown option {key!r}", tok.line, tok.col)
        return Instruction("mw", duration=duration, phase_deg=phase,
                           amp_rel=amp, detune_hz=detune, pos=pos)

    def _parse_phase(self) -> float:
        tok = self._next()
        if tok.text in _PHASE_DEG:
            return _PHASE_DEG[tok.text]
        text = tok.text
        if text.endswith("deg"):
            text = text[:-3]
        else:
            nxt = self._peek()
            if nxt is not None and nxt.text == "deg":
                self._next()
            else:
                raise ParseError(f"unknown phase {tok.text!r}", tok.line, tok.col)
        try:
            return float(text)
        except ValueError:
            raise ParseError(f"unknown phase {tok.text!r}",
                             tok.line, tok.col) from None

    def _parse_dur(self) -> float | str:
        return self._parse_dur_token(self._next())

    def _parse_dur_token(self, tok: _Token) -> float | str:
        if tok.text.startswith("$"):
            name = tok.text[1:]
            if not name.isidentifier():
                raise ParseError(f"expected placeholder name after '$'",
                                 tok.line, tok.col)
            return name
        try:
            number, suffix = split_quantity_text(tok.text)
        except ValueError:
            raise ParseError(f"expected duration, got {tok.text!r}",
                             tok.line, tok.col) from None
        if suffix not in UNIT_TABLE or UNIT_TABLE[suffix][0] != "time":
            raise ParseError(f"unknown unit {suffix!r} in {tok.text!r}",
                             tok.line, tok.col)
        seconds = scale_to_si(number, suffix)
        if seconds <= 0:
            raise ParseError("duration must be positive", tok.line, tok.col)
        return seconds

    def _parse_freq_text(self, text: str, tok: _Token) -> float:
        try:
            number, suffix = split_quantity_text(text)
        except ValueError:
            raise ParseError(f"expected frequency, got {text!r}",
                             tok.line, tok.col) from None
        if suffix not in UNIT_TABLE or UNIT_TABLE[suffix][0] != "frequency":
            raise ParseError(f"unknown unit {suffix!r} in {text!r}",
                             tok.line, tok.col)
        return scale_to_si(number, suffix)


def parse(source: str) -> tuple[SeqDef, ...]:
    """Parse DSL text into a tuple of sequence definitions."""
    return _Parser(_tokenize(source)).parse_file()


def parse_one(source: str) -> SeqDef:
    """Parse text expected to contain exactly one sequence definition."""
    defs = parse(source)
    if len(defs) != 1:
        raise ParseError(f"expected exactly one sequence, found {len(defs)}")
    return defs[0]


# --- pretty printer -----------------------------------------------------

def _format_duration(seconds: float) -> str:
    for suffix in ("ns", "us", "ms", "s"):
        mantissa = f"{seconds / 10.0 ** UNIT_TABLE[suffix][1]:g}"
        if scale_to_si(mantissa, suffix) == seconds:
            return f"{mantissa}{suffix}"
    return f"{seconds!r}s"


def _format_phase(deg: float) -> str:
    for name, value in _PHASE_DEG.items():
        if deg == value:
            return name
    return f"{deg:g}deg"


def _format_instr(instr: Instruction, indent: int) -> list[str]:
    pad = "  " * indent
    if instr.kind == "repeat":
        lines = [f"{pad}repeat {instr.count} {{"]
        for child in instr.body:
            lines.extend(_format_instr(child, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    if instr.kind == "read":
        return [f"{pad}read"]
    dur = (f"${instr.duration}" if isinstance(instr.duration, str)
           and instr.duration not in _ANGLES else instr.duration)
    if isinstance(dur, float):
        dur = _format_duration(dur)
    if instr.kind == "mw":
        parts = [f"{pad}mw {dur} {_format_phase(instr.phase_deg)}"]
        if instr.amp_rel != 1.0:
            parts.append(f"amp={instr.amp_rel:g}")
        if instr.detune_hz != 0.0:
            parts.append(f"detune={instr.detune_hz:g}Hz")
        return [" ".join(parts)]
    return [f"{pad}{instr.kind} {dur}"]


def pretty_print(defs) -> str:
    """Regenerate DSL source; parse(pretty_print(t)) is structurally t."""
    if isinstance(defs, SeqDef):
        defs = (defs,)
    lines = []
    for d in defs:
        lines.append(f"seq {d.name} {{")
        for instr in d.body:
            lines.extend(_format_instr(instr, 1))
        lines.append("}")
        lines.append("")
    return "\n".join(lines)


# --- compiler -----------------------------------------------------------

def placeholders(seq: SeqDef) -> frozenset:
    """Names of unbound sweep placeholders appearing in the tree."""
    found = set()

    def walk(instrs):
        for i in instrs:
            if i.kind == "repeat":
                walk(i.body)
            elif isinstance(i.duration, str) and i.duration not in _ANGLES:
                found.add(i.duration)

    walk(seq.body)
    return frozenset(found)


def compile_schedule(seq: SeqDef, bindings: dict | None = None,
                     calib: PulseCalibration | None = None,
                     event_cap: int = DEFAULT_EVENT_CAP) -> Schedule:
    """Expand a parsed sequence into an absolutely timestamped Schedule.

    Deterministic: identical (tree, bindings, calib) give identical output.
    """
    bindings = bindings or {}
    calib = calib or PulseCalibration()
    events: list[Event] = []
    clock = 0.0

    def resolve(instr: Instruction) -> float:
        d = instr.duration
        if isinstance(d, float):
            return d
        if d in _ANGLES:
            return calib.duration_of(d)
        if d in bindings:
            value = float(bindings[d])
            if value <= 0 or not math.isfinite(value):
                raise CompileError(
                    f"binding for ${d} must be a positive finite time, got {value!r}",
                    *instr.pos)
            return value
        raise CompileError(f"unbound placeholder ${d}", *instr.pos)

    def emit(instrs):
        nonlocal clock
        for instr in instrs:
            if len(events) > event_cap:
                raise CompileError(
                    f"expanded event count exceeds cap of {event_cap}")
            if instr.kind == "repeat":
                if instr.count * _min_events(instr.body) + len(events) > event_cap:
                    raise CompileError(
                        f"expanded event count exceeds cap of {event_cap}",
                        *instr.pos)
                for _ in range(instr.count):
                    emit(instr.body)
            elif instr.kind == "read":
                events.append(Event(clock, 0.0, "read"))
            else:
                dur = resolve(instr)
                events.append(Event(
                    clock, dur, instr.kind,
                    phase_deg=instr.phase_deg or 0.0,
                    amp_rel=instr.amp_rel, detune_hz=instr.detune_hz))
                clock += dur

    def _min_events(body):
        total = 0
        for i in body:
            total += i.count * _min_events(i.body) if i.kind == "repeat" else 1
        return total

    emit(seq.body)
    readouts = sum(1 for e in events if e.kind == "read")
    return Schedule(tuple(events), clock, readouts, frozenset())


def expand_sweep(seq: SeqDef, sweep: SweepSpec,
                 bindings: dict | None = None,
                 calib: PulseCalibration | None = None) -> list[Schedule]:
    """One compiled Schedule per sweep value, in sweep order."""
    if sweep.placeholder not in placeholders(seq):
        raise CompileError(
            f"sweep placeholder ${sweep.placeholder} does not appear in "
            f"sequence {seq.name!r}")
    base = dict(bindings or {})
    out = []
    for value in sweep.values:
        base[sweep.placeholder] = value
        out.append(compile_schedule(seq, base, calib))
    return out
