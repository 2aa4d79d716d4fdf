import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinforge import sequences
from spinforge.pulseq import (CompileError, ParseError, PulseCalibration,
                              SeqDef, SweepSpec, compile_schedule,
                              expand_sweep, parse, parse_one, placeholders,
                              pretty_print)


def structural(defs):
    return [d.structural_key() for d in defs]


# --- parsing ---------------------------------------------------------------

def test_minimal_sequence():
    (d,) = parse("seq e { laser 5us read }")
    assert d.name == "e"
    assert [i.kind for i in d.body] == ["laser", "read"]
    assert d.body[0].duration == 5e-6


def test_hahn_echo_with_placeholder():
    (d,) = parse("seq echo { laser 5us mw pi/2 y wait $tau mw pi x "
                 "wait $tau mw pi/2 y read }")
    kinds = [i.kind for i in d.body]
    assert kinds == ["laser", "mw", "wait", "mw", "wait", "mw", "read"]
    assert placeholders(d) == {"tau"}
    assert d.body[1].duration == "pi/2"
    assert d.body[1].phase_deg == 90.0
    assert d.body[3].phase_deg == 0.0


def test_unknown_phase_diagnostic():
    with pytest.raises(ParseError, match="unknown phase 'q'") as exc:
        parse("seq bad { mw pi q }")
    assert exc.value.line == 1
    assert exc.value.col == 17


def test_positions_attached():
    (d,) = parse("seq a {\n  laser 5us\n  read\n}")
    assert d.body[0].pos == (2, 3)
    assert d.body[1].pos == (3, 3)


def test_comments_and_whitespace():
    src = "seq a {  # comment\n   laser 5us#trailing\n read }"
    (d,) = parse(src)
    assert [i.kind for i in d.body] == ["laser", "read"]


def test_phase_degrees_attached_and_split():
    (d,) = parse("seq a { mw pi 45deg }")
    assert d.body[0].phase_deg == 45.0
    (d2,) = parse("seq a { mw pi 45 deg }")
    assert d2.body[0].phase_deg == 45.0


def test_mw_options():
    (d,) = parse("seq a { mw 1us y amp=0.3 detune=40MHz }")
    i = d.body[0]
    assert i.amp_rel == 0.3
    assert i.detune_hz == 40e6
    assert i.duration == 1e-6


MALFORMED = [
    ("seq a { lazer 5us }", "unknown keyword 'lazer'"),
    ("seq bad { mw pi q }", "unknown phase 'q'"),
    ("seq a { wait 5parsec }", "unknown unit 'parsec'"),
    ("seq a { laser 5us", "unclosed '{'"),
    ("seq a { laser 0us }", "duration must be positive"),
    ("seq a { mw pi x amp=1.5 }", "amp_rel 1.5 out of range"),
    ("seq a { mw pi x amp=0 }", "amp_rel 0 out of range"),
    ("seq a { repeat 0 { read } }", "repeat count must be >= 1"),
    ("seq a { " + "repeat 2 { " * 17 + "read" + " }" * 17 + " }",
     "nesting depth exceeds 16"),
    ("seq { read }", "expected sequence name"),
    ("seq a { wait $ }", "expected placeholder name"),
    ("laser 5us", "expected 'seq'"),
]


@pytest.mark.parametrize("source,message", MALFORMED,
                         ids=[m[:28] for _, m in MALFORMED])
def test_malformed_inputs_have_designated_diagnostics(source, message):
    with pytest.raises(ParseError, match=message.replace("(", "\\(")
                       .replace(")", "\\)").replace("[", "\\[")
                       .replace("]", "\\]").replace("$", "\\$")) as exc:
        parse(source)
    assert exc.value.line is not None


# --- compilation ------------------------------------------------------------

def test_repeat_expansion_arithmetic():
    (d,) = parse("seq a { repeat 2 { mw pi x wait 16ns } }")
    sched = compile_schedule(d, calib=PulseCalibration(pi_duration=10e-9))
    assert len(sched.events) == 4
    assert sched.total_duration == pytest.approx(52e-9)
    starts = [e.t_start for e in sched.events]
    assert starts == pytest.approx([0.0, 10e-9, 26e-9, 36e-9])


def test_echo_timing_by_hand():
    # pi/2 + tau + pi + tau + pi/2 = 5 + 10 + 10 + 10 + 5 = 40 ns of MW window
    (d, _alt) = parse(sequences.echo_source())
    sched = compile_schedule(d, {"tau": 10e-9})
    mw_window = sched.total_duration - 5e-6
    assert mw_window == pytest.approx(40e-9)
    assert sched.readout_count == 1


def test_casr_period_is_multiple_of_rf_cycle():
    (d,) = parse(sequences.casr_source(1))
    sched = compile_schedule(d)
    cycles = sched.total_duration / (1.0 / 15.625e6)
    assert cycles == pytest.approx(round(cycles))


def test_angles_resolve_through_calibration():
    (d,) = parse("seq a { mw pi/2 x mw pi x mw 3pi/2 x }")
    sched = compile_schedule(d, calib=PulseCalibration(5e-9, 10e-9))
    assert [e.duration for e in sched.events] == \
        pytest.approx([5e-9, 10e-9, 15e-9])


def test_unbound_placeholder_rejected():
    (d,) = parse("seq a { wait $tau read }")
    with pytest.raises(CompileError, match=r"unbound placeholder \$tau"):
        compile_schedule(d)


def test_event_cap():
    (d,) = parse("seq a { repeat 4096 { repeat 4096 { mw pi x } } }")
    with pytest.raises(CompileError, match="event count exceeds cap"):
        compile_schedule(d, event_cap=1000)


def test_compile_determinism_by_hashing():
    (d,) = parse(sequences.cpmg_source(8))
    digests = set()
    for _ in range(3):
        sched = compile_schedule(d, {"tau": 16e-9})
        digests.add(hashlib.sha256(sched.to_csv().encode()).hexdigest())
    assert len(digests) == 1


def test_schedule_events_strictly_sequential():
    (d,) = parse(sequences.cpmg_source(4))
    sched = compile_schedule(d, {"tau": 12e-9})
    clock = 0.0
    for ev in sched.events:
        assert ev.t_start == pytest.approx(clock, abs=1e-18)
        clock += ev.duration
    assert sched.total_duration == pytest.approx(clock)


def test_csv_export_columns():
    (d,) = parse("seq a { mw pi x detune=1MHz read }")
    csv = compile_schedule(d).to_csv()
    header = csv.splitlines()[0]
    assert header == "t_start_s,duration_s,kind,phase_deg,amp_rel,detune_hz"
    assert "1000000.0" in csv


# --- sweeps ----------------------------------------------------------------

def test_expand_sweep_order_and_scaling():
    (d, _alt) = parse(sequences.echo_source())
    scheds = expand_sweep(d, SweepSpec("tau", (10e-9, 20e-9, 30e-9)))
    totals = [s.total_duration for s in scheds]
    assert totals == sorted(totals)
    # each extra 10 ns of tau adds 20 ns of evolution
    assert totals[1] - totals[0] == pytest.approx(20e-9)


def test_cpmg_sweep_total_time_is_2n_tau():
    (d,) = parse(sequences.cpmg_source(8))
    taus = (10e-9, 20e-9, 40e-9)
    scheds = expand_sweep(d, SweepSpec("tau", taus))
    fixed = 5e-6 + 2 * 5e-9 + 8 * 10e-9       # laser + 2 pi/2 + 8 pi
    for tau, sched in zip(taus, scheds):
        assert sched.total_duration - fixed == pytest.approx(2 * 8 * tau)


def test_sweep_empty_values_rejected():
    with pytest.raises(ValueError, match="non-empty"):
        SweepSpec("tau", ())


def test_sweep_non_monotone_rejected():
    with pytest.raises(ValueError, match="monotone"):
        SweepSpec("tau", (1e-9, 3e-9, 2e-9))


def test_sweep_placeholder_absent():
    (d,) = parse("seq a { laser 5us read }")
    with pytest.raises(CompileError, match="does not appear"):
        expand_sweep(d, SweepSpec("tau", (1e-9,)))


# --- round-trip properties ----------------------------------------------------

def test_corpus_round_trip_and_compile():
    for name in sequences.CORPUS_NAMES:
        src = sequences.corpus_source(name)
        tree = parse(src)
        assert structural(parse(pretty_print(tree))) == structural(tree), name
        for d in tree:
            binds = {ph: 16e-9 for ph in placeholders(d)}
            sched = compile_schedule(d, binds)
            assert sched.total_duration > 0


def test_corpus_matches_generators():
    for name in sequences.CORPUS_NAMES:
        shipped = parse(sequences.corpus_source(name))
        generated = parse(sequences.generated_source(name))
        assert structural(shipped) == structural(generated), name


_durations = st.sampled_from([1e-9, 16e-9, 5e-6, 100e-6, 2.5e-3])
_phases = st.sampled_from([0.0, 90.0, 180.0, 270.0, 45.0])


@st.composite
def _instr_source(draw, depth=0):
    kind = draw(st.sampled_from(
        ["laser", "wait", "read", "mw", "mw_sym"]
        + (["repeat"] if depth < 2 else [])))
    if kind == "laser":
        return f"laser {draw(_durations) * 1e9:g}ns"
    if kind == "wait":
        if draw(st.booleans()):
            return f"wait ${draw(st.sampled_from(['tau', 't', 'd']))}"
        return f"wait {draw(_durations) * 1e9:g}ns"
    if kind == "read":
        return "read"
    if kind == "mw_sym":
        angle = draw(st.sampled_from(["pi/2", "pi", "3pi/2"]))
        phase = draw(st.sampled_from(["x", "y", "-x", "-y"]))
        return f"mw {angle} {phase}"
    if kind == "mw":
        amp = draw(st.sampled_from(["", " amp=0.3", " amp=1"]))
        det = draw(st.sampled_from(["", " detune=40MHz"]))
        return f"mw {draw(_durations) * 1e9:g}ns {draw(_phases):g}deg{amp}{det}"
    n = draw(st.integers(1, 3))
    body = draw(st.lists(_instr_source(depth + 1), min_size=1, max_size=3))
    return f"repeat {n} {{ {' '.join(body)} }}"


@settings(max_examples=60, deadline=None)
@given(st.lists(_instr_source(), min_size=1, max_size=6))
def test_round_trip_random_trees(instrs):
    src = "seq r { " + " ".join(instrs) + " }"
    tree = parse(src)
    assert structural(parse(pretty_print(tree))) == structural(tree)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.sampled_from([4e-9, 16e-9, 1e-6]))
def test_repeat_duration_linearity(count, tau):
    body = "mw pi x wait {:g}ns".format(tau * 1e9)
    (single,) = parse(f"seq a {{ {body} }}")
    (repeated,) = parse(f"seq a {{ repeat {count} {{ {body} }} }}")
    one = compile_schedule(single).total_duration
    many = compile_schedule(repeated).total_duration
    assert many == pytest.approx(count * one)


def test_compile_is_pure():
    (d,) = parse(sequences.cpmg_source(4))
    a = compile_schedule(d, {"tau": 10e-9})
    b = compile_schedule(d, {"tau": 10e-9})
    assert a == b
