import numpy as np
import pytest

from spinforge.readout import (ReadoutError, ReadoutModel, ReferencingScheme,
                               emit, referenced_contrast)


def test_baseline_counts():
    model = ReadoutModel(photons_per_readout=1e4, contrast=0.004)
    val = emit(0.0, model, averages=2_000_000, seed=0)
    assert val == pytest.approx(1e4, rel=1e-3)


def test_mean_counts_arithmetic():
    model = ReadoutModel(photons_per_readout=1e4, contrast=0.004)
    assert model.mean_counts(1.0) == pytest.approx(9960.0)
    big = emit(1.0, model, averages=5_000_000, seed=1)
    assert big == pytest.approx(9960.0, rel=1e-3)


def test_emit_is_unbiased():
    model = ReadoutModel(photons_per_readout=1e4, contrast=0.004)
    p = 0.37
    draws = emit(np.full(100_000, p), model, averages=1, seed=5)
    mean = np.mean(draws)
    sigma = np.sqrt(model.mean_counts(p) / len(draws))
    assert abs(mean - model.mean_counts(p)) < 3 * sigma


def test_relative_error_scales_as_sqrt_averages():
    model = ReadoutModel()
    errs = []
    for averages in (100, 1000, 10_000):
        draws = emit(np.zeros(3000), model, averages, seed=averages)
        errs.append(np.std(draws) / np.mean(draws))
    assert errs[0] / errs[1] == pytest.approx(np.sqrt(10), rel=0.10)
    assert errs[1] / errs[2] == pytest.approx(np.sqrt(10), rel=0.10)


def test_emit_deterministic_under_seed():
    model = ReadoutModel()
    a = emit(np.linspace(0, 1, 7), model, 100, seed=9)
    b = emit(np.linspace(0, 1, 7), model, 100, seed=9)
    assert np.array_equal(a, b)


def test_emit_rejects_bad_inputs():
    model = ReadoutModel()
    with pytest.raises(ReadoutError):
        emit(0.5, model, averages=0)
    with pytest.raises(ReadoutError):
        emit(1.5, model, averages=10)


def test_ratio_and_difference_identities():
    scheme_r = ReferencingScheme("mw_off", "ratio")
    scheme_d = ReferencingScheme("mw_off", "difference")
    assert referenced_contrast(100.0, 100.0, scheme_r) == 1.0
    assert referenced_contrast(100.0, 100.0, scheme_d) == 0.0


def test_odmr_positive_contrast_convention():
    model = ReadoutModel(contrast=0.004)
    sig = model.mean_counts(1.0)
    ref = model.mean_counts(0.0)
    ratio = referenced_contrast(sig, ref, ReferencingScheme("mw_off", "ratio"))
    assert 1.0 - ratio == pytest.approx(0.004)


def test_alternation_dephased_gives_zero():
    scheme = ReferencingScheme("final_pulse_alternation", "difference")
    model = ReadoutModel()
    counts = model.mean_counts(0.5)
    assert referenced_contrast(counts, counts, scheme) == 0.0


def test_alternation_recovers_coherence_scale():
    scheme = ReferencingScheme("final_pulse_alternation", "difference")
    model = ReadoutModel(contrast=0.004)
    w = 0.8
    a = model.mean_counts(0.5 * (1 + w))
    b = model.mean_counts(0.5 * (1 - w))
    assert referenced_contrast(a, b, scheme) == pytest.approx(
        model.contrast * w, rel=0.01)


def test_zero_reference_rejected():
    with pytest.raises(ReadoutError):
        referenced_contrast(10.0, 0.0, ReferencingScheme("mw_off", "ratio"))


def test_contrast_bounds_enforced():
    with pytest.raises(ReadoutError, match=r"outside \[-1, 1\]"):
        referenced_contrast(500.0, 100.0,
                            ReferencingScheme("mw_off", "difference"))
    with pytest.raises(ReadoutError, match=r"outside \[0, 2\]"):
        referenced_contrast(500.0, 100.0,
                            ReferencingScheme("mw_off", "ratio"))


def test_scheme_combo_restrictions():
    with pytest.raises(ReadoutError):
        ReferencingScheme("final_pulse_alternation", "ratio")
    with pytest.raises(ReadoutError):
        ReferencingScheme("bogus", "ratio")


def test_model_validation():
    with pytest.raises(ReadoutError):
        ReadoutModel(photons_per_readout=0)
    with pytest.raises(ReadoutError):
        ReadoutModel(contrast=1.5)
