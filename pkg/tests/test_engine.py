import math

import numpy as np
import pytest
from scipy.linalg import expm

from spinforge import sequences
from spinforge.engine import (CalibrationError, DriveParams, EngineError,
                              NoiseModel, RelaxationParams, calibrate_noise,
                              chi_cpmg, chi_piecewise, coherence_analytic,
                              cpmg_edges_signs, evolve, field_to_frequency,
                              mc_coherence, ou_value_and_integral, pair_rabi,
                              polarized_state, su2_rotation, t1rho_rate,
                              t2_time, validate_density_matrix)
from spinforge.pulseq import PulseCalibration, compile_schedule, parse_one
from spinforge.rng import substream


def hahn_chi_closed_form(total_time, noise):
    """Textbook echo decoherence exponent for an exponential-correlation
    bath, evaluated in extended precision (the naive float form cancels
    catastrophically for T much shorter than tau_c)."""
    import mpmath
    with mpmath.workdps(40):
        x = mpmath.mpf(total_time) / mpmath.mpf(noise.tau_c)
        val = (x - 3 + 4 * mpmath.exp(-x / 2) - mpmath.exp(-x))
        return float((mpmath.mpf(noise.delta) * mpmath.mpf(noise.tau_c)) ** 2
                     * val)


def chi_brute_force(total_time, n_pulses, noise, n_grid=1500):
    """Independent trapezoid quadrature of the chi double integral."""
    edges, signs = cpmg_edges_signs(total_time, n_pulses)
    t = np.linspace(0.0, total_time, n_grid)
    y = np.ones(n_grid)
    for k, edge in enumerate(edges[1:-1]):
        y[t >= edge] = signs[k + 1]
    corr = noise.delta**2 * np.exp(-np.abs(t[:, None] - t[None, :])
                                   / noise.tau_c)
    integrand = y[:, None] * y[None, :] * corr
    dt = t[1] - t[0]
    inner = np.trapezoid(integrand, dx=dt, axis=1)
    return 0.5 * np.trapezoid(inner, dx=dt)


# --- field conversion ---------------------------------------------------------

def test_field_to_frequency_78mt():
    f = field_to_frequency(78e-3)
    assert abs(f - 2.19e9) / 2.19e9 < 0.005


def test_field_to_frequency_zero_and_linearity():
    assert field_to_frequency(0.0) == 0.0
    assert field_to_frequency(156e-3) == pytest.approx(
        2 * field_to_frequency(78e-3))


def test_field_to_frequency_negative_rejected():
    with pytest.raises(EngineError):
        field_to_frequency(-1e-3)


# --- pair model ----------------------------------------------------------------

def test_pair_rabi_initial_state():
    assert pair_rabi(50e6, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_pair_rabi_collective_pi():
    # a 10 ns pulse at 50 MHz flips both spins: readout state fully vacated
    assert pair_rabi(50e6, 10e-9) == pytest.approx(0.0, abs=1e-9)


def test_pair_rabi_closed_form_on_grid():
    t = np.arange(0.0, 200e-9 + 1e-12, 1e-9)
    omega = 50e6
    p = pair_rabi(omega, t)
    closed = (3.0 / 8.0 + 0.5 * np.cos(2 * np.pi * omega * t)
              + 0.125 * np.cos(4 * np.pi * omega * t))
    assert np.max(np.abs(p - closed)) < 1e-9


def test_pair_rabi_against_matrix_exponential():
    # independent route: exponentiate the full 4x4 collective Hamiltonian
    sx = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
    eye = np.eye(2, dtype=complex)
    h = 2 * np.pi * 50e6 * (np.kron(sx, eye) + np.kron(eye, sx))
    rho0 = polarized_state(4)
    for t in (3e-9, 10e-9, 17e-9, 50e-9):
        u = expm(-1j * h * t)
        rho = u @ rho0 @ u.conj().T
        assert pair_rabi(50e6, t) == pytest.approx(rho[1, 1].real, abs=1e-12)


def test_pair_rabi_fft_component_ratio():
    t = np.arange(0, 400e-9, 0.5e-9)
    p = pair_rabi(60e6, t)
    mag = np.abs(np.fft.rfft((p - np.mean(p)) * np.hanning(len(p)), 8 * len(p)))
    freqs = np.fft.rfftfreq(8 * len(p), 0.5e-9)
    a1 = mag[(freqs > 30e6) & (freqs < 90e6)].max()
    a2 = mag[(freqs > 90e6) & (freqs < 180e6)].max()
    assert a1 / a2 == pytest.approx(4.0, rel=0.05)


# --- analytic decoherence function ----------------------------------------------

SLOW = NoiseModel(1.1485e9, 1e-5)
MID = NoiseModel(8.173e7, 3e-8)
FAST = NoiseModel(9.622e7, 3e-9)


def test_hahn_closed_form_matches_piecewise():
    for nm in (SLOW, MID, FAST):
        for t in (5e-9, 45e-9, 150e-9, 1e-6):
            assert chi_cpmg(t, 1, nm) == pytest.approx(
                hahn_chi_closed_form(t, nm), rel=1e-6)


def test_chi_closed_form_matches_piecewise_all_n():
    for nm in (SLOW, MID, FAST):
        for n in (1, 2, 3, 5, 8, 33, 64):
            t = 40e-9 * n
            edges, signs = cpmg_edges_signs(t, n)
            assert chi_cpmg(t, n, nm) == pytest.approx(
                chi_piecewise(edges, signs, nm), rel=1e-10)


def test_chi_against_brute_force_quadrature():
    for nm in (MID, FAST):
        for n in (1, 2, 4):
            t = 60e-9 * n
            assert chi_cpmg(t, n, nm) == pytest.approx(
                chi_brute_force(t, n, nm), rel=2e-3)


def test_zero_noise_means_unit_coherence():
    nm = NoiseModel(0.0, 1e-6)
    for t in (1e-9, 1e-6):
        for n in (1, 16):
            assert coherence_analytic(t, n, nm) == 1.0


def test_slow_bath_delta_for_45ns():
    # invert chi ~ delta^2 T^3/(12 tau_c) at the 1/e point
    tau_c = 1e-5
    delta = math.sqrt(12 * tau_c / (45e-9) ** 3)
    assert delta == pytest.approx(1.15e9, rel=0.01)
    nm = NoiseModel(delta, tau_c)
    assert t2_time(1, nm) == pytest.approx(45e-9, rel=0.01)
    assert chi_cpmg(45e-9, 1, nm) == pytest.approx(1.0, rel=0.01)


def test_coherence_monotone_in_time_and_pulses():
    nm = MID
    times = np.geomspace(5e-9, 2e-6, 40)
    for n in (1, 4, 16):
        w = [coherence_analytic(t, n, nm) for t in times]
        assert all(b <= a + 1e-12 for a, b in zip(w, w[1:]))
    for t in (50e-9, 400e-9):
        w_n = [coherence_analytic(t, n, nm) for n in (1, 2, 4, 8, 16, 64)]
        assert all(b >= a - 1e-12 for a, b in zip(w_n, w_n[1:]))


def test_slow_bath_scaling_exponent():
    ns = np.array([1, 4, 16, 64])
    t2s = np.array([t2_time(int(n), SLOW) for n in ns])
    slope = np.polyfit(np.log(ns), np.log(t2s), 1)[0]
    assert slope == pytest.approx(2.0 / 3.0, abs=0.02)


# --- OU sampling ------------------------------------------------------------------

def test_ou_joint_sampler_statistics():
    nm = NoiseModel(2e6, 1e-6)
    rng = substream(99, 1)
    n = 200_000
    d0 = rng.normal(0, nm.delta, n)
    d1, integral = ou_value_and_integral(d0, 0.7e-6, nm, rng)
    h, tau = 0.7e-6, nm.tau_c
    e = math.exp(-h / tau)
    assert np.std(d1) == pytest.approx(nm.delta, rel=0.01)
    assert np.corrcoef(d0, d1)[0, 1] == pytest.approx(e, abs=0.01)
    var_i = nm.delta**2 * (2 * tau * (h - tau * (1 - e)) - (tau * (1 - e))**2) \
        + (nm.delta * tau * (1 - e))**2      # total = conditional + from d0
    assert np.var(integral) == pytest.approx(var_i, rel=0.02)


def test_mc_matches_analytic_three_regimes():
    for nm in (SLOW, MID, FAST):
        for n in (1, 8):
            t2n = t2_time(n, nm)
            times = np.geomspace(t2n / 10, 2.5 * t2n, 12)
            wa = np.array([coherence_analytic(t, n, nm) for t in times])
            wm = mc_coherence(times, n, nm, trajectories=10_000, seed=123)
            assert np.max(np.abs(wa - wm)) <= 0.02


def test_mc_tighter_at_1e5_trajectories():
    t2n = t2_time(1, MID)
    times = np.geomspace(t2n / 8, 2 * t2n, 8)
    wa = np.array([coherence_analytic(t, 1, MID) for t in times])
    wm = mc_coherence(times, 1, MID, trajectories=100_000, seed=123)
    assert np.max(np.abs(wa - wm)) <= 0.01


def test_mc_bit_reproducible_and_seed_sensitive():
    times = np.array([30e-9, 90e-9])
    a = mc_coherence(times, 1, MID, 4096, seed=7)
    b = mc_coherence(times, 1, MID, 4096, seed=7)
    c = mc_coherence(times, 1, MID, 4096, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# --- schedule evolution --------------------------------------------------------

CAL = PulseCalibration(5e-9, 10e-9)
DRIVE = DriveParams(rabi_frequency=50e6)


def test_pi_pulse_full_flip():
    (d,) = parse_one("seq a { mw pi x read }"),
    sched = compile_schedule(d, calib=CAL)
    p = evolve(polarized_state(2), sched, DRIVE, backend="noisefree")
    assert p[0] == pytest.approx(1.0, abs=1e-9)


def test_su2_rotation_unitary():
    u = su2_rotation(7e-9, 50e6, 0.3, 12e6)
    assert np.allclose(u @ u.conj().T, np.eye(2), atol=1e-12)


def test_echo_refocuses_static_detuning():
    # near-delta pulses so only the free evolution matters
    cal = PulseCalibration(5e-15, 1e-14)
    drive = DriveParams(rabi_frequency=0.25 / 5e-15)
    (d, _) = parse_one(sequences.echo_source().split("\n\n")[0]), None
    sched = compile_schedule(d, {"tau": 50e-9}, cal)
    p0 = evolve(polarized_state(2), sched, drive, backend="noisefree")
    drive_det = DriveParams(rabi_frequency=0.25 / 5e-15, detune_hz=5e6)
    p1 = evolve(polarized_state(2), sched, drive_det, backend="noisefree")
    assert p1[0] == pytest.approx(p0[0], abs=1e-9)


def test_evolve_preserves_density_matrix_invariants():
    (d,) = parse_one(
        "seq a { laser 5us mw pi/2 y wait 20ns mw pi x wait 20ns read }"),
    sched = compile_schedule(d, calib=CAL)
    relax = RelaxationParams(t1=25.87e-6)
    p = evolve(polarized_state(2), sched, DRIVE, relax=relax,
               noise=MID, backend="mc", trajectories=16, seed=3,
               validate=True)
    assert 0.0 <= p[0] <= 1.0


def test_wait_relaxes_toward_mixed_state():
    (d,) = parse_one("seq a { wait 26us read }"),
    sched = compile_schedule(d)
    relax = RelaxationParams(t1=26e-6)
    p = evolve(polarized_state(2), sched, DRIVE, relax=relax,
               backend="noisefree")
    # population left the bright state by (1 - e^-1)/2
    assert p[0] == pytest.approx(0.5 * (1 - math.exp(-1)), rel=1e-6)


def test_evolve_requires_read():
    (d,) = parse_one("seq a { wait 5ns }"),
    sched = compile_schedule(d)
    with pytest.raises(EngineError, match="no read events"):
        evolve(polarized_state(2), sched, DRIVE)


def test_schedule_mc_echo_near_analytic_with_finite_pulses():
    # finite 5/10 ns pulses against the ideal-pulse analytic curve; the
    # mismatch is a real, reported effect and stays small for a mild bath
    nm = NoiseModel(2e7, 3e-8)
    taus = np.array([20e-9, 60e-9, 150e-9])
    echo_src, alt_src = sequences.echo_source().split("\n\n")
    w_est = []
    for tau in taus:
        sched_a = compile_schedule(parse_one(echo_src), {"tau": tau}, CAL)
        sched_b = compile_schedule(parse_one(alt_src), {"tau": tau}, CAL)
        pa = evolve(polarized_state(2), sched_a, DRIVE, noise=nm,
                    backend="mc", trajectories=3000, seed=11)
        pb = evolve(polarized_state(2), sched_b, DRIVE, noise=nm,
                    backend="mc", trajectories=3000, seed=11)
        w_est.append(pa[0] - pb[0])
    wa = np.array([coherence_analytic(2 * t, 1, nm) for t in taus])
    assert np.max(np.abs(np.array(w_est) - wa)) < 0.08


# --- spin-lock rate ---------------------------------------------------------------

def test_t1rho_zero_lock_is_free_dephasing_limit():
    nm = NoiseModel(1e8, 1e-7)
    t1 = 25.87e-6
    assert t1rho_rate(nm, 0.0, t1) == pytest.approx(
        nm.delta**2 * nm.tau_c + 1 / (2 * t1))


def test_t1rho_infinite_lock_reaches_t1_floor():
    nm = NoiseModel(1e8, 1e-7)
    t1 = 25.87e-6
    assert t1rho_rate(nm, 1e15, t1) == pytest.approx(1 / (2 * t1), rel=1e-4)


def test_t1rho_monotone_in_lock_frequency():
    nm = NoiseModel(1e8, 1e-7)
    rates = [t1rho_rate(nm, f, 25.87e-6) for f in np.geomspace(1e5, 1e9, 20)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))


def test_t1rho_with_calibrated_bath_lands_in_observed_band():
    cal = calibrate_noise(45e-9, 0.79)
    t1 = 25.87e-6
    t1rho = 1.0 / t1rho_rate(cal.noise, 300e6, t1)
    assert t1rho > 100 * 45e-9
    assert t1rho <= 2 * t1
    assert 5e-6 <= t1rho <= 26e-6


# --- calibration -------------------------------------------------------------------

def test_calibrate_self_consistent_at_two_thirds():
    cal = calibrate_noise(45e-9, 0.667)
    assert cal.feasible
    assert cal.achieved_s == pytest.approx(0.667, abs=0.02)
    assert cal.t2_times[0] == pytest.approx(45e-9, rel=0.05)


def test_calibrate_steep_target_reports_ceiling():
    cal = calibrate_noise(45e-9, 0.79)
    assert not cal.feasible
    assert cal.achieved_s == pytest.approx(2.0 / 3.0, abs=0.02)
    assert cal.noise.tau_c > cal.t2_times[0]


def test_calibrate_rejects_out_of_band_target():
    with pytest.raises(CalibrationError, match="outside supported"):
        calibrate_noise(45e-9, 0.3)


def test_validate_density_matrix_catches_bad_trace():
    rho = np.diag([0.7, 0.6]).astype(complex)
    with pytest.raises(EngineError, match="trace"):
        validate_density_matrix(rho)
