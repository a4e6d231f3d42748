import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sstft.demux import (CalibrationError, ChannelEnvelope, DemuxError, FttmCalibration, Pulse,
                         Spectrogram, calibrate, complete_periods, default_guard,
                         demodulate_channel, detect_pulses, envelope_rise_time, reconstruct,
                         splice_spectrogram, suppress_boundary_ghosts)
from sstft.freq_plan import map_frequency_to_channel, three_channel_config
from sstft.oracle_stft import ridge_extract
from sstft.photonic_sim import SweepSchedule, noise_sigma, simulate_pd_output
from sstft.siggen import Lfm, SutSpec, Tone, Waveform

FS = 5e9
CFG = three_channel_config()
SCHED = SweepSchedule.from_config(CFG)


def _gauss_env(centers, fwhm, n_periods=3, amp=1.0):
    t = np.arange(int(n_periods * 4e-6 * FS)) / FS
    x = np.zeros_like(t)
    sig = fwhm / 2.3548200450309493
    for p in range(n_periods):
        for c in centers:
            x += amp * np.exp(-0.5 * ((t - p * 4e-6 - c) / sig) ** 2)
    return ChannelEnvelope(1, Waveform(FS, 0.0, x), 0.56e9)


# -- demodulation -------------------------------------------------------------

def test_rect_pulse_demodulation():
    t = np.arange(20_000) / FS
    rect = ((t >= 1e-6) & (t < 2e-6)).astype(float)
    pd = Waveform(FS, 0.0, rect * np.cos(2 * np.pi * 0.56e9 * t + 0.3))
    env = demodulate_channel(pd, 0.56e9, 100e6).envelope.samples
    inside = (t > 1.05e-6) & (t < 1.95e-6)
    outside = (t < 0.95e-6) | (t > 2.05e-6)
    assert np.all(np.abs(env[inside] - 1) < 0.01)
    assert np.all(env[outside] < 0.01)
    # group delay removed: half-level crossing lands on the rect edge
    rise = np.argmax(env >= 0.5)
    assert abs(rise - 5000) <= 2


def test_adjacent_subcarrier_leakage():
    t = np.arange(40_000) / FS
    pd = Waveform(FS, 0.0, np.cos(2 * np.pi * 0.76e9 * t))
    matched = demodulate_channel(pd, 0.76e9, 60e6).envelope.samples[5000:-5000].max()
    leaked = demodulate_channel(pd, 0.56e9, 60e6, subcarrier_step=0.2e9).envelope.samples[5000:-5000].max()
    assert leaked < 0.01 * matched


def test_zero_input_zero_envelope():
    env = demodulate_channel(Waveform(FS, 0.0, np.zeros(1000)), 0.56e9, 100e6)
    assert not env.envelope.samples.any()


def test_cutoff_above_half_spacing_rejected():
    with pytest.raises(DemuxError, match="leak"):
        demodulate_channel(Waveform(FS, 0.0, np.zeros(100)), 0.56e9, 120e6, subcarrier_step=0.2e9)
    with pytest.raises(DemuxError, match="Nyquist"):
        demodulate_channel(Waveform(FS, 0.0, np.zeros(100)), 2.45e9, 100e6)


def test_envelope_rise_time():
    assert 3e-9 < envelope_rise_time(100e6, FS) < 6e-9


# -- pulse detection ----------------------------------------------------------

def test_single_gaussian_centroid():
    pulses = detect_pulses(_gauss_env([1.7e-6], 20e-9), SCHED)
    assert len(pulses) == 3
    for i, p in enumerate(pulses):
        assert p.period_index == i
        assert abs(p.tau - 1.7e-6) <= 1 / FS
        assert p.amplitude == pytest.approx(1.0, abs=1e-3)
        assert p.fwhm == pytest.approx(20e-9, rel=0.02)


def test_valley_split():
    assert len(detect_pulses(_gauss_env([1e-6, 1.1e-6], 20e-9, 1), SCHED)) == 2
    # touching pulses 0.8 FWHM apart merge into one
    assert len(detect_pulses(_gauss_env([1e-6, 1.016e-6], 20e-9, 1), SCHED)) == 1


def test_idle_window_ignored():
    cfg = three_channel_config(idle_time=1e-6)
    sched = SweepSchedule.from_config(cfg)
    t = np.arange(int(10e-6 * FS)) / FS
    x = np.exp(-0.5 * ((t - 4.5e-6) / 10e-9) ** 2) + np.exp(-0.5 * ((t - 6e-6) / 10e-9) ** 2)
    pulses = detect_pulses(ChannelEnvelope(1, Waveform(FS, 0.0, x), 0.56e9), sched)
    assert [(p.period_index, round(p.tau * 1e9)) for p in pulses] == [(1, 1000)]


def test_noise_only_gives_no_pulses():
    rng = np.random.default_rng(5)
    sigma = noise_sigma(CFG, 1.0)
    pd = Waveform(FS, 0.0, sigma * rng.standard_normal(int(40e-6 * FS)))
    env = demodulate_channel(pd, 0.56e9, 100e6)
    assert detect_pulses(env, SCHED) == []


def test_threshold_validation():
    with pytest.raises(ValueError):
        detect_pulses(_gauss_env([1e-6], 20e-9), SCHED, threshold_rel=1.0)


# -- calibration --------------------------------------------------------------

def _ref_pulses(tau, n_periods=10, channel=1, jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return [Pulse(channel, p, tau + jitter * rng.standard_normal(), 1.0, 25e-9) for p in range(n_periods)]


def test_calibration_examples():
    tau_ref = 3.008e-6
    cal = calibrate(_ref_pulses(tau_ref), 3e9, CFG)
    assert cal.sign == 1
    assert cal.offset == pytest.approx(3e9 - 1e15 * tau_ref)
    assert cal.frequency(tau_ref, 1) == pytest.approx(3e9, abs=1e-3)
    assert cal.frequency(tau_ref + 60e-9, 1) == pytest.approx(3.06e9, abs=1e-3)
    assert cal.frequency(tau_ref, 3) == pytest.approx(11e9, abs=1e-3)
    assert cal.reference_periods == 10


def test_calibration_picks_the_stable_pulse():
    pulses = _ref_pulses(3.008e-6)
    # a wandering pulse in the same channel must not win
    pulses += [Pulse(1, p, 0.5e-6 + p * 0.2e-6, 2.0, 25e-9) for p in range(10)]
    cal = calibrate(pulses, 3e9, CFG)
    assert cal.reference_tau == pytest.approx(3.008e-6)


def test_calibration_tie_goes_to_nominal_position():
    # a steady SUT tone at 1.5 GHz recurs as often as the 3-GHz reference
    pulses = _ref_pulses(1.5e-6) + _ref_pulses(3.01e-6)
    cal = calibrate(pulses, 3e9, CFG)
    assert cal.reference_tau == pytest.approx(3.01e-6)
    assert cal.frequency(1.5e-6, 1) == pytest.approx(1.49e9)


def test_calibration_descending_and_auto():
    cfg = three_channel_config(sweep_orientation="descending")
    tau_ref = 1.0e-6   # f = f_s - k*tau -> 3 GHz at tau = 1 us
    cal = calibrate(_ref_pulses(tau_ref), 3e9, cfg)
    assert cal.sign == -1 and cal.offset == pytest.approx(4e9)
    auto = calibrate(_ref_pulses(tau_ref), 3e9, CFG, orientation="auto")
    assert auto.sign == -1
    asc = calibrate(_ref_pulses(3e-6), 3e9, CFG, orientation="auto")
    assert asc.sign == 1


def test_calibration_errors():
    with pytest.raises(CalibrationError, match="no pulses"):
        calibrate(_ref_pulses(3e-6, channel=2), 3e9, CFG)
    with pytest.raises(CalibrationError, match="no stable"):
        calibrate(_ref_pulses(3e-6, jitter=0.5e-6, seed=2), 3e9, CFG)
    with pytest.raises(CalibrationError, match="no stable"):
        calibrate(_ref_pulses(3e-6, n_periods=3), 3e9, CFG, n_periods=10)


@pytest.fixture(scope="module")
def tone_run():
    spec = SutSpec((Tone(5.03e9), Tone(9.41e9, 0.7)), 12 * 4e-6)
    pd = simulate_pd_output(spec, CFG, seed=4)
    return pd, reconstruct(pd, CFG)


@settings(max_examples=6, deadline=None)
@given(st.integers(1, 5))
def test_calibration_invariant_under_period_shift(tone_run, m):
    pd, rec = tone_run
    period_samples = int(round(CFG.total_period * FS))
    # relabel time: same samples, start m periods later
    relabeled = reconstruct(Waveform(FS, m * CFG.total_period, pd.samples), CFG)
    # drop the first m periods
    cropped = reconstruct(Waveform(FS, 0.0, pd.samples[m * period_samples:]), CFG)

    def mapped(r, shift):
        c = r.calibration
        return {(p.channel, p.period_index + shift): c.pulse_frequency(p) for p in r.pulses
                if 1 <= p.period_index + shift < 11}

    base = mapped(rec, 0)
    # cropping changes which reference pulses enter the median, so allow
    # the spread of the reference position itself
    crop_tol = CFG.chirp_rate * max(rec.calibration.reference_jitter,
                                    cropped.calibration.reference_jitter)
    for other, tol in ((mapped(relabeled, -m), 1.0), (mapped(cropped, m), crop_tol)):
        common = set(base) & set(other)
        assert len(common) >= 2 * (10 - m)
        for key in common:
            assert other[key] == pytest.approx(base[key], abs=tol)


def test_label_correctness_and_round_trip(tone_run):
    _, rec = tone_run
    cal = rec.calibration
    for f_true in (5.03e9, 9.41e9):
        n = map_frequency_to_channel(f_true, CFG)["channel"]
        near = [p for p in rec.pulses if abs(cal.pulse_frequency(p) - f_true) < 100e6]
        assert near and all(p.channel == n for p in near)
        err = np.median([cal.pulse_frequency(p) for p in near]) - f_true
        bound = max(CFG.gain_fwhm, CFG.chirp_rate * envelope_rise_time(CFG.demod_cutoff, FS))
        assert abs(err) <= bound


# -- splicing -----------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_splice_conservation(seed):
    rng = np.random.default_rng(seed)
    cfg = three_channel_config(idle_time=0.2e-6)
    n = int(3 * cfg.total_period * FS)
    envs = [ChannelEnvelope(c, Waveform(FS, 0.0, rng.random(n)), cfg.subcarrier(c)) for c in (1, 2, 3)]
    cal = FttmCalibration(1, 0.0, 4e9, 1e15, 3)
    step = cfg.chirp_rate / FS
    spec = splice_spectrogram(envs, cal, cfg, freq_step=step)
    assert spec.shape == (3, 60_000)
    per = int(round(cfg.total_period * FS))
    act = int(round(cfg.sweep_period * FS))
    for p in range(3):
        want = sum(float(np.sum(ce.envelope.samples[p * per:p * per + act] ** 2)) for ce in envs)
        assert float(np.sum(spec.magnitudes[p] ** 2)) == pytest.approx(want, rel=1e-9)
    assert spec.time_bins == pytest.approx((np.arange(3) + 0.5) * cfg.total_period)


def test_single_tone_ridge(tone_run):
    _, rec = tone_run
    spec = rec.spectrogram
    assert spec.shape == (12, 1200)
    peaks = ridge_extract(spec, 3, 0.2)
    cols_with_tone = {c for c, f, _ in peaks if abs(f - 5.03e9) <= 20e6}
    assert cols_with_tone == set(range(12))


def test_lfm_diagonal_ridge():
    spec_in = SutSpec((Lfm(0.1e9, 0.9e9, 80e-6),), 80e-6)   # 40 MHz per 4-us column
    rec = reconstruct(simulate_pd_output(spec_in, CFG, seed=2), CFG)
    ridge = {}
    for c, f, _ in ridge_extract(rec.spectrogram, 2, 0.2):
        if abs(f - 3e9) > 100e6:
            ridge.setdefault(c, f)
    cols = sorted(ridge)
    slope = np.polyfit(cols, [ridge[c] for c in cols], 1)[0]
    assert slope == pytest.approx(40e6, rel=0.02)
    for c in cols:
        assert abs(ridge[c] - (0.1e9 + 40e6 * (c + 0.5))) <= 60e6


def test_complete_periods():
    assert list(complete_periods(0.0, int(12e-6 * FS), FS, 4e-6, 4e-6)) == [0, 1, 2]
    assert list(complete_periods(1e-6, int(12e-6 * FS), FS, 4e-6, 4e-6)) == [1, 2]
    assert complete_periods(0.0, 100, FS, 4e-6, 4e-6).size == 0


def test_splice_needs_a_full_period():
    env = [ChannelEnvelope(1, Waveform(FS, 0.0, np.ones(100)), 0.56e9)]
    with pytest.raises(DemuxError):
        splice_spectrogram(env, FttmCalibration(1, 0.0, 4e9, 1e15, 3), CFG)


# -- ghosts -------------------------------------------------------------------

def _ghost_run(idle):
    cfg = three_channel_config(idle_time=idle)
    pd = simulate_pd_output(SutSpec((Tone(7.99e9),), 12 * cfg.total_period), cfg, seed=1)
    return cfg, reconstruct(pd, cfg).spectrogram


def _mag_in(spec, lo, hi):
    m = (spec.freq_bins >= lo) & (spec.freq_bins < hi)
    return spec.magnitudes[1:-1, m].max(axis=1)


def test_suppress_boundary_ghosts():
    cfg, spec = _ghost_run(0.0)
    guard = default_guard(cfg)
    low_edge = (4.0e9, 4.0e9 + guard)   # opposite extreme of channel 2
    assert _mag_in(spec, *low_edge).min() > 0.1
    clean = suppress_boundary_ghosts(spec, guard, cfg)
    assert _mag_in(clean, *low_edge).max() == 0.0
    true = (7.97e9, 8.0e9)
    assert np.array_equal(_mag_in(clean, *true), _mag_in(spec, *true))
    assert _mag_in(clean, *true).min() > 0.5


def test_suppress_leaves_interior_alone(tone_run):
    _, rec = tone_run
    spec = rec.spectrogram
    out = suppress_boundary_ghosts(spec, default_guard(CFG), CFG)
    interior = (spec.freq_bins % 4e9 > 100e6) & (spec.freq_bins % 4e9 < 3.9e9)
    assert np.array_equal(out.magnitudes[:, interior], spec.magnitudes[:, interior])
    assert suppress_boundary_ghosts(spec, 0.0, CFG) is spec


def test_default_guard():
    assert default_guard(CFG) == pytest.approx(1.5 * 1e15 * np.hypot(20e-9, 10e-9))
    assert default_guard(CFG, 30e-9) == pytest.approx(45e6)


# -- spectrogram type ---------------------------------------------------------

def test_spectrogram_validation():
    with pytest.raises(ValueError, match="shape"):
        Spectrogram([0, 1], [0, 1, 2], np.zeros((2, 2)))
    with pytest.raises(ValueError, match="increasing"):
        Spectrogram([1, 0], [0, 1], np.zeros((2, 2)))
    with pytest.raises(ValueError, match=">= 0"):
        Spectrogram([0, 1], [0, 1], -np.ones((2, 2)))
