"""
Envelope-level model of the photodetector output.

Per channel n the swept SBS gain passes SUT frequency f_pass,n(t); a track at
f_j(t) contributes the above-baseline gain A_j*(G(f_j - f_pass,n) - 1),
normalized so an on-center unit tone peaks at 1.0.  The result is smoothed
by the phonon response, put on subcarrier f_sc,n and summed over channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .freq_plan import CombPlan, SystemConfig, validate_plan
from .siggen import FreqTrack, SignalError, SutSpec, Tone, Waveform


@dataclass(frozen=True)
class SbsGainModel:
    fwhm: float = 20e6
    peak_db: float = 20.0
    phonon_lifetime: float = 10e-9

    def __post_init__(self):
        if not self.fwhm > 0 or self.peak_db < 0 or self.phonon_lifetime < 0:
            raise ValueError(f"invalid SBS gain model {self!r}")

    @classmethod
    def from_config(cls, config: SystemConfig) -> "SbsGainModel":
        return cls(config.gain_fwhm, config.gain_peak_db, config.phonon_lifetime)

    @property
    def peak_linear(self) -> float:
        return 10 ** (self.peak_db / 20)


@dataclass(frozen=True)
class SweepSchedule:
    period: float
    idle: float
    chirp_rate: float
    orientation: str = "ascending"

    @property
    def total_period(self) -> float:
        return self.period + self.idle

    @property
    def bandwidth(self) -> float:
        return self.chirp_rate * self.period

    @classmethod
    def from_config(cls, config: SystemConfig) -> "SweepSchedule":
        return cls(config.sweep_period, config.idle_time, config.chirp_rate, config.sweep_orientation)


def sbs_gain(detuning, model: SbsGainModel):
    """Linear amplitude gain of a Lorentzian-in-dB SBS line."""
    x = 2.0 * np.asarray(detuning, dtype=float) / model.fwhm
    gain_db = model.peak_db / (1.0 + x * x)
    return 10.0 ** (gain_db / 20.0)


def gain_passed_frequency(t, channel: int, schedule: SweepSchedule, config: SystemConfig):
    """SUT frequency aligned with channel ``channel``'s gain at time ``t``.

    Scalar ``t`` returns a float or None during the idle window; array ``t``
    returns an array with NaN in idle windows.
    """
    if not 1 <= channel <= config.n_channels:
        raise ValueError(f"channel {channel} outside 1..{config.n_channels}")
    scalar = np.ndim(t) == 0
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    tau = np.mod(t, schedule.total_period)
    base = (channel - 1) * config.sweep_bandwidth
    if schedule.orientation == "descending":
        f = base + (config.sweep_bandwidth - schedule.chirp_rate * tau)
    else:
        f = base + schedule.chirp_rate * tau
    f = np.where(tau < schedule.period, f, np.nan)
    if scalar:
        v = float(f)
        return None if math.isnan(v) else v
    return f


def phonon_smooth(x: np.ndarray, lifetime: float, sample_rate: float) -> np.ndarray:
    """Causal convolution with (1/tau)*exp(-t/tau), unit DC gain."""
    if lifetime <= 0:
        return x
    a = math.exp(-1.0 / (lifetime * sample_rate))
    return signal.lfilter([1.0 - a], [1.0, -a], x)


def reference_track(config: SystemConfig, spec: SutSpec, amplitude: float = 1.0) -> FreqTrack:
    return Tone(config.reference_freq, amplitude).track("ref", spec.start_time, spec.duration)


def channel_envelopes(tracks: Sequence[FreqTrack], config: SystemConfig, t: np.ndarray) -> np.ndarray:
    """Phonon-smoothed gain envelopes, shape (n_channels, len(t))."""
    model = SbsGainModel.from_config(config)
    sched = SweepSchedule.from_config(config)
    norm = model.peak_linear - 1.0
    env = np.zeros((config.n_channels, t.size))
    if norm <= 0 or not tracks:
        return env
    evaluated = [tr.evaluate(t) for tr in tracks]
    for n in range(1, config.n_channels + 1):
        f_pass = gain_passed_frequency(t, n, sched, config)
        active = ~np.isnan(f_pass)
        f_pass = np.where(active, f_pass, 0.0)
        acc = env[n - 1]
        for f, a in evaluated:
            live = active & (a != 0)
            if not live.any():
                continue
            g = sbs_gain(f[live] - f_pass[live], model)
            acc[live] += a[live] * (g - 1.0) / norm
        env[n - 1] = phonon_smooth(acc, model.phonon_lifetime, config.sample_rate)
    return env


def noise_sigma(config: SystemConfig, peak_amplitude: float) -> float:
    """Noise std for the configured SNR relative to a subcarrier pulse of the given peak."""
    if config.noise_snr_db is None or math.isinf(config.noise_snr_db):
        return 0.0
    power = 0.5 * peak_amplitude ** 2
    return math.sqrt(power / 10 ** (config.noise_snr_db / 10))


def simulate_pd_output(spec: SutSpec, config: SystemConfig, plan: Optional[CombPlan] = None,
                       seed: int = 0, include_reference: bool = True,
                       duration: Optional[float] = None) -> Waveform:
    """Simulated photodetector output for ``spec`` (plus the reference tone).

    The time axis starts at 0 (sweep start) and runs to the end of the SUT,
    or for ``duration`` seconds if given.
    """
    if plan is None:
        from .freq_plan import derive_plan
        plan = derive_plan(config)
    problems = [p for p in validate_plan(plan, config)
                if not p.startswith("subcarrier spacing below")]
    if problems:
        raise ValueError("plan does not validate: " + "; ".join(problems))
    tracks = list(spec.tracks())
    if include_reference:
        tracks.append(reference_track(config, spec))
    band = config.analysis_band
    for tr in tracks:
        # a linear track never attains its final breakpoint (half-open domain)
        top = tr.max_freq()
        if tr.freqs.min() < 0 or top > band or (top == band and tr.rule == "step"):
            raise SignalError(f"track {tr.component_id} leaves the analysis band [0, {band:g}) Hz")

    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, config.n_channels)
    stop = spec.start_time + spec.duration if duration is None else duration
    n = int(round(stop * config.sample_rate))
    t = np.arange(n) / config.sample_rate
    env = channel_envelopes(tracks, config, t)
    y = np.zeros(n)
    for i in range(config.n_channels):
        if not env[i].any():
            continue
        fsc = plan.subcarriers[i]
        cyc = fsc * t
        cyc -= np.floor(cyc)
        y += env[i] * np.cos(2 * np.pi * cyc + phases[i])
    peak = max((float(np.max(np.abs(tr.amplitudes))) for tr in tracks), default=1.0)
    sigma = noise_sigma(config, peak or 1.0)
    if sigma > 0:
        y += sigma * rng.standard_normal(n)
    return Waveform(config.sample_rate, 0.0, y)


def subcarrier_spectrum(waveform: Waveform, config: SystemConfig, threshold_db: float = -30.0,
                        resolution: Optional[float] = None,
                        noise_margin_db: float = 20.0) -> List[Tuple[float, float]]:
    """Subcarrier peaks of the PD power spectrum, strongest per cluster.

    A peak must lie within ``threshold_db`` of the strongest one and at least
    ``noise_margin_db`` above the median bin (the noise floor; the largest of
    a million exponential noise bins sits about 14 dB above it).  Peaks
    closer than half the subcarrier spacing are treated as one cluster
    (pulse sidebands around the same carrier).
    """
    if len(waveform) == 0:
        raise ValueError("empty waveform")
    x = waveform.samples
    fs = waveform.sample_rate
    # default: one periodogram over the whole record; the carrier lines are
    # coherent so they gain on the noise floor as the record grows
    nper = x.size if resolution is None else min(x.size, int(round(fs / resolution)))
    f, p = signal.welch(x, fs=fs, window="hann", nperseg=nper, detrend=False, scaling="spectrum")
    pmax = p.max()
    if not pmax > 0:
        return []
    df = f[1] - f[0]
    dist = max(1, int(config.subcarrier_step / 2 / df))
    height = max(pmax * 10 ** (threshold_db / 10), float(np.median(p)) * 10 ** (noise_margin_db / 10))
    idx, _ = signal.find_peaks(p, height=height, distance=dist)
    return [(float(f[i]), float(p[i])) for i in idx]
