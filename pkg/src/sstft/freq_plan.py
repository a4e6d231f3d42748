"""
Three-comb frequency plan for the channelized analog STFT.

A frequency-sweep comb (FSR delta1), a pump comb (FSR delta2) and a reference
comb (FSR delta3) are laid out so that channel n of the SBS gain covers the
SUT band [(n-1)*f_s, n*f_s) and its amplified sideband beats against the
reference comb at subcarrier f_sc,n after photodetection.

All frequencies are in Hz, times in seconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Sequence, Tuple

ORIENTATIONS = ("ascending", "descending")
_REL_TOL = 1e-9


class ConfigError(ValueError):
    """Raised when a SystemConfig violates one of its invariants."""


@dataclass(frozen=True)
class SystemConfig:
    n_channels: int
    sweep_bandwidth: float
    sweep_period: float
    chirp_rate: float
    pump_base_freq: float
    subcarrier_min: float
    subcarrier_step: float
    reference_freq: float
    sample_rate: float
    idle_time: float = 0.0
    brillouin_shift: float = 10.8e9
    gain_fwhm: float = 20e6
    gain_peak_db: float = 20.0
    phonon_lifetime: float = 10e-9
    noise_snr_db: float | None = 30.0
    sweep_orientation: str = "ascending"

    def __post_init__(self):
        problems = config_problems(self)
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def total_period(self) -> float:
        return self.sweep_period + self.idle_time

    @property
    def analysis_band(self) -> float:
        return self.n_channels * self.sweep_bandwidth

    def subcarrier(self, channel: int) -> float:
        return self.subcarrier_min + (channel - 1) * self.subcarrier_step

    @property
    def demod_cutoff(self) -> float:
        """Default low-pass cutoff used to separate subcarriers."""
        return self.subcarrier_step / 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SystemConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def config_problems(cfg: SystemConfig) -> List[str]:
    """Return the list of invariant violations of ``cfg`` (empty when valid)."""
    out = []
    if not isinstance(cfg.n_channels, int) or isinstance(cfg.n_channels, bool) or cfg.n_channels < 1:
        out.append(f"n_channels must be an integer >= 1, got {cfg.n_channels!r}")
        return out
    positive = ("sweep_bandwidth", "sweep_period", "chirp_rate", "pump_base_freq",
                "subcarrier_min", "subcarrier_step", "reference_freq", "sample_rate",
                "brillouin_shift", "gain_fwhm")
    for name in positive:
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            out.append(f"{name} must be a finite positive number, got {v!r}")
    if cfg.idle_time < 0:
        out.append(f"idle_time must be >= 0, got {cfg.idle_time!r}")
    if cfg.gain_peak_db < 0:
        out.append(f"gain_peak_db must be >= 0, got {cfg.gain_peak_db!r}")
    if cfg.phonon_lifetime < 0:
        out.append(f"phonon_lifetime must be >= 0, got {cfg.phonon_lifetime!r}")
    if cfg.sweep_orientation not in ORIENTATIONS:
        out.append(f"sweep_orientation must be one of {ORIENTATIONS}, got {cfg.sweep_orientation!r}")
    if out:
        return out
    kt = cfg.chirp_rate * cfg.sweep_period
    if abs(kt - cfg.sweep_bandwidth) > _REL_TOL * cfg.sweep_bandwidth:
        out.append(f"sweep bandwidth f_s={cfg.sweep_bandwidth:g} Hz must equal "
                   f"chirp_rate*sweep_period={kt:g} Hz")
    highest = cfg.subcarrier(cfg.n_channels) + cfg.subcarrier_step / 2
    if not cfg.sample_rate > 2 * highest:
        out.append(f"sample_rate {cfg.sample_rate:g} Hz must exceed 2*{highest:g} Hz "
                   "(Nyquist for the highest subcarrier plus demodulation bandwidth)")
    if not 0 < cfg.reference_freq < cfg.analysis_band:
        out.append(f"reference_freq {cfg.reference_freq:g} Hz outside (0, {cfg.analysis_band:g}) Hz")
    return out


@dataclass(frozen=True)
class CombPlan:
    sweep_lines: Tuple[float, ...]
    pump_lines: Tuple[float, ...]
    reference_lines: Tuple[float, ...]
    gain_centers: Tuple[float, ...]
    channel_coverage: Tuple[Tuple[float, float], ...]
    subcarriers: Tuple[float, ...]
    fsr: Tuple[float, float, float]

    @property
    def n_channels(self) -> int:
        return len(self.sweep_lines)

    def rows(self) -> List[dict]:
        return [
            {
                "channel": n + 1,
                "sweep_line_hz": self.sweep_lines[n],
                "pump_line_hz": self.pump_lines[n],
                "reference_line_hz": self.reference_lines[n],
                "gain_center_hz": self.gain_centers[n],
                "coverage_lo_hz": self.channel_coverage[n][0],
                "coverage_hi_hz": self.channel_coverage[n][1],
                "subcarrier_hz": self.subcarriers[n],
            }
            for n in range(self.n_channels)
        ]

    def to_dict(self) -> dict:
        d1, d2, d3 = self.fsr
        return {"fsr_hz": {"sweep": d1, "pump": d2, "reference": d3}, "channels": self.rows()}


def derive_plan(config: SystemConfig) -> CombPlan:
    """Lay out the sweep, pump and reference combs from the pump anchor line.

    The pump comb line 1 (``config.pump_base_freq``) anchors everything:
    pump lines are spaced by delta2 = delta1 + f_s, sweep lines sit one
    Brillouin shift (plus (n-1)*f_s) below them, and reference lines sit a
    further f_sc,n below the gain centers.
    """
    n_ch = config.n_channels
    if n_ch < 1:
        raise ConfigError("n_channels must be >= 1")
    fs = config.sweep_bandwidth
    df = config.subcarrier_step
    if fs <= 0 or df <= 0:
        raise ConfigError("sweep bandwidth and subcarrier step must be positive")
    d1 = n_ch * fs
    d2 = d1 + fs
    d3 = d2 - df
    pump = tuple(config.pump_base_freq + i * d2 for i in range(n_ch))
    gains = tuple(p - config.brillouin_shift for p in pump)
    sweep = tuple(g - i * fs for i, g in enumerate(gains))
    subc = tuple(config.subcarrier_min + i * df for i in range(n_ch))
    ref = tuple(g - s for g, s in zip(gains, subc))
    cover = tuple((i * fs, (i + 1) * fs) for i in range(n_ch))
    return CombPlan(sweep, pump, ref, gains, cover, subc, (d1, d2, d3))


def pulse_width_estimate(config: SystemConfig) -> float:
    """Rough FTTM pulse FWHM in seconds: gain-limited width and phonon lifetime in quadrature."""
    return math.hypot(config.gain_fwhm / config.chirp_rate, config.phonon_lifetime)


def validate_plan(plan: CombPlan, config: SystemConfig) -> List[str]:
    """Check a plan against the comb algebra and simulation feasibility.

    Violations are returned as human-readable strings; an empty list means the
    plan is usable.
    """
    out = []
    n_ch = config.n_channels
    fs = config.sweep_bandwidth
    df = config.subcarrier_step

    # 1e-6 of the channel width, plus float64 rounding at optical magnitudes
    def off(a, b, scale):
        return abs(a - b) > 1e-6 * fs + 1e-12 * abs(scale)

    lists = (plan.sweep_lines, plan.pump_lines, plan.reference_lines,
             plan.gain_centers, plan.channel_coverage, plan.subcarriers)
    if any(len(x) != n_ch for x in lists):
        out.append(f"plan has {[len(x) for x in lists]} entries per table, config expects {n_ch} channels")
        return out

    d1, d2, d3 = plan.fsr
    if off(d1, n_ch * fs, d1):
        out.append(f"sweep FSR: delta1 = N*f_s = {n_ch * fs:g} Hz, plan has {d1:g} Hz")
    if off(d2, d1 + fs, d2):
        out.append(f"pump FSR: delta2 = delta1 + f_s = {d1 + fs:g} Hz, plan has {d2:g} Hz")
    if off(d3, d2 - df, d3):
        out.append(f"reference FSR: delta3 = delta2 - delta_f = {d2 - df:g} Hz, plan has {d3:g} Hz")

    for i in range(n_ch):
        n = i + 1
        p = plan.pump_lines[i]
        if i > 0 and off(p - plan.pump_lines[i - 1], d2, p):
            out.append(f"channel {n}: pump line spacing {p - plan.pump_lines[i - 1]:g} Hz != delta2")
        if i > 0 and off(plan.sweep_lines[i] - plan.sweep_lines[i - 1], d1, p):
            out.append(f"channel {n}: sweep line spacing != delta1")
        if i > 0 and off(plan.reference_lines[i] - plan.reference_lines[i - 1], d3, p):
            out.append(f"channel {n}: reference line spacing != delta3")
        if off(plan.gain_centers[i], p - config.brillouin_shift, p):
            out.append(f"channel {n}: gain center must be f_p,n - f_SBS")
        want = p - i * fs - config.brillouin_shift
        if off(plan.sweep_lines[i], want, p):
            out.append(f"channel {n}: sweep line must be f_p,n - (n-1)*f_s - f_SBS = {want:.6f} Hz")
        want_sc = config.subcarrier_min + i * df
        if off(plan.subcarriers[i], want_sc, want_sc):
            out.append(f"channel {n}: subcarrier must be f_sc,min + (n-1)*delta_f = {want_sc:g} Hz")
        want_r = p - config.brillouin_shift - config.subcarrier_min - i * df
        if off(plan.reference_lines[i], want_r, p):
            out.append(f"channel {n}: reference line must be f_p,n - f_SBS - f_sc,min - (n-1)*delta_f")

    # coverage must tile [0, N*f_s) with no gap or overlap
    edge = 0.0
    for i, (lo, hi) in enumerate(plan.channel_coverage):
        if off(lo, edge, fs) or off(hi - lo, fs, fs):
            out.append(f"channel {i + 1}: coverage [{lo:g}, {hi:g}) does not tile the band "
                       f"(expected [{i * fs:g}, {(i + 1) * fs:g}))")
        edge = hi
    if off(edge, n_ch * fs, fs):
        out.append("channel coverage does not end at the analysis bandwidth N*f_s")

    need = 1.0 / pulse_width_estimate(config)
    if df < 2 * need:
        out.append(f"subcarrier spacing below demodulation bandwidth: delta_f={df:g} Hz "
                   f"< 2 x pulse bandwidth {need:g} Hz")
    highest = plan.subcarriers[-1] + df / 2
    if not config.sample_rate > 2 * highest:
        out.append(f"Nyquist: sample_rate {config.sample_rate:g} Hz <= 2*{highest:g} Hz")
    if n_ch > 1 and not d2 > 100 * config.gain_fwhm:
        out.append(f"gain overlap: pump FSR {d2:g} Hz not > 100*gain FWHM")
    return out


def analysis_bandwidth(config: SystemConfig) -> float:
    """Instantaneous analysis bandwidth N*k*T in Hz."""
    return config.n_channels * config.chirp_rate * config.sweep_period


def channel_budget(n: int, split: Sequence[int], chirp_rate: float, period: float) -> dict:
    """Spend a channel count N = N1*N2*N3 on bandwidth, chirp rate and period.

    N1 multiplies the analysis bandwidth, N2 divides the chirp rate (finer
    frequency resolution) and N3 divides the sweep period (finer time
    resolution).
    """
    if len(split) != 3:
        raise ValueError(f"split must have three factors, got {split!r}")
    n1, n2, n3 = (int(s) for s in split)
    if min(n1, n2, n3) < 1:
        raise ValueError(f"split factors must be >= 1, got {split!r}")
    if n1 * n2 * n3 != n:
        raise ValueError(f"split {tuple(split)} multiplies to {n1 * n2 * n3}, not N={n}")
    return {"bandwidth": n1 * chirp_rate * period,
            "chirp_rate": chirp_rate / n2,
            "period": period / n3}


def map_frequency_to_channel(f: float, config: SystemConfig) -> dict:
    """Locate ``f`` in the half-open channel tiling; boundaries go to the higher channel."""
    fs = config.sweep_bandwidth
    band = config.analysis_band
    if not 0 <= f < band:
        raise ValueError(f"frequency {f:g} Hz outside analysis band [0, {band:g}) Hz")
    idx = min(int(f // fs), config.n_channels - 1)
    return {"channel": idx + 1, "offset": f - idx * fs}


def three_channel_config(**overrides) -> SystemConfig:
    """12-GHz, 3-channel configuration (4-GHz sweep, 1 GHz/us)."""
    base = dict(n_channels=3, sweep_bandwidth=4e9, sweep_period=4e-6, chirp_rate=1e15,
                pump_base_freq=193.3112e12, subcarrier_min=0.56e9, subcarrier_step=0.2e9,
                reference_freq=3e9, sample_rate=5e9)
    base.update(overrides)
    return SystemConfig(**base)


def five_channel_config(**overrides) -> SystemConfig:
    """10-GHz, 5-channel configuration (2-GHz sweep, 0.5 GHz/us)."""
    base = dict(n_channels=5, sweep_bandwidth=2e9, sweep_period=4e-6, chirp_rate=0.5e15,
                pump_base_freq=193.3112e12, subcarrier_min=1.1e9, subcarrier_step=0.2e9,
                reference_freq=1e9, sample_rate=5e9)
    base.update(overrides)
    return SystemConfig(**base)
