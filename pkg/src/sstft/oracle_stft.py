"""
Digital STFT oracle, ridge picking, and scoring against ground-truth tracks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .demux import Spectrogram
from .siggen import FreqTrack, Waveform


def oracle_sample_rate(max_freq: float) -> float:
    """Round 2.05 x max_freq up to a whole GS/s (25 GS/s for 12 GHz content)."""
    return math.ceil(2.05 * max_freq / 1e9) * 1e9


def digital_stft(waveform: Waveform, window: float, hop: float, f_max: Optional[float] = None,
                 taper: str = "hann", freq_step: Optional[float] = None) -> Spectrogram:
    """Magnitude STFT with non-causal frames starting at ``start_time + i*hop``.

    Magnitudes are amplitude-calibrated (a unit-amplitude tone peaks near 1).
    Columns sit at frame centers.  With ``freq_step`` the FFT bins are
    max-pooled onto a uniform grid of that step starting at 0 Hz.
    """
    if not hop > 0:
        raise ValueError("hop must be > 0")
    fs = waveform.sample_rate
    nwin = int(round(window * fs))
    nhop = int(round(hop * fs))
    x = waveform.samples
    if nwin < 2 or nwin > x.size:
        raise ValueError(f"window of {window:g} s does not fit a {waveform.duration:g}-s waveform")
    nframes = 1 + (x.size - nwin) // nhop
    w = signal.get_window(taper, nwin, fftbins=False)
    scale = 2.0 / w.sum()
    freqs = np.fft.rfftfreq(nwin, 1.0 / fs)
    f_max = fs / 2 if f_max is None else f_max
    keep = freqs < f_max
    mags = np.empty((nframes, int(keep.sum())))
    for i in range(nframes):
        frame = x[i * nhop:i * nhop + nwin]
        mags[i] = np.abs(np.fft.rfft(frame * w))[keep] * scale
    times = waveform.start_time + (np.arange(nframes) * nhop + nwin / 2) / fs
    freqs = freqs[keep]
    if freq_step is not None:
        nb = int(math.ceil(f_max / freq_step - 1e-9))
        idx = np.clip(np.rint(freqs / freq_step).astype(np.int64), 0, nb - 1)
        pooled = np.zeros((nframes, nb))
        for i in range(nframes):
            np.maximum.at(pooled[i], idx, mags[i])
        return Spectrogram(times, np.arange(nb) * freq_step, pooled)
    return Spectrogram(times, freqs, mags)


def ridge_extract(spec: Spectrogram, max_ridges: int = 1,
                  min_rel: float = 0.1) -> List[Tuple[int, float, float]]:
    """Strongest local maxima per column, refined by a parabola through three bins.

    Returns (column, frequency, magnitude) triples.  Only maxima at or above
    ``min_rel`` times the column maximum are kept, at most ``max_ridges``
    per column, strongest first.
    """
    if max_ridges < 1:
        raise ValueError("max_ridges must be >= 1")
    out = []
    f = spec.freq_bins
    df = spec.freq_step
    for c, col in enumerate(spec.magnitudes):
        top = col.max() if col.size else 0.0
        if not top > 0:
            continue
        padded = np.concatenate(([0.0], col, [0.0]))
        idx, props = signal.find_peaks(padded, height=min_rel * top)
        idx = idx - 1
        order = np.argsort(-col[idx], kind="stable")[:max_ridges]
        for i in idx[order]:
            a = col[i - 1] if i > 0 else 0.0
            b = col[i]
            cc = col[i + 1] if i + 1 < col.size else 0.0
            den = a - 2 * b + cc
            delta = 0.5 * (a - cc) / den if den < 0 else 0.0
            delta = float(np.clip(delta, -0.5, 0.5))
            mag = b - 0.25 * (a - cc) * delta
            out.append((c, float(f[i] + delta * df), float(mag)))
    return out


@dataclass
class ComparisonReport:
    errors: List[Tuple[float, str, float]] = field(default_factory=list)  # (time, track, error Hz)
    rms_error: Optional[float] = None
    detection_rate: float = 0.0
    false_alarm_rate: float = 0.0
    n_points: int = 0
    n_matched: int = 0
    n_false: int = 0
    per_track: Dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rms_error_hz": self.rms_error,
            "detection_rate": self.detection_rate,
            "false_alarm_rate": self.false_alarm_rate,
            "n_points": self.n_points,
            "n_matched": self.n_matched,
            "n_false_alarms": self.n_false,
            "per_track": self.per_track,
            "errors": [{"time_s": t, "track": k, "error_hz": e} for t, k, e in self.errors],
        }

    def summary(self) -> str:
        rms = "n/a" if self.rms_error is None else f"{self.rms_error / 1e6:.2f} MHz"
        lines = [f"points {self.n_points}  matched {self.n_matched}  "
                 f"detection {self.detection_rate:.3f}  rms {rms}  "
                 f"false-alarm fraction {self.false_alarm_rate:.3f}"]
        for k, v in self.per_track.items():
            r = "n/a" if v["rms_error_hz"] is None else f"{v['rms_error_hz'] / 1e6:.2f} MHz"
            lines.append(f"  {k:<14} detection {v['detection_rate']:.3f}  rms {r}")
        return "\n".join(lines)


def compare(recon: Spectrogram, truth_tracks: Sequence[FreqTrack], tol: float, *,
            max_ridges: Optional[int] = None, min_rel: float = 0.2,
            reference_freq: Optional[float] = None, band: Optional[float] = None,
            channel_width: Optional[float] = None, edge_guard: float = 0.0,
            peaks: Optional[Sequence[Tuple[int, float, float]]] = None) -> ComparisonReport:
    """Score reconstruction ridges against ground truth, column by column.

    Track points are evaluated at the column times.  Points outside
    [0, band) or within ``edge_guard`` of a multiple of ``channel_width``
    are not scored.  A ridge farther than ``tol`` from every track (and from
    ``reference_freq``) counts as a false alarm.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if peaks is None:
        mr = max_ridges if max_ridges is not None else 2 * len(truth_tracks) + 2
        peaks = ridge_extract(recon, mr, min_rel)
    by_col: Dict[int, List[float]] = {}
    for c, f, _ in peaks:
        by_col.setdefault(c, []).append(f)
    report = ComparisonReport()
    track_stats = {tr.component_id: [0, []] for tr in truth_tracks}
    sq = []
    for c, t in enumerate(recon.time_bins):
        found = np.array(by_col.get(c, []))
        truth_here = []
        for tr in truth_tracks:
            fv, av = tr.evaluate(np.array([t]))
            if av[0] <= 0:
                continue
            ft = float(fv[0])
            truth_here.append(ft)
            if band is not None and not 0 <= ft < band:
                continue
            if channel_width and edge_guard > 0:
                r = ft % channel_width
                if min(r, channel_width - r) < edge_guard:
                    continue
            track_stats[tr.component_id][0] += 1
            report.n_points += 1
            if found.size == 0:
                continue
            err = float(found[np.argmin(np.abs(found - ft))] - ft)
            if abs(err) <= tol:
                report.n_matched += 1
                report.errors.append((float(t), tr.component_id, err))
                track_stats[tr.component_id][1].append(err)
                sq.append(err * err)
        if reference_freq is not None:
            truth_here.append(reference_freq)
        for f in found:
            if not truth_here or min(abs(f - ft) for ft in truth_here) > tol:
                report.n_false += 1
    n_peaks = len(peaks)
    report.detection_rate = report.n_matched / report.n_points if report.n_points else 0.0
    report.rms_error = math.sqrt(sum(sq) / len(sq)) if sq else None
    report.false_alarm_rate = report.n_false / n_peaks if n_peaks else 0.0
    for k, (npts, errs) in track_stats.items():
        report.per_track[k] = {
            "points": npts,
            "detection_rate": len(errs) / npts if npts else 0.0,
            "rms_error_hz": math.sqrt(sum(e * e for e in errs) / len(errs)) if errs else None,
        }
    return report


def ridge_fwhm(spec: Spectrogram, column: int, near: float, search: float = 100e6) -> float:
    """Full width at half maximum (Hz) of the strongest ridge within ``search`` of ``near``.

    Half-maximum crossings are linearly interpolated between bins.
    """
    col = spec.magnitudes[column]
    f = spec.freq_bins
    idx = np.flatnonzero(np.abs(f - near) <= search)
    if idx.size == 0 or not col[idx].max() > 0:
        return float("nan")
    i = idx[np.argmax(col[idx])]
    half = col[i] / 2
    lo = i
    while lo > 0 and col[lo - 1] >= half:
        lo -= 1
    hi = i
    while hi < col.size - 1 and col[hi + 1] >= half:
        hi += 1
    f_lo = f[lo] if lo == 0 else f[lo] - (col[lo] - half) / (col[lo] - col[lo - 1]) * (f[lo] - f[lo - 1])
    f_hi = f[hi] if hi == col.size - 1 else f[hi] + (col[hi] - half) / (col[hi] - col[hi + 1]) * (f[hi + 1] - f[hi])
    return float(f_hi - f_lo)
