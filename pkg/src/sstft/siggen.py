"""
Signal-under-test description, waveform synthesis and ground-truth tracks.

Every component reduces to a piecewise frequency profile (a FreqTrack).  The
synthesized waveform integrates that profile exactly, so the track is the
ground truth for the waveform by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    """Uniformly sampled real time series."""

    sample_rate: float
    start_time: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise SignalError(f"sample_rate must be > 0, got {self.sample_rate!r}")
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise SignalError("samples must be one-dimensional")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate


@dataclass(frozen=True)
class FreqTrack:
    """Instantaneous-frequency breakpoints of one component.

    ``rule`` is ``"linear"`` (frequency and amplitude interpolated between
    breakpoints) or ``"step"`` (value of the breakpoint at or before t, i.e.
    right-continuous).  The domain is ``[times[0], times[-1])``.
    """

    component_id: str
    times: np.ndarray
    freqs: np.ndarray
    amplitudes: np.ndarray
    rule: str = "linear"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        f = np.asarray(self.freqs, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        if not (t.shape == f.shape == a.shape) or t.size < 2:
            raise SignalError(f"track {self.component_id}: need >= 2 matching breakpoints")
        if np.any(np.diff(t) <= 0):
            raise SignalError(f"track {self.component_id}: times must be strictly increasing")
        if np.any(f < 0):
            raise SignalError(f"track {self.component_id}: negative frequency")
        if self.rule not in ("linear", "step"):
            raise SignalError(f"unknown interpolation rule {self.rule!r}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "amplitudes", a)

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def stop(self) -> float:
        return float(self.times[-1])

    def evaluate(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Return (frequency, amplitude) at times ``t``; amplitude is 0 outside the domain."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.times[0]) & (t < self.times[-1])
        if self.rule == "linear":
            f = np.interp(t, self.times, self.freqs)
            a = np.interp(t, self.times, self.amplitudes)
        else:
            idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 1)
            f = self.freqs[idx]
            a = self.amplitudes[idx]
        return f, np.where(inside, a, 0.0)

    def max_freq(self) -> float:
        return float(self.freqs.max() if self.rule == "linear" else self.freqs[:-1].max())

    def phase_cycles(self, t: np.ndarray) -> np.ndarray:
        """Accumulated phase in cycles, integral of the frequency profile from times[0]."""
        tb, fb = self.times, self.freqs
        seg_dt = np.diff(tb)
        if self.rule == "linear":
            seg_cycles = 0.5 * (fb[:-1] + fb[1:]) * seg_dt
        else:
            seg_cycles = fb[:-1] * seg_dt
        cum = np.concatenate(([0.0], np.cumsum(seg_cycles)))
        idx = np.clip(np.searchsorted(tb, t, side="right") - 1, 0, tb.size - 2)
        u = t - tb[idx]
        if self.rule == "linear":
            slope = (fb[idx + 1] - fb[idx]) / seg_dt[idx]
            return cum[idx] + fb[idx] * u + 0.5 * slope * u * u
        return cum[idx] + fb[idx] * u

    def rows(self):
        for t, f, a in zip(self.times, self.freqs, self.amplitudes):
            yield self.component_id, float(t), float(f), float(a)


# -- component specs ---------------------------------------------------------
#
# ``start`` on each component is an offset from SutSpec.start_time.


@dataclass(frozen=True)
class Tone:
    freq: float
    amplitude: float = 1.0
    start: float = 0.0
    duration: Optional[float] = None  # None: lasts the whole SutSpec

    kind = "tone"

    def track(self, cid, t0, total):
        dur = total - self.start if self.duration is None else self.duration
        t = t0 + self.start
        return FreqTrack(cid, [t, t + dur], [self.freq, self.freq],
                         [self.amplitude, self.amplitude], "step")


@dataclass(frozen=True)
class Lfm:
    f_start: float
    f_stop: float
    duration: float
    amplitude: float = 1.0
    start: float = 0.0

    kind = "lfm"

    def track(self, cid, t0, total):
        t = t0 + self.start
        return FreqTrack(cid, [t, t + self.duration], [self.f_start, self.f_stop],
                         [self.amplitude, self.amplitude], "linear")


@dataclass(frozen=True)
class Nlfm:
    """Nonlinear chirp given as a sampled frequency profile.

    ``profile_freqs`` are sampled uniformly over ``duration`` (first sample at
    the start, last at the end) and linearly interpolated between samples.
    """

    profile_freqs: Tuple[float, ...]
    duration: float
    amplitude: float = 1.0
    start: float = 0.0

    kind = "nlfm"

    def __post_init__(self):
        object.__setattr__(self, "profile_freqs", tuple(float(f) for f in self.profile_freqs))
        if len(self.profile_freqs) < 2:
            raise SignalError("nlfm profile needs at least two samples")

    @classmethod
    def from_phase_poly(cls, coeffs: Sequence[float], duration: float, amplitude: float = 1.0,
                        start: float = 0.0, n_points: int = 401) -> "Nlfm":
        """Build from phase(t) = 2*pi*sum(c_i * t**i), t measured from the component start."""
        poly = np.polynomial.Polynomial(coeffs).deriv()
        t = np.linspace(0.0, duration, n_points)
        return cls(tuple(poly(t)), duration, amplitude, start)

    @classmethod
    def sine_warped(cls, f_start: float, f_stop: float, duration: float, depth: float = 0.5,
                    amplitude: float = 1.0, start: float = 0.0, n_points: int = 401) -> "Nlfm":
        """Monotone S-shaped chirp: f = f0 + B*(u - depth*sin(2*pi*u)/(2*pi)), u in [0, 1].

        ``depth`` in [0, 1) keeps the profile monotone; 0 gives a plain LFM.
        """
        if not 0 <= depth < 1:
            raise SignalError("depth must be in [0, 1)")
        u = np.linspace(0.0, 1.0, n_points)
        f = f_start + (f_stop - f_start) * (u - depth * np.sin(2 * np.pi * u) / (2 * np.pi))
        return cls(tuple(f), duration, amplitude, start)

    def track(self, cid, t0, total):
        t = t0 + self.start + np.linspace(0.0, self.duration, len(self.profile_freqs))
        a = np.full(t.size, self.amplitude)
        return FreqTrack(cid, t, self.profile_freqs, a, "linear")


@dataclass(frozen=True)
class Hop:
    """Frequency hopping; ``dwells`` are (start, duration, freq) with start relative to the SutSpec start."""

    dwells: Tuple[Tuple[float, float, float], ...]
    amplitude: float = 1.0

    kind = "hop"

    def __post_init__(self):
        dwells = tuple(sorted((float(s), float(d), float(f)) for s, d, f in self.dwells))
        if not dwells:
            raise SignalError("hop needs at least one dwell")
        for (s0, d0, _), (s1, _, _) in zip(dwells, dwells[1:]):
            if s0 + d0 > s1 + 1e-15:
                raise SignalError(f"hop dwells overlap at {s1!r}")
        if any(d <= 0 for _, d, _ in dwells):
            raise SignalError("hop dwell durations must be > 0")
        object.__setattr__(self, "dwells", dwells)

    def track(self, cid, t0, total):
        times, freqs, amps = [], [], []
        for i, (s, d, f) in enumerate(self.dwells):
            if times and s > times[-1] + 1e-15:
                # gap: silent breakpoint at the previous dwell's end
                pass
            elif times:
                times.pop(), freqs.pop(), amps.pop()
            times.append(t0 + s)
            freqs.append(f)
            amps.append(self.amplitude)
            times.append(t0 + s + d)
            freqs.append(f)
            amps.append(0.0)
        return FreqTrack(cid, times, freqs, amps, "step")


@dataclass(frozen=True)
class Step:
    f_start: float
    f_step: float
    dwell: float
    n_steps: int
    amplitude: float = 1.0
    start: float = 0.0

    kind = "step"

    def track(self, cid, t0, total):
        t = t0 + self.start + self.dwell * np.arange(self.n_steps + 1)
        f = self.f_start + self.f_step * np.minimum(np.arange(self.n_steps + 1), self.n_steps - 1)
        a = np.full(t.size, self.amplitude)
        return FreqTrack(cid, t, f, a, "step")


@dataclass(frozen=True)
class Profile:
    """Arbitrary piecewise profile with per-breakpoint amplitude (absolute times)."""

    times: Tuple[float, ...]
    freqs: Tuple[float, ...]
    amplitudes: Tuple[float, ...]
    rule: str = "linear"

    kind = "profile"

    def __post_init__(self):
        for name in ("times", "freqs", "amplitudes"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def track(self, cid, t0, total):
        return FreqTrack(cid, self.times, self.freqs, self.amplitudes, self.rule)


Component = Union[Tone, Lfm, Nlfm, Hop, Step, Profile]
_KINDS = {c.kind: c for c in (Tone, Lfm, Nlfm, Hop, Step, Profile)}


@dataclass(frozen=True)
class SutSpec:
    components: Tuple[Component, ...]
    duration: float
    start_time: float = 0.0
    ids: Optional[Tuple[str, ...]] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.duration > 0:
            raise SignalError(f"duration must be > 0, got {self.duration!r}")
        if self.ids is None:
            object.__setattr__(self, "ids", tuple(f"c{i}" for i in range(len(self.components))))
        elif len(self.ids) != len(self.components):
            raise SignalError("ids must match components")

    def tracks(self) -> List[FreqTrack]:
        return [c.track(cid, self.start_time, self.duration)
                for cid, c in zip(self.ids, self.components)]

    def with_components(self, extra, ids) -> "SutSpec":
        return SutSpec(self.components + tuple(extra), self.duration, self.start_time,
                       self.ids + tuple(ids))

    def to_dict(self) -> dict:
        comps = []
        for cid, c in zip(self.ids, self.components):
            d = {"type": c.kind, "id": cid}
            for k, v in c.__dict__.items():
                d[k] = [list(x) for x in v] if k == "dwells" else (list(v) if isinstance(v, tuple) else v)
            comps.append(d)
        return {"duration": self.duration, "start_time": self.start_time, "components": comps}

    @classmethod
    def from_dict(cls, data: dict) -> "SutSpec":
        allowed = {"duration", "start_time", "components"}
        extra = set(data) - allowed
        if extra:
            raise SignalError(f"unknown SUT keys: {sorted(extra)}")
        comps, ids = [], []
        for i, raw in enumerate(data.get("components", [])):
            raw = dict(raw)
            kind = raw.pop("type")
            ids.append(str(raw.pop("id", f"c{i}")))
            if kind not in _KINDS:
                raise SignalError(f"unknown component type {kind!r}")
            if kind == "nlfm" and "phase_poly" in raw:
                comps.append(Nlfm.from_phase_poly(raw.pop("phase_poly"), **raw))
                continue
            if kind == "hop":
                raw["dwells"] = tuple(tuple(d) for d in raw["dwells"])
            comps.append(_KINDS[kind](**raw))
        return cls(tuple(comps), data["duration"], data.get("start_time", 0.0), tuple(ids))

    @classmethod
    def from_json(cls, path) -> "SutSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def synthesize(spec: SutSpec, sample_rate: float) -> Tuple[Waveform, List[FreqTrack]]:
    """Sample the SUT on [start_time, start_time + duration).

    Components are summed in declaration order; each one carries the
    continuous phase 2*pi*integral(f dt) of its own track.
    """
    tracks = spec.tracks()
    for tr in tracks:
        fmax = tr.max_freq()
        if not sample_rate > 2 * fmax:
            raise SignalError(f"component {tr.component_id}: frequency {fmax:g} Hz violates "
                              f"Nyquist at sample_rate {sample_rate:g} Hz")
    n = int(round(spec.duration * sample_rate))
    t = spec.start_time + np.arange(n) / sample_rate
    out = np.zeros(n)
    for tr in tracks:
        out += render_track(tr, t)
    return Waveform(sample_rate, spec.start_time, out), tracks


def render_track(track: FreqTrack, t: np.ndarray) -> np.ndarray:
    lo, hi = np.searchsorted(t, [track.start, track.stop])
    y = np.zeros(t.size)
    if hi <= lo:
        return y
    ts = t[lo:hi]
    _, amp = track.evaluate(ts)
    cyc = track.phase_cycles(ts)
    cyc -= np.floor(cyc)
    y[lo:hi] = amp * np.cos(2 * np.pi * cyc)
    return y


def _attenuation(if_freq, if_band):
    if not if_band:
        return np.ones_like(np.asarray(if_freq, dtype=float))
    excess = np.maximum(np.asarray(if_freq, dtype=float) - if_band["cutoff"], 0.0)
    return 10 ** (-if_band["rolloff_db_per_ghz"] * excess / 1e9 / 20)


def _sideband(track: FreqTrack, lo_freq: float, sign: int, if_band, n_dense: int = 64) -> Profile:
    t, f, a = track.times, track.freqs, track.amplitudes
    if if_band and track.rule == "linear":
        # densify so the dB-linear rolloff is followed between breakpoints
        tt = np.unique(np.concatenate([np.linspace(t0, t1, n_dense + 1)
                                       for t0, t1 in zip(t[:-1], t[1:])]))
        f, a = np.interp(tt, t, f), np.interp(tt, t, a)
        t = tt
    return Profile(tuple(t), tuple(lo_freq + sign * f), tuple(a * _attenuation(f, if_band)), track.rule)


def upconvert(spec: SutSpec, lo_freq: float, if_band: Optional[dict] = None) -> SutSpec:
    """Double-sideband mixing: every component f(t) becomes lo+f(t) and lo-f(t).

    Each sideband keeps the IF amplitude (optionally attenuated by a linear-in-dB
    rolloff above ``if_band["cutoff"]``).  A 0-Hz tone yields one tone at the LO.
    """
    comps, ids = [], []
    for tr, comp in zip(spec.tracks(), spec.components):
        if tr.max_freq() >= lo_freq:
            raise SignalError(f"component {tr.component_id}: lower sideband of {tr.max_freq():g} Hz "
                              f"crosses 0 Hz with LO {lo_freq:g} Hz")
        if isinstance(comp, Tone) and comp.freq == 0:
            g = float(_attenuation(0.0, if_band))
            comps.append(Tone(lo_freq, comp.amplitude * g, comp.start, comp.duration))
            ids.append(f"{tr.component_id}@lo")
            continue
        if isinstance(comp, Tone):
            g = float(_attenuation(comp.freq, if_band))
            for sign, tag in ((1, "+"), (-1, "-")):
                comps.append(Tone(lo_freq + sign * comp.freq, comp.amplitude * g, comp.start, comp.duration))
                ids.append(f"{tr.component_id}{tag}")
            continue
        if isinstance(comp, Lfm) and not if_band:
            for sign, tag in ((1, "+"), (-1, "-")):
                comps.append(Lfm(lo_freq + sign * comp.f_start, lo_freq + sign * comp.f_stop,
                                 comp.duration, comp.amplitude, comp.start))
                ids.append(f"{tr.component_id}{tag}")
            continue
        for sign, tag in ((1, "+"), (-1, "-")):
            comps.append(_sideband(tr, lo_freq, sign, if_band))
            ids.append(f"{tr.component_id}{tag}")
    return SutSpec(tuple(comps), spec.duration, spec.start_time, tuple(ids))


def instantaneous_frequency(tracks: Sequence[FreqTrack], t: float) -> List[Tuple[str, float, float]]:
    """(component id, frequency, amplitude) of every track active at time ``t``."""
    out = []
    for tr in tracks:
        f, a = tr.evaluate(np.array([t]))
        if a[0] > 0:
            out.append((tr.component_id, float(f[0]), float(a[0])))
    return out


def combine(*specs: SutSpec) -> SutSpec:
    """Merge several specs on a common time window (ids are prefixed to stay unique)."""
    start = min(s.start_time for s in specs)
    stop = max(s.start_time + s.duration for s in specs)
    comps, ids = [], []
    for k, s in enumerate(specs):
        for cid, c in zip(s.ids, s.components):
            if isinstance(c, Tone) and c.duration is None:
                c = Tone(c.freq, c.amplitude, s.start_time - start + c.start, s.duration - c.start)
            elif not isinstance(c, Profile) and hasattr(c, "start"):
                c = _shift(c, s.start_time - start)
            elif isinstance(c, Hop):
                c = Hop(tuple((d0 + s.start_time - start, d1, f) for d0, d1, f in c.dwells), c.amplitude)
            comps.append(c)
            ids.append(f"s{k}.{cid}" if len(specs) > 1 else cid)
    return SutSpec(tuple(comps), stop - start, start, tuple(ids))


def _shift(c, dt):
    if dt == 0:
        return c
    d = dict(c.__dict__)
    d["start"] = d["start"] + dt
    return type(c)(**d)
