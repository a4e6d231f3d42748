"""
On-disk formats: SSTFT-WF1 waveforms, spectrogram/pulse/track CSVs, run manifests.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .demux import Pulse, Spectrogram
from .siggen import FreqTrack, Waveform

MAGIC = b"SSTFTWF1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIddQ")


class FormatError(ValueError):
    pass


def write_waveform(path, wf: Waveform) -> None:
    samples = np.asarray(wf.samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, float(wf.sample_rate),
                              float(wf.start_time), samples.size))
        fh.write(samples.tobytes())


def read_waveform(path) -> Waveform:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rate, start, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * n:
        raise FormatError(f"{path}: expected {n} samples, found {len(body) // 4}")
    return Waveform(rate, start, np.frombuffer(body, dtype="<f4").copy())


def _exact_steps(x0: float, approx: float, target: np.ndarray) -> List[float]:
    idx = np.arange(target.size)
    near = [approx]
    up = down = approx
    for _ in range(64):
        up, down = float(np.nextafter(up, np.inf)), float(np.nextafter(down, -np.inf))
        near += [up, down]
    return sorted(c for c in near if np.array_equal(x0 + c * idx, target))


def _uniform_step(x: np.ndarray, name: str) -> float:
    """Step of a uniform axis, chosen so that writing a re-read axis is idempotent.

    Among the floats near the mean step that rebuild the axis exactly as
    x[0] + step*i, the one with the shortest decimal form is returned.  If
    none rebuilds it, the axis the reader will produce is used instead.
    """
    n = x.size
    if n < 2:
        return 0.0
    approx = float((x[-1] - x[0]) / (n - 1))
    idx = np.arange(n)
    if np.max(np.abs(x - (x[0] + approx * idx))) > 1e-9 * abs(approx) * n:
        raise FormatError(f"{name} axis is not uniform; the CSV header cannot describe it")
    exact = _exact_steps(float(x[0]), approx, x)
    if not exact:
        exact = _exact_steps(float(x[0]), approx, x[0] + approx * idx)
    allowed = set(exact)
    for digits in range(1, 18):
        short = sorted({float(f"{c:.{digits}g}") for c in exact} & allowed)
        if short:
            return short[0]
    return exact[0]


def write_spectrogram_csv(path, spec: Spectrogram) -> None:
    rows, cols = spec.shape
    t0 = float(spec.time_bins[0]) if rows else 0.0
    f0 = float(spec.freq_bins[0]) if cols else 0.0
    head = (f"# rows={rows} cols={cols} t0_s={t0!r} dt_s={_uniform_step(spec.time_bins, 'time')!r} "
            f"f0_hz={f0!r} df_hz={_uniform_step(spec.freq_bins, 'frequency')!r}\n")
    with open(path, "w") as fh:
        fh.write(head)
        for row in spec.magnitudes:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_spectrogram_csv(path) -> Spectrogram:
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise FormatError(f"{path}: missing header line")
        meta = dict(tok.split("=", 1) for tok in head[1:].split())
        rows, cols = int(meta["rows"]), int(meta["cols"])
        data = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    if len(data) != rows or any(len(r) != cols for r in data):
        raise FormatError(f"{path}: header says rows={rows} cols={cols}, body does not match")
    mag = np.array(data, dtype=float).reshape(rows, cols)
    t = float(meta["t0_s"]) + float(meta["dt_s"]) * np.arange(rows)
    f = float(meta["f0_hz"]) + float(meta["df_hz"]) * np.arange(cols)
    return Spectrogram(t, f, mag)


def write_pulses_csv(path, pulses: Sequence[Pulse], freqs: Optional[Sequence[float]] = None) -> None:
    with open(path, "w") as fh:
        fh.write("channel,period,tau_s,amplitude,fwhm_s,freq_hz\n")
        for i, p in enumerate(pulses):
            f = "" if freqs is None else repr(float(freqs[i]))
            fh.write(f"{p.channel},{p.period_index},{p.tau!r},{p.amplitude!r},{p.fwhm!r},{f}\n")


def read_pulses_csv(path) -> List[dict]:
    out = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = line.rstrip("\n").split(",")
            row = dict(zip(header, vals))
            out.append({"channel": int(row["channel"]), "period": int(row["period"]),
                        "tau_s": float(row["tau_s"]), "amplitude": float(row["amplitude"]),
                        "fwhm_s": float(row["fwhm_s"]),
                        "freq_hz": float(row["freq_hz"]) if row["freq_hz"] else None})
    return out


def write_tracks_csv(path, tracks: Iterable[FreqTrack]) -> None:
    with open(path, "w") as fh:
        fh.write("component_id,time_s,freq_hz,amplitude\n")
        for tr in tracks:
            for cid, t, f, a in tr.rows():
                fh.write(f"{cid},{t!r},{f!r},{a!r}\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_path: Optional[str] = None
    config_sha256: Optional[str] = None
    sut_path: Optional[str] = None
    sut_sha256: Optional[str] = None
    seed: Optional[int] = None
    tool_version: str = ""
    started: str = ""
    finished: str = ""
    outputs: Dict[str, str] = field(default_factory=dict)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")
