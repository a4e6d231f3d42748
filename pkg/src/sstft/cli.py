"""
sstft command line: plan, simulate, reconstruct, oracle, compare, run.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .demux import default_guard, reconstruct
from .formats import (RunManifest, file_sha256, read_spectrogram_csv, read_waveform,
                      write_pulses_csv, write_spectrogram_csv, write_tracks_csv, write_waveform)
from .freq_plan import ConfigError, SystemConfig, analysis_bandwidth, derive_plan, validate_plan
from .oracle_stft import compare, digital_stft, oracle_sample_rate
from .photonic_sim import reference_track, simulate_pd_output
from .siggen import SutSpec, Waveform, synthesize

log = logging.getLogger("sstft")


class StageError(RuntimeError):
    def __init__(self, stage, err):
        super().__init__(f"{stage}: {err}")
        self.stage = stage


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed {v} outside the u64 range")
    return v


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _load_config(args) -> SystemConfig:
    with open(args.config) as fh:
        data = json.load(fh)
    if getattr(args, "idle", None) is not None:
        data["idle_time"] = args.idle
    return SystemConfig.from_dict(data)


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ValueError, OSError, KeyError) as err:
        raise StageError(name, err) from err


def format_plan(config: SystemConfig, plan) -> str:
    d1, d2, d3 = plan.fsr
    lines = [
        f"channels N = {config.n_channels}   f_s = {config.sweep_bandwidth / 1e9:g} GHz   "
        f"k = {config.chirp_rate / 1e15:g} GHz/us   T = {config.sweep_period * 1e6:g} us   "
        f"B = {analysis_bandwidth(config) / 1e9:g} GHz",
        f"FSR sweep {d1 / 1e9:g} GHz   pump {d2 / 1e9:g} GHz   reference {d3 / 1e9:g} GHz",
        "",
        f"{'ch':>3} {'sweep line (THz)':>18} {'pump line (THz)':>17} {'ref line (THz)':>16} "
        f"{'gain ctr (THz)':>16} {'coverage (GHz)':>16} {'subcarrier (GHz)':>17}",
    ]
    for r in plan.rows():
        cov = f"{r['coverage_lo_hz'] / 1e9:g}-{r['coverage_hi_hz'] / 1e9:g}"
        lines.append(f"{r['channel']:>3} {r['sweep_line_hz'] / 1e12:>18.6f} {r['pump_line_hz'] / 1e12:>17.6f} "
                     f"{r['reference_line_hz'] / 1e12:>16.6f} {r['gain_center_hz'] / 1e12:>16.6f} "
                     f"{cov:>16} {r['subcarrier_hz'] / 1e9:>17.4g}")
    return "\n".join(lines)


def cmd_plan(args) -> int:
    try:
        config = _load_config(args)
    except ConfigError as err:
        for msg in str(err).split("; "):
            print(f"violation: {msg}")
        return 1
    plan = derive_plan(config)
    print(format_plan(config, plan))
    violations = validate_plan(plan, config)
    for v in violations:
        print(f"violation: {v}")
    if args.json:
        Path(args.json).write_text(json.dumps(plan.to_dict(), indent=2) + "\n")
    return 0 if not violations else 1


def _simulate(args, config, outdir: Path, manifest: RunManifest):
    sut = _stage("load SUT", SutSpec.from_json, args.sut)
    pd = _stage("simulate", simulate_pd_output, sut, config, seed=args.seed)
    pd = Waveform(pd.sample_rate, pd.start_time, pd.samples.astype(np.float32))
    write_waveform(outdir / "pd.wf", pd)
    tracks = list(sut.tracks()) + [reference_track(config, sut)]
    write_tracks_csv(outdir / "tracks.csv", tracks)
    manifest.outputs.update(waveform="pd.wf", tracks="tracks.csv")
    return sut, pd, tracks


def _reconstruct(args, config, pd, outdir: Path, manifest: RunManifest):
    guard = args.guard
    rec = _stage("reconstruct", reconstruct, pd, config, guard=None)
    if guard is not None:
        from .demux import suppress_boundary_ghosts
        if guard < 0:
            widths = [p.fwhm for p in rec.pulses if p.fwhm > 0]
            guard = default_guard(config, float(np.median(widths)) if widths else None)
        rec.spectrogram = suppress_boundary_ghosts(rec.spectrogram, guard, config)
    write_spectrogram_csv(outdir / "spectrogram.csv", rec.spectrogram)
    freqs = [rec.calibration.pulse_frequency(p) for p in rec.pulses]
    write_pulses_csv(outdir / "pulses.csv", rec.pulses, freqs)
    manifest.outputs.update(spectrogram="spectrogram.csv", pulses="pulses.csv")
    return rec


def _oracle(config, sut, outdir: Path, manifest: RunManifest, rate=None):
    rate = rate or oracle_sample_rate(config.analysis_band)
    wf, _ = _stage("oracle synthesis", synthesize, sut, rate)
    spec = _stage("oracle stft", digital_stft, wf, config.sweep_period, config.total_period,
                  f_max=config.analysis_band, freq_step=config.gain_fwhm / 2)
    write_spectrogram_csv(outdir / "oracle_spectrogram.csv", spec)
    manifest.outputs["oracle_spectrogram"] = "oracle_spectrogram.csv"
    return spec


def _report(config, spec, tracks, tol):
    return compare(spec, tracks, tol, reference_freq=config.reference_freq,
                   band=config.analysis_band, channel_width=config.sweep_bandwidth,
                   edge_guard=5 * config.gain_fwhm)


def _manifest(args, config_path=True) -> RunManifest:
    m = RunManifest(tool_version=__version__, started=_now(), seed=getattr(args, "seed", None))
    if config_path and getattr(args, "config", None):
        m.config_path = str(args.config)
        m.config_sha256 = _stage("load config", file_sha256, args.config)
    if getattr(args, "sut", None):
        m.sut_path, m.sut_sha256 = str(args.sut), _stage("load SUT", file_sha256, args.sut)
    return m


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    manifest = _manifest(args)
    config = _stage("load config", _load_config, args)
    out = _outdir(args)
    _simulate(args, config, out, manifest)
    manifest.finished = _now()
    manifest.write(out / "manifest.json")
    return 0


def cmd_reconstruct(args) -> int:
    manifest = _manifest(args)
    config = _stage("load config", _load_config, args)
    pd = _stage("load waveform", read_waveform, args.pd)
    out = _outdir(args)
    rec = _reconstruct(args, config, pd, out, manifest)
    c = rec.calibration
    print(f"calibration: sign {c.sign:+d}  offset {c.offset / 1e6:.3f} MHz  "
          f"reference tau {c.reference_tau * 1e9:.2f} ns over {c.reference_periods} periods")
    print(f"pulses: {len(rec.pulses)}  spectrogram: {rec.spectrogram.shape[0]} x {rec.spectrogram.shape[1]}")
    return 0


def cmd_oracle(args) -> int:
    manifest = _manifest(args)
    config = _stage("load config", _load_config, args)
    sut = _stage("load SUT", SutSpec.from_json, args.sut)
    _oracle(config, sut, _outdir(args), manifest, args.rate)
    return 0


def cmd_compare(args) -> int:
    config = _stage("load config", _load_config, args)
    sut = _stage("load SUT", SutSpec.from_json, args.sut)
    spec = _stage("load spectrogram", read_spectrogram_csv, args.spectrogram)
    tracks = list(sut.tracks()) + [reference_track(config, sut)]
    rep = _report(config, spec, tracks, args.tol or 3 * config.gain_fwhm)
    print(rep.summary())
    if args.out:
        out = _outdir(args)
        (out / "report.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    return 0


def cmd_run(args) -> int:
    manifest = _manifest(args)
    config = _stage("load config", _load_config, args)
    out = _outdir(args)
    violations = validate_plan(derive_plan(config), config)
    if violations:
        raise StageError("plan", "; ".join(violations))
    sut, pd, tracks = _simulate(args, config, out, manifest)
    rec = _reconstruct(args, config, pd, out, manifest)
    tol = args.tol or 3 * config.gain_fwhm
    report = {"reconstruction": _report(config, rec.spectrogram, tracks, tol).to_dict()}
    if not args.no_oracle:
        ospec = _oracle(config, sut, out, manifest)
        # the oracle sees the SUT alone, without the reference tone
        report["oracle"] = _report(config, ospec, list(sut.tracks()), tol).to_dict()
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    manifest.outputs["report"] = "report.json"
    manifest.finished = _now()
    manifest.write(out / "manifest.json")
    r = report["reconstruction"]
    rms = r["rms_error_hz"]
    print(f"reconstruction: detection {r['detection_rate']:.3f}  "
          f"rms {'n/a' if rms is None else f'{rms / 1e6:.2f} MHz'}  "
          f"false-alarm fraction {r['false_alarm_rate']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sstft", description="Channelized analog STFT simulator")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sut=False, seed=False, out=True):
        sp.add_argument("--config", required=True, help="SystemConfig JSON")
        sp.add_argument("--idle", type=float, default=None, help="override idle_time (s)")
        if sut:
            sp.add_argument("--sut", required=True, help="SUT spec JSON")
        if seed:
            sp.add_argument("--seed", type=_u64, default=0)
        if out:
            sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("plan", help="derive and validate the comb plan")
    common(sp, out=False)
    sp.add_argument("--json", help="also write the plan as JSON")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="synthesize the PD waveform")
    common(sp, sut=True, seed=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("reconstruct", help="demultiplex a PD waveform into a spectrogram")
    common(sp)
    sp.add_argument("--pd", required=True, help="SSTFT-WF1 waveform")
    sp.add_argument("--guard", type=float, default=None,
                    help="apply boundary-ghost suppression with this guard (Hz); negative = default")
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("oracle", help="digital STFT of the SUT")
    common(sp, sut=True)
    sp.add_argument("--rate", type=float, default=None, help="oracle sample rate (Hz)")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("compare", help="score a spectrogram against the SUT tracks")
    common(sp, sut=True)
    sp.set_defaults(out=None)
    sp.add_argument("--spectrogram", required=True)
    sp.add_argument("--tol", type=float, default=None, help="match tolerance (Hz)")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("run", help="simulate, reconstruct and compare")
    common(sp, sut=True, seed=True)
    sp.add_argument("--guard", type=float, default=None)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--no-oracle", action="store_true", help="skip the digital STFT oracle")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as err:
        print(f"error in stage {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
