import json

import numpy as np
import pytest

from sstft.cli import main
from sstft.formats import read_spectrogram_csv, read_waveform, write_waveform
from sstft.freq_plan import three_channel_config
from sstft.oracle_stft import ridge_extract
from sstft.siggen import SutSpec, Tone


@pytest.fixture
def cfg_path(tmp_path):
    def make(**overrides):
        data = three_channel_config().to_dict()
        data.update(overrides)
        p = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*')))}.json"
        p.write_text(json.dumps(data))
        return p
    return make


@pytest.fixture
def sut_path(tmp_path):
    def make(*components, duration=8e-6):
        p = tmp_path / f"sut{len(list(tmp_path.glob('sut*')))}.json"
        SutSpec(tuple(components), duration).to_json(p)
        return p
    return make


def test_plan_exit_zero_for_valid_config(cfg_path, capsys):
    assert main(["plan", "--config", str(cfg_path())]) == 0
    out = capsys.readouterr().out
    assert "violation" not in out
    assert len([ln for ln in out.splitlines() if ln.strip().startswith(("1 ", "2 ", "3 "))]) == 3


def test_plan_zero_step_reports_violation(cfg_path, capsys):
    assert main(["plan", "--config", str(cfg_path(subcarrier_step=0.0))]) != 0
    assert "violation:" in capsys.readouterr().out


def test_plan_single_channel(cfg_path, capsys, tmp_path):
    cfg = cfg_path(n_channels=1, sweep_bandwidth=4e9, reference_freq=1e9)
    js = tmp_path / "plan.json"
    assert main(["plan", "--config", str(cfg), "--json", str(js)]) == 0
    assert len(json.loads(js.read_text())["channels"]) == 1


def test_bad_seed_is_usage_error(cfg_path, sut_path):
    for seed in ("-1", str(2 ** 64), "abc"):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--config", str(cfg_path()), "--sut", str(sut_path()), "--seed", seed])
        assert exc.value.code == 2


def _simulate_and_reconstruct(cfg, sut, out, seed="5"):
    assert main(["simulate", "--config", str(cfg), "--sut", str(sut), "--seed", seed, "--out", str(out)]) == 0
    assert main(["reconstruct", "--config", str(cfg), "--pd", str(out / "pd.wf"), "--out", str(out)]) == 0


def test_pipeline_is_deterministic(cfg_path, sut_path, tmp_path):
    cfg, sut = cfg_path(), sut_path(Tone(2.2e9), Tone(7.7e9, 0.5), duration=16e-6)
    _simulate_and_reconstruct(cfg, sut, tmp_path / "a")
    _simulate_and_reconstruct(cfg, sut, tmp_path / "b")
    for name in ("pd.wf", "spectrogram.csv", "pulses.csv", "tracks.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _simulate_and_reconstruct(cfg, sut, tmp_path / "c", seed="6")
    assert (tmp_path / "a" / "pd.wf").read_bytes() != (tmp_path / "c" / "pd.wf").read_bytes()


def test_written_waveform_rewrites_identically(cfg_path, sut_path, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg_path()), "--sut", str(sut_path(Tone(5e9))),
                 "--out", str(out)]) == 0
    write_waveform(tmp_path / "again.wf", read_waveform(out / "pd.wf"))
    assert (tmp_path / "again.wf").read_bytes() == (out / "pd.wf").read_bytes()


def test_run_with_empty_sut_shows_only_reference(cfg_path, sut_path, tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg_path()), "--sut", str(sut_path(duration=16e-6)),
                 "--out", str(out), "--no-oracle"]) == 0
    spec = read_spectrogram_csv(out / "spectrogram.csv")
    peaks = ridge_extract(spec, 3, 0.1)
    assert sorted({c for c, _, _ in peaks}) == list(range(spec.shape[0]))
    assert len(peaks) == spec.shape[0]
    assert all(abs(f - 3e9) <= 3 * 20e6 for _, f, _ in peaks)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and "report" in manifest["outputs"]


def test_run_writes_reports(cfg_path, sut_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg_path()), "--sut", str(sut_path(Tone(5.1e9), duration=16e-6)),
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["reconstruction"]["detection_rate"] >= 0.95
    assert report["oracle"]["detection_rate"] >= 0.95
    assert "reconstruction: detection" in capsys.readouterr().out
    oracle = read_spectrogram_csv(out / "oracle_spectrogram.csv")
    assert oracle.shape == read_spectrogram_csv(out / "spectrogram.csv").shape


def test_compare_subcommand(cfg_path, sut_path, tmp_path, capsys):
    cfg, sut = cfg_path(), sut_path(Tone(9.3e9))
    _simulate_and_reconstruct(cfg, sut, tmp_path)
    assert main(["compare", "--config", str(cfg), "--sut", str(sut),
                 "--spectrogram", str(tmp_path / "spectrogram.csv"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["detection_rate"] == 1.0


def test_reconstruct_with_default_guard(cfg_path, sut_path, tmp_path):
    cfg, sut = cfg_path(), sut_path(Tone(6e9))
    _simulate_and_reconstruct(cfg, sut, tmp_path)
    plain = read_spectrogram_csv(tmp_path / "spectrogram.csv")
    assert main(["reconstruct", "--config", str(cfg), "--pd", str(tmp_path / "pd.wf"),
                 "--out", str(tmp_path / "g"), "--guard", "-1"]) == 0
    guarded = read_spectrogram_csv(tmp_path / "g" / "spectrogram.csv")
    assert guarded.shape == plain.shape
    assert np.all(guarded.magnitudes <= plain.magnitudes)


def test_stage_error_names_the_stage(cfg_path, sut_path, tmp_path, capsys):
    rc = main(["simulate", "--config", str(cfg_path()), "--sut", str(sut_path(Tone(12.5e9))),
               "--out", str(tmp_path)])
    assert rc == 1
    assert "error in stage simulate:" in capsys.readouterr().err
    rc = main(["simulate", "--config", str(tmp_path / "missing.json"), "--sut", str(sut_path()),
               "--out", str(tmp_path)])
    assert rc == 1
    assert "error in stage load config:" in capsys.readouterr().err


def test_run_refuses_invalid_plan(cfg_path, sut_path, tmp_path, capsys):
    rc = main(["run", "--config", str(cfg_path(gain_fwhm=200e6)), "--sut", str(sut_path()),
               "--out", str(tmp_path)])
    assert rc == 1
    assert "error in stage plan:" in capsys.readouterr().err


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "sstft", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
