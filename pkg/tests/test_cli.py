import subprocess
import sys

import numpy as np
import pytest

from gated_spd.calibration import DecayDataset, decay_model
from gated_spd.cli import UsageError, main, parse_axis
from gated_spd.config import default_config_yaml
from gated_spd.io import read_rows


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(default_config_yaml().replace("n_gates: 10000000", "n_gates: 400000"))
    return path


@pytest.fixture
def decay_csv(tmp_path):
    t = np.concatenate([np.linspace(0, 20e-6, 21), np.geomspace(25e-6, 2e-3, 20)])
    y = decay_model(t, [1.6e-3, 1e-4], [2e-6, 400e-6], 2e-5)
    path = tmp_path / "decay.csv"
    DecayDataset(t, y, 0.05 * y).to_csv(path)
    return path


def run_twice(tmp_path, argv, names):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    return a


def test_simulate_deterministic(tmp_path, cfg):
    out = run_twice(tmp_path, ["simulate", "--config", str(cfg)], ["counters.csv", "estimates.csv"])
    est = {r["quantity"]: float(r["value"]) for r in read_rows(out / "estimates.csv")}
    assert 0.15 < est["de"] < 0.25
    assert [r["run"] for r in read_rows(out / "counters.csv")] == ["dark", "light", "light_12us"]


def test_seed_flag_changes_output(tmp_path, cfg):
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--seed", "99", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "counters.csv").read_bytes() != (tmp_path / "b" / "counters.csv").read_bytes()


def test_sweep_axis_deterministic(tmp_path, cfg):
    argv = ["sweep", "--config", str(cfg), "--axis", "temperature:200:240:3", "--axis", "n_blank:0,6",
            "--gates", "200000"]
    out = run_twice(tmp_path, argv, ["sweep.csv"])
    rows = read_rows(out / "sweep.csv")
    assert len(rows) == 6 and all(r["error"] == "" for r in rows)


def test_sweep_jobs_do_not_change_bytes(tmp_path, cfg):
    base = ["sweep", "--config", str(cfg), "--axis", "n_blank:0,6", "--gates", "200000"]
    main(base + ["--out", str(tmp_path / "a")])
    main(base + ["--jobs", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_recipe(tmp_path, cfg):
    out = run_twice(tmp_path, ["sweep", "--config", str(cfg), "--recipe", "fig3", "--gates", "200000"],
                    ["fig3_pd_vs_T.csv"])
    assert len(read_rows(out / "fig3_pd_vs_T.csv")) == 8


def test_sweep_bad_point_exits_2(tmp_path, cfg):
    rc = main(["sweep", "--config", str(cfg), "--axis", "n_blank:0,300", "--gates", "100000",
               "--out", str(tmp_path)])
    assert rc == 2
    rows = read_rows(tmp_path / "sweep.csv")
    assert rows[0]["error"] == "" and "n_blank" in rows[1]["error"]


def test_fit_deterministic(tmp_path, decay_csv):
    out = run_twice(tmp_path, ["fit", "--input", str(decay_csv), "--k", "2"], ["fit_report.csv"])
    rows = {r["parameter"]: float(r["value"]) for r in read_rows(out / "fit_report.csv")}
    assert rows["lifetime_1_s"] == pytest.approx(2e-6, rel=1e-3)
    assert (out / "fit_report.txt").exists()


def test_fit_failure_exits_2(tmp_path):
    t = np.linspace(0, 1e-4, 12)
    path = tmp_path / "flat.csv"
    DecayDataset(t, np.full(12, 1e-3)).to_csv(path)
    assert main(["fit", "--input", str(path), "--k", "2", "--out", str(tmp_path / "o")]) == 2


def test_waveform_deterministic(tmp_path, cfg):
    names = [f"waveform_{n}.csv" for n in ("monitor", "analog", "digital")]
    out = run_twice(tmp_path, ["waveform", "--config", str(cfg)], names)
    digital = np.loadtxt(out / "waveform_digital.csv", delimiter=",", skiprows=1)
    assert digital[:, 1].max() == 1.0
    main(["waveform", "--config", str(cfg), "--charge", "0", "--out", str(tmp_path / "z")])
    assert np.loadtxt(tmp_path / "z" / "waveform_digital.csv", delimiter=",", skiprows=1)[:, 1].max() == 0.0


def test_calibrate_deterministic(tmp_path):
    out = run_twice(tmp_path, ["calibrate"], ["calibration.csv", "calibrated_detector.yaml"])
    rows = read_rows(out / "calibration.csv")
    assert all(abs(float(r["rel_residual"])) < 1e-2 for r in rows)


def test_env_var_sets_output(tmp_path, cfg, monkeypatch):
    monkeypatch.setenv("GATED_SPD_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--config", str(cfg), "--gates", "100000"]) == 0
    assert (tmp_path / "env" / "counters.csv").exists()
    # --out wins over the environment
    assert main(["simulate", "--config", str(cfg), "--gates", "100000", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "counters.csv").exists()


@pytest.mark.parametrize("argv", [
    ["sweep"],
    ["sweep", "--axis", "colour:1:2:3"],
    ["sweep", "--recipe", "fig9"],
    ["simulate", "--config", "/nonexistent.yaml"],
    ["fit"],
    ["fit", "--input", "/nonexistent.csv"],
    ["waveform"],
])
def test_config_errors_exit_1(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == 1


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--seed", "abc"])
    assert info.value.code == 1


def test_parse_axis():
    assert parse_axis("temperature:200:220:3") == ("temperature", [200.0, 210.0, 220.0])
    axis, vals = parse_axis("mu:0.01:1:3:log")
    assert vals == pytest.approx([0.01, 0.1, 1.0])
    assert parse_axis("n_blank:0:12:3") == ("n_blank", [0, 6, 12])
    assert parse_axis("n_blank:0,6,12") == ("n_blank", [0, 6, 12])
    for bad in ("temperature:1:2", "mu:0:1:3:log", "v_ov:a:b:3", "temperature:1:2:0"):
        with pytest.raises(UsageError):
            parse_axis(bad)


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gated_spd.cli", "sweep", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 1
    assert "empty grid" in r.stderr


def test_every_csv_matches_published_schema(tmp_path, cfg, decay_csv):
    from gated_spd.io import SCHEMAS

    out = tmp_path / "all"
    main(["simulate", "--config", str(cfg), "--out", str(out)])
    main(["sweep", "--config", str(cfg), "--recipe", "fig4", "--gates", "100000", "--out", str(out)])
    main(["sweep", "--config", str(cfg), "--axis", "mu:0.1,0.2", "--gates", "100000", "--out", str(out)])
    main(["fit", "--input", str(decay_csv), "--out", str(out)])
    main(["waveform", "--config", str(cfg), "--out", str(out)])
    main(["calibrate", "--out", str(out)])
    written = sorted(p.name for p in out.glob("*.csv"))
    assert len(written) == 9
    for name in written:
        header = (out / name).read_text().splitlines()[0].split(",")
        assert header == list(SCHEMAS[name]), name


def test_no_avalanche_trace_is_flat_in_window(tmp_path, cfg):
    main(["waveform", "--config", str(cfg), "--charge", "0", "--out", str(tmp_path)])
    analog = np.loadtxt(tmp_path / "waveform_analog.csv", delimiter=",", skiprows=1)
    monitor = np.loadtxt(tmp_path / "waveform_monitor.csv", delimiter=",", skiprows=1)
    assert np.max(np.abs(analog[:, 1])) <= 1e-12 * np.max(np.abs(monitor[:, 1]))
