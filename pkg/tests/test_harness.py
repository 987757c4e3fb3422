import json
from pathlib import Path

import numpy as np
import pytest

from granusense.dsp import TimeSeries, read_series_csv, write_series_csv
from granusense.harness import main
from granusense.harness.commands import (bundled_fixtures, read_summary,
                                         synthesize_accelerometer)
from granusense.harness.config import ConfigError, default_config, load_config
from granusense.harness.plots import heatmap, line_chart
from granusense.imageio import save_image
from granusense.simcore import ForceTrace
from granusense.tactile import TactileImage


def run(*argv):
    return main([str(a) for a in argv])


def test_print_defaults(capsys):
    assert run("vibration-sweep", "--print-defaults") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["sweep"]["voltages"] == [0, 6, 8, 10, 12]
    assert "_doc" in doc


def test_config_overrides_and_unknown_fields(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 4, "sweep": {"alpha": 0.2}}))
    cfg = load_config(p, {"seed": 9})
    assert cfg["seed"] == 9 and cfg["sweep"]["alpha"] == 0.2
    assert cfg["sweep"]["media"] == default_config()["sweep"]["media"]
    p.write_text(json.dumps({"sweep": {"alhpa": 0.2}}))
    with pytest.raises(ConfigError, match="sweep.alhpa"):
        load_config(p)


def test_invalid_voltage_names_field(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"sweep": {"voltages": [0, 7]}}))
    assert run("vibration-sweep", "--config", p, "--out", tmp_path / "o") == 2
    assert "sweep.voltages[1]" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("pipeline", "--out", out, "--dry-run") == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["planned_outputs"]
    assert not out.exists()


def test_out_required(capsys):
    assert run("vibration-sweep") == 2


def test_vibration_sweep_outputs(tmp_path):
    out = tmp_path / "sweep"
    assert run("vibration-sweep", "--out", out, "--deterministic") == 0
    traces = sorted((out / "traces").glob("*.csv"))
    assert len(traces) == 10
    assert len(list((out / "plots").glob("*.svg"))) == 2
    rows = read_summary(out / "summary.csv")
    for medium in ("sand", "rice"):
        ratio = [r for r in rows if r["medium"] == medium and r["voltage_v"] == 10][0]
        assert 1.7 <= ratio["stall_ratio_to_still"] <= 2.3
    for path in traces:
        tr = ForceTrace.read_csv(path)
        assert np.all(np.diff(tr.depth) >= 0)
    record = json.loads((out / "run.json").read_text())
    assert len(record["outputs"]) == 13
    assert all(Path(p).exists() for p in record["outputs"])


def test_force_guard_and_rerun_identical(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert run("vibration-sweep", "--out", out) == 0
    first = {p.name: p.read_bytes() for p in (out / "traces").iterdir()}
    summary = (out / "summary.csv").read_bytes()
    assert run("vibration-sweep", "--out", out) == 2
    assert "--force" in capsys.readouterr().err
    assert run("vibration-sweep", "--out", out, "--force") == 0
    assert {p.name: p.read_bytes() for p in (out / "traces").iterdir()} == first
    assert (out / "summary.csv").read_bytes() == summary


def test_analyze_bundled(tmp_path, capsys):
    assert run("analyze-vibration", "--bundled", "--out", tmp_path / "a") == 0
    lines = (tmp_path / "a" / "vibration_table.csv").read_text().strip().splitlines()[1:]
    freqs = sorted(float(line.split(",")[2]) for line in lines)
    np.testing.assert_allclose(freqs, [156, 172, 189, 213], atol=0.5)
    assert len(bundled_fixtures()) == 4


def test_analyze_two_trials_averaged(tmp_path):
    for i, seed in enumerate((1, 2), start=1):
        write_series_csv(tmp_path / f"motor_trial{i}.csv",
                         synthesize_accelerometer(189, 19.8, snr_db=10, seed=seed))
    out = tmp_path / "a"
    assert run("analyze-vibration", tmp_path / "motor_trial1.csv", tmp_path / "motor_trial2.csv",
               "--out", out) == 0
    group, trials, freq, amp = (out / "vibration_table.csv").read_text().splitlines()[1].split(",")
    assert group == "motor" and trials == "2"
    assert float(freq) == pytest.approx(189, abs=0.5)


def test_analyze_empty_csv_fails(tmp_path, capsys):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert run("analyze-vibration", empty, "--out", tmp_path / "a") == 1
    assert "no samples" in capsys.readouterr().err


def test_emitted_series_csv_round_trip(tmp_path):
    x = TimeSeries(500.0, np.random.default_rng(0).normal(size=40))
    write_series_csv(tmp_path / "x.csv", x)
    np.testing.assert_array_equal(read_series_csv(tmp_path / "x.csv").values, x.values)


def test_pipeline_failure_marker(tmp_path, capsys):
    out = tmp_path / "p"
    assert run("pipeline", "--out", out, "--per-class", 29) == 1
    assert "gen-dataset" in capsys.readouterr().err
    assert "stage: gen-dataset" in (out / "FAILED").read_text()


@pytest.fixture(scope="module")
def tiny_model(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-dataset", "--out", root / "ds", "--per-class", 30, "--deterministic") == 0
    assert run("train", "--dataset", root / "ds", "--out", root / "m", "--epochs", 1,
               "--deterministic") == 0
    return root


def test_train_outputs(tiny_model):
    assert (tiny_model / "m" / "model.bin").exists()
    log = (tiny_model / "m" / "train_log.csv").read_text().splitlines()
    assert len(log) == 2


def test_evaluate_outputs(tiny_model, capsys):
    out = tiny_model / "ev"
    assert run("evaluate", "--model", tiny_model / "m" / "model.bin", "--dataset",
               tiny_model / "ds", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["total"] == 9 * 2
    assert (out / "confusion.svg").read_text().startswith("<svg")
    assert "accuracy" in capsys.readouterr().out


def test_predict_line(tiny_model, capsys):
    image = next((tiny_model / "ds" / "images" / "ZeroContact").glob("*.png"))
    assert run("predict", "--model", tiny_model / "m" / "model.bin", "--image", image) == 0
    label, conf = capsys.readouterr().out.strip().split(",")
    assert 0 <= float(conf) <= 1


def test_predict_corrupt_png(tiny_model, tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"garbage")
    assert run("predict", "--model", tiny_model / "m" / "model.bin", "--image", bad) != 0
    assert "decode" in capsys.readouterr().err


def test_predict_wrong_size(tiny_model, tmp_path, capsys):
    img = tmp_path / "small.png"
    save_image(img, TactileImage(np.full((32, 48, 3), 0.5)))
    assert run("predict", "--model", tiny_model / "m" / "model.bin", "--image", img) == 2
    assert "64x64" in capsys.readouterr().err


def test_predict_missing_file(tiny_model, tmp_path, capsys):
    assert run("predict", "--model", tiny_model / "m" / "model.bin", "--image",
               tmp_path / "none.png") == 1
    assert "I/O error" in capsys.readouterr().err


def test_svg_writers_deterministic():
    s = [("a", np.arange(5.0), np.arange(5.0) ** 2)]
    assert line_chart(s, "t", "x", "y") == line_chart(s, "t", "x", "y")
    assert "<svg" in heatmap(np.eye(3, dtype=int), ["a", "b", "c"], "m")


def test_lighting_config_used_and_checked(tmp_path, capsys):
    from granusense.tactile import LightingModel

    light = tmp_path / "light.json"
    LightingModel.default(elevation_deg=60.0).save(light)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lighting": str(light), "dataset": {"sensor_noise": 0.0}}))
    assert run("gen-dataset", "--config", cfg, "--per-class", 30, "--out", tmp_path / "d") == 0
    from granusense.imageio import load_image

    bg = load_image(tmp_path / "d" / "images" / "ZeroContact" / "00000.png").pixels
    expected = 0.1 + 0.8 * np.sin(np.radians(60.0))
    assert bg[0, 0, 0] == pytest.approx(expected, abs=1 / 255)
    light.write_text("{}")
    assert run("gen-dataset", "--config", cfg, "--out", tmp_path / "e") == 2
    assert "lighting" in capsys.readouterr().err
