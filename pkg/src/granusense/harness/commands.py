"""Experiment drivers behind the CLI subcommands.

Each ``run_*`` function writes into an output directory and returns the list
of files it wrote; each ``plan_*`` function lists those files without
touching the disk.
"""
from __future__ import annotations

import json
import math
import re
from collections import OrderedDict
from importlib import resources
from pathlib import Path

import numpy as np

from .. import dsp
from ..classify.dataset import DatasetConfig, DatasetManifest, generate_dataset
from ..classify.model import ModelParams
from ..classify.train import ConfusionMatrix, TrainConfig, evaluate, train
from ..imageio import load_image
from ..simcore import (dimensionless_acceleration, load_calibration, onset_depth,
                       simulate_penetration, vibration_profile)
from ..tactile import LightingModel
from .config import config_hash
from .plots import heatmap, line_chart

TRIAL_SUFFIX = re.compile(r"[_-]trial\d+$")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# -- vibration sweep -----------------------------------------------------------

def _trace_name(medium: str, voltage) -> str:
    return f"{medium}_{int(voltage)}V.csv"


def plan_vibration_sweep(cfg: dict, out: Path) -> list:
    sweep = cfg["sweep"]
    files = [out / "traces" / _trace_name(m, v) for m in sweep["media"] for v in sweep["voltages"]]
    files += [out / "plots" / f"force_depth_{m}.svg" for m in sweep["media"]]
    files.append(out / "summary.csv")
    return files


def run_vibration_sweep(cfg: dict, out: Path) -> list:
    sweep = cfg["sweep"]
    calib = load_calibration(cfg["calibration"])
    probe = calib.probe
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    written, rows = [], []
    for mi, name in enumerate(sweep["media"]):
        medium = calib.medium(name)
        series, medium_rows, still_depth = [], [], None
        for vi, volts in enumerate(sweep["voltages"]):
            vib = vibration_profile(volts)
            trace = simulate_penetration(medium, probe, vib, sweep["max_depth_m"],
                                         sweep["sample_rate_hz"],
                                         noise_seed=cfg["seed"] * 1000 + mi * 100 + vi)
            smooth = dsp.exp_filter(dsp.TimeSeries(sweep["sample_rate_hz"], trace.force),
                                    sweep["alpha"]).values
            path = out / "traces" / _trace_name(name, volts)
            type(trace)(trace.time, trace.depth, smooth, trace.stalled,
                        trace.stall_depth).write_csv(path)
            written.append(path)
            series.append((f"{int(volts)} V", trace.depth * 100.0, smooth))
            depth = trace.stall_depth if trace.stalled else float("nan")
            if vib.voltage == 0:
                still_depth = depth
            medium_rows.append((name, vib, depth, trace.stalled, onset_depth(medium, vib)))
        svg = line_chart(series, f"Force vs depth in {name}", "depth (cm)", "force z (N)")
        path = out / "plots" / f"force_depth_{name}.svg"
        path.write_text(svg)
        written.append(path)
        rows += [row + (still_depth,) for row in medium_rows]
    lines = ["medium,voltage_v,frequency_hz,accel_m_s2,gamma,onset_depth_m,stalled,"
             "stall_depth_m,stall_ratio_to_still"]
    for name, vib, depth, stalled, z_on, still in rows:
        ratio = depth / still if still else float("nan")
        lines.append(f"{name},{vib.voltage:g},{vib.frequency:g},{vib.accel_amplitude:g},"
                     f"{float(dimensionless_acceleration(vib))!r},{float(z_on)!r},"
                     f"{str(stalled).lower()},{float(depth)!r},{float(ratio)!r}")
    path = out / "summary.csv"
    path.write_text("\n".join(lines) + "\n")
    written.append(path)
    return written


def read_summary(path) -> list:
    """Rows of a vibration-sweep summary as dicts with numeric fields parsed."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        rec = dict(zip(header, line.split(",")))
        for key in header:
            if key == "medium":
                continue
            if key == "stalled":
                rec[key] = rec[key] == "true"
            else:
                rec[key] = float(rec[key])
        rows.append(rec)
    return rows


# -- vibration analysis -----------------------------------------------------------

def synthesize_accelerometer(frequency: float, amplitude: float, seconds: float = 5.0,
                             sample_rate: float = 500.0, snr_db: float | None = None,
                             seed: int = 0, offset: float = 9.81) -> dsp.TimeSeries:
    """Tone of the given frequency on a gravity offset, with optional white noise."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    phase = rng.uniform(0, 2 * math.pi)
    x = amplitude * np.sin(2 * math.pi * frequency * t + phase)
    if snr_db is not None:
        noise_power = (amplitude ** 2 / 2) / 10 ** (snr_db / 10)
        x = x + rng.normal(0.0, math.sqrt(noise_power), n)
    return dsp.TimeSeries(sample_rate, x + offset)


def bundled_fixtures() -> list:
    root = resources.files("granusense").joinpath("data/fixtures")
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".csv"))


def analyze_files(paths) -> list:
    """Group trial files by name, returning rows of (group, trials, Hz, m/s^2)."""
    groups = OrderedDict()
    for path in paths:
        path = Path(path)
        series = dsp.read_series_csv(path)
        groups.setdefault(TRIAL_SUFFIX.sub("", path.stem), []).append(series)
    rows = []
    for group, trials in groups.items():
        freq = dsp.mean_fundamental(trials)
        amp = float(np.mean([dsp.tone_amplitude(t) for t in trials]))
        rows.append((group, len(trials), freq, amp))
    return rows


def format_table(rows) -> str:
    lines = ["group,trials,frequency_hz,accel_amplitude_m_s2"]
    lines += [f"{g},{n},{f:.3f},{a:.3f}" for g, n, f, a in rows]
    return "\n".join(lines) + "\n"


def plan_analyze(out: Path) -> list:
    return [out / "vibration_table.csv"]


def run_analyze(paths, out: Path) -> list:
    if not paths:
        raise ValueError("need at least one accelerometer CSV")
    text = format_table(analyze_files(paths))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "vibration_table.csv"
    path.write_text(text)
    return [path]


# -- classification ---------------------------------------------------------------

def plan_gen_dataset(cfg: dict, out: Path) -> list:
    return [out / "manifest.jsonl", out / "images"]


def run_gen_dataset(cfg: dict, out: Path, workers: int = 1) -> list:
    dcfg = DatasetConfig.from_dict(cfg["dataset"])
    lighting = LightingModel.load(cfg["lighting"]) if cfg["lighting"] else None
    manifest = generate_dataset(out, config=dcfg, seed=cfg["seed"], workers=workers,
                                lighting=lighting)
    return [out / "manifest.jsonl"] + [out / e.image for e in manifest.entries]


def plan_train(out: Path) -> list:
    return [out / "model.bin", out / "train_log.csv"]


def run_train(cfg: dict, dataset: Path, out: Path) -> list:
    manifest = DatasetManifest.read(dataset)
    tcfg = TrainConfig(**{**cfg["train"], "seed": cfg["seed"]})
    result = train(manifest, tcfg)
    out.mkdir(parents=True, exist_ok=True)
    result.model.save(out / "model.bin")
    (out / "train_log.csv").write_text(result.log_csv())
    return [out / "model.bin", out / "train_log.csv"]


def plan_evaluate(out: Path) -> list:
    return [out / "confusion.csv", out / "confusion.svg", out / "report.json"]


def confusion_report(cm: ConfusionMatrix, split: str) -> dict:
    per_class = {name: (float(cm.counts[i, i] / cm.counts[i].sum()) if cm.counts[i].sum() else None)
                 for i, name in enumerate(cm.classes)}
    return {
        "split": split,
        "total": cm.total,
        "accuracy": cm.accuracy,
        "per_class_recall": per_class,
        "off_diagonal": int(cm.total - np.trace(cm.counts)),
        "same_shape_share_of_errors": cm.same_shape_confusion(),
    }


def run_evaluate(cfg: dict, model_path: Path, dataset: Path, out: Path) -> list:
    model = ModelParams.load(model_path)
    manifest = DatasetManifest.read(dataset)
    split = cfg["evaluate"]["split"]
    cm = evaluate(model, manifest, split)
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion.csv").write_text(cm.to_csv())
    (out / "confusion.svg").write_text(
        heatmap(cm.counts, cm.classes, f"Confusion matrix ({split}, accuracy {cm.accuracy:.3f})"))
    report = confusion_report(cm, split)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return plan_evaluate(out)


def plan_pipeline(out: Path) -> list:
    return ([out / "dataset" / "manifest.jsonl"] + plan_train(out / "model")
            + plan_evaluate(out / "evaluation"))


def run_pipeline(cfg: dict, out: Path, workers: int = 1) -> list:
    written = []
    stages = [
        ("gen-dataset", lambda: run_gen_dataset(cfg, out / "dataset", workers)),
        ("train", lambda: run_train(cfg, out / "dataset", out / "model")),
        ("evaluate", lambda: run_evaluate(cfg, out / "model" / "model.bin", out / "dataset",
                                          out / "evaluation")),
    ]
    for name, stage in stages:
        try:
            written += stage()
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            out.mkdir(parents=True, exist_ok=True)
            (out / "FAILED").write_text(f"stage: {name}\nerror: {type(exc).__name__}: {exc}\n")
            raise StageError(name, exc) from exc
    return written


def predict_file(model_path: Path, image_path: Path) -> str:
    from ..classify.train import predict

    model = ModelParams.load(model_path)
    label, conf = predict(model, load_image(image_path))
    return f"{label},{conf:.6f}"


def run_record(command: str, cfg: dict, outputs, started: str, finished: str) -> dict:
    from .. import __version__

    return {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "version": __version__,
        "started": started,
        "finished": finished,
        "outputs": [str(p) for p in outputs],
    }
