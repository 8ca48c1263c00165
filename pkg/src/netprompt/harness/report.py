"""Comparison tables and plot-data files built from finished run directories.

The output depends only on the persisted runs: runs are visited in sorted
order, floats are written with a fixed format, and nothing time-dependent
is recorded, so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from netprompt.harness.metrics import service_quality, smooth
from netprompt.runlog import HEADER_FILE, SENTINEL, RunLog, fmt

EXTENSION_METHODS = {"naive": "seasonal-naive comparator, not one of the original baselines"}
SMOOTH_WINDOW = 5


class ReportError(RuntimeError):
    pass


@dataclass
class Report:
    prediction: list[dict] = field(default_factory=list)
    optimization: list[dict] = field(default_factory=list)
    hourly: list[list] = field(default_factory=list)
    episodes: list[list] = field(default_factory=list)
    configs: dict = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def method_summary(self) -> list[dict]:
        by: dict[str, list[dict]] = {}
        for row in self.prediction:
            if row["mae"] is not None:
                by.setdefault(row["method"], []).append(row)
        return [{"method": m, "n_runs": len(rows), "mae": float(np.mean([r["mae"] for r in rows])),
                 "mse": float(np.mean([r["mse"] for r in rows]))} for m, rows in sorted(by.items())]

    def to_dict(self) -> dict:
        return {"prediction": self.prediction, "prediction_by_method": self.method_summary(),
                "optimization": self.optimization, "configs": self.configs, "skipped": self.skipped,
                "extensions": EXTENSION_METHODS}


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _optimize_row(run_id: str, log: RunLog) -> tuple[dict, list[list]]:
    summary = log.episode_summary()
    power = np.array([r["mean_power_w"] for r in summary])
    sm = smooth(power, SMOOTH_WINDOW)
    tail = summary[-SMOOTH_WINDOW:]
    row = {
        "run_id": run_id, "method": log.method, "episodes": len(summary), "steps": len(log.steps),
        "mean_power_w": float(np.mean([s.total_power_w for s in log.steps])),
        "service_quality": service_quality(log),
        "mean_reward": float(np.mean([s.reward for s in log.steps])),
        "final_mean_power_w": float(np.mean([r["mean_power_w"] for r in tail])),
        "final_service_quality": float(np.mean([r["service_quality"] for r in tail])),
        "final_mean_reward": float(np.mean([r["mean_reward"] for r in tail])),
    }
    series = [[run_id, log.method, r["episode"], r["mean_power_w"], s, r["service_quality"], r["mean_reward"]]
              for r, s in zip(summary, sm)]
    return row, series


def collect(runs_dir) -> Report:
    runs_dir = Path(runs_dir)
    if not runs_dir.is_dir():
        raise ReportError(f"{runs_dir} is not a directory")
    rep = Report()
    for run in sorted(p for p in runs_dir.iterdir() if p.is_dir()):
        header_path = run / HEADER_FILE
        if not header_path.exists():
            continue
        if not (run / SENTINEL).exists():
            rep.skipped.append(run.name)
            continue
        header = json.loads(header_path.read_text(encoding="utf-8"))
        rep.configs[run.name] = header
        if header.get("kind") == "optimize":
            row, series = _optimize_row(run.name, RunLog.load(run))
            rep.optimization.append(row)
            rep.episodes.extend(series)
        elif header.get("kind") == "predict":
            metrics = json.loads((run / "metrics.json").read_text(encoding="utf-8"))
            rep.prediction.append({"run_id": run.name, "method": metrics["method"], "bs_id": metrics["bs_id"],
                                   "n_days": metrics["n_days"], "n_failed": metrics["n_failed"],
                                   "mae": metrics["mae"], "mse": metrics["mse"]})
            truth = {(r["date"], r["hour"]): r["value"] for r in _read_csv(run / "truth.csv")}
            for r in _read_csv(run / "forecasts.csv"):
                rep.hourly.append([run.name, r["method"], r["bs_id"], r["date"], r["hour"], r["value"],
                                   truth.get((r["date"], r["hour"]), "")])
    if not rep.prediction and not rep.optimization:
        raise ReportError(f"no finished runs under {runs_dir}")
    return rep


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return fmt(v)
    return v


def _write(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _rounded(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    return obj


def write_report(report: Report, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    pred_cols = ["run_id", "method", "bs_id", "n_days", "n_failed", "mae", "mse"]
    opt_cols = ["run_id", "method", "episodes", "steps", "mean_power_w", "service_quality", "mean_reward",
                "final_mean_power_w", "final_service_quality", "final_mean_reward"]
    files = {
        "prediction_metrics.csv": (pred_cols + ["extension"],
                                   [[r[c] for c in pred_cols] + [int(r["method"] in EXTENSION_METHODS)]
                                    for r in report.prediction]),
        "optimization_metrics.csv": (opt_cols, [[r[c] for c in opt_cols] for r in report.optimization]),
        "forecast_error_by_method.csv": (["method", "n_runs", "mae", "mse"],
                             [[r["method"], r["n_runs"], r["mae"], r["mse"]] for r in report.method_summary()]),
        "forecast_hourly.csv": (["run_id", "method", "bs_id", "date", "hour", "value", "truth"], report.hourly),
        "episode_curves.csv": (["run_id", "method", "episode", "mean_power_w", "smoothed_power_w",
                               "service_quality", "mean_reward"], report.episodes),
    }
    paths = []
    for name, (header, rows) in files.items():
        _write(out / name, header, rows)
        paths.append(out / name)
    path = out / "report.json"
    path.write_text(json.dumps(_rounded(report.to_dict()), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(path)
    return paths


def build_report(runs_dir, out) -> Report:
    rep = collect(runs_dir)
    write_report(rep, out)
    return rep
