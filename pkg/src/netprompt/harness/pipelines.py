"""Experiment runs that persist their outputs into a run directory.

Every run directory holds ``config.json`` (with a ``kind`` of ``optimize``
or ``predict``) and, once the run finished, an empty ``DONE`` file.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from netprompt import baselines, mocks
from netprompt.agents.dqn import run_dqn
from netprompt.agents.prompting import RunAborted, run_iterative_prompting, run_random
from netprompt.harness.config import OptimizeConfig
from netprompt.harness.metrics import mae, mse
from netprompt.netsim import create_env
from netprompt.runlog import HEADER_FILE, SENTINEL, RunLog, fmt
from netprompt.tspredict import (
    MinMaxScaler,
    RefineConfig,
    SplitSpec,
    TrafficSeries,
    aggregate_grid,
    ingest_milan,
    make_days,
    run_plain_prompt,
    run_self_refine,
    split_series,
)

logger = logging.getLogger(__name__)

SERIES_FILE = "series.csv"
FORECAST_FILE = "forecasts.csv"
TRUTH_FILE = "truth.csv"
METRICS_FILE = "metrics.json"
PREDICT_METHODS = ("self-refine", "llm-plain", "arima", "lstm", "naive")
LLM_METHODS = ("self-refine", "llm-plain")


class RunFailed(RuntimeError):
    """A run stopped early; whatever it produced is already on disk."""


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

def run_optimize(agent: str, config: OptimizeConfig, out, provider=None, env=None) -> RunLog:
    """Run one power-control agent and persist its RunLog.

    ``env`` may be passed in when the provider needs to see it (the greedy
    oracle); otherwise it is built from ``config.network``.
    """
    out = Path(out)
    env = env if env is not None else create_env(config.network)
    if agent == "random":
        log = run_random(env, config.episodes, config.steps_per_episode, config.seed)
    elif agent == "dqn":
        log = run_dqn(env, config.dqn(), config.episodes, config.steps_per_episode)
    elif agent == "llm":
        if provider is None:
            raise ValueError("the llm agent needs a provider")
        try:
            log = run_iterative_prompting(env, provider, config.prompting())
        except RunAborted as exc:
            exc.log.save(out)
            raise RunFailed(str(exc)) from exc
    else:
        raise ValueError(f"unknown agent {agent!r}")
    log.save(out)
    return log


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def save_series(series: list[TrafficSeries], out) -> Path:
    """Wide CSV: one row per hour, one column per aggregated station."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ts = series[0].timestamps()
    frame = pd.DataFrame({str(s.bs_id): s.values for s in series})
    frame.insert(0, "timestamp", [t.strftime("%Y-%m-%dT%H:%M:%SZ") for t in ts])
    path = out / SERIES_FILE
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


def load_series(data_dir, bs_id: int) -> TrafficSeries:
    path = Path(data_dir) / SERIES_FILE
    frame = pd.read_csv(path, usecols=["timestamp", str(bs_id)])
    start = pd.Timestamp(frame["timestamp"].iloc[0]).to_pydatetime()
    return TrafficSeries(bs_id, start, frame[str(bs_id)].to_numpy(dtype=np.float64))


def run_ingest(path, out, grid_width: int = 100, block: int = 4) -> dict:
    raw = ingest_milan(path, grid_width=grid_width)
    series = aggregate_grid(raw, block=block)
    save_series(series, out)
    summary = {"source": str(path), "n_rows": raw.n_rows, "n_malformed": raw.n_malformed,
               "n_cells_present": int(raw.present.sum()), "n_series": len(series),
               "n_hours": int(raw.values.shape[1]), "start": series[0].start.isoformat(),
               "grid_width": grid_width, "block": block}
    _write_json(Path(out) / "ingest.json", summary)
    return summary


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

@dataclass
class PredictData:
    """One station's days on the normalized [0, 100] scale."""

    bs_id: int
    scaler: MinMaxScaler
    days: np.ndarray          # (n_days, 24), normalized
    dates: list[str]
    n_train: int
    n_val: int

    @property
    def n_test(self) -> int:
        return len(self.days) - self.n_train - self.n_val


def prepare(series: TrafficSeries, spec: SplitSpec = SplitSpec()) -> PredictData:
    train, val, test = split_series(series, spec)
    scaler = MinMaxScaler.fit(train.values)
    days = np.concatenate([scaler.transform(p.values) for p in (train, val, test)]).reshape(-1, 24)
    dates = [str(d) for p in (train, val, test) for d in p.dates()]
    return PredictData(series.bs_id, scaler, days, dates, len(train.days()), len(val.days()))


def _history(data: PredictData, upto: int) -> np.ndarray:
    """All normalized hours before day ``upto``."""
    return data.days[:upto].ravel()


def _predict_baseline(method: str, data: PredictData, lstm_config=None):
    first_test = data.n_train + data.n_val
    test_idx = range(first_test, len(data.days))
    extra = {}
    if method == "naive":
        preds = [baselines.seasonal_naive(_history(data, d)) for d in test_idx]
    elif method == "arima":
        model = baselines.arima_fit(_history(data, first_test))
        preds = [baselines.arima_forecast(model, _history(data, d)) for d in test_idx]
        extra["arima"] = model.to_dict()
    elif method == "lstm":
        preds, model = baselines.lstm_train_forecast(_history(data, data.n_train),
                                                     [data.days[d - 1] for d in test_idx], lstm_config)
        extra["lstm"] = {"config": asdict(model.config), "final_loss": model.loss_history[-1]}
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return [np.asarray(p) for p in preds], extra


def _predict_llm(method: str, data: PredictData, provider, refine_cfg: RefineConfig, out: Path):
    days = make_days(data.days, data.dates)        # day d predicted from day d - 1
    first_test = data.n_train + data.n_val
    val_days = days[data.n_train - 1:first_test - 1]
    test_days = days[first_test - 1:]
    if method == "self-refine":
        _, fcs, log = run_self_refine(provider, val_days, test_days, refine_cfg)
    else:
        fcs, log = run_plain_prompt(provider, test_days, refine_cfg)
    log.save(out / "refine_log.json")
    preds = [None if fc is None else fc.values for fc in fcs]
    extra = {"validation_best_mae": [d.best_mae for d in log.days if d.phase == "validation"]}
    return preds, extra


def _forecast_rows(bs_id, dates, values_by_day, method):
    for date, values in zip(dates, values_by_day):
        if values is None:
            continue
        for h, v in enumerate(values):
            yield [bs_id, date, h, fmt(v), method]


def _write_forecasts(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bs_id", "date", "hour", "value", "method"])
        w.writerows(rows)


def run_predict(method: str, series: TrafficSeries, out, provider=None, refine_cfg: RefineConfig | None = None,
                lstm_config=None, spec: SplitSpec = SplitSpec(), source: dict | None = None) -> dict:
    """Forecast every test day of one station and persist forecasts plus metrics.

    Errors are reported on the normalized scale; ``forecasts.csv`` holds
    values mapped back to the original traffic units.
    """
    if method not in PREDICT_METHODS:
        raise ValueError(f"unknown method {method!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / SENTINEL).unlink(missing_ok=True)
    data = prepare(series, spec)
    refine_cfg = refine_cfg or RefineConfig()
    header = {"kind": "predict", "method": method, "bs_id": data.bs_id, "split": asdict(spec),
              "scaler": asdict(data.scaler), "source": source or {}, "complete": False}
    if method in LLM_METHODS:
        header["refine"] = asdict(refine_cfg)
    _write_json(out / HEADER_FILE, header)

    first_test = data.n_train + data.n_val
    test_dates = data.dates[first_test:]
    truth = data.days[first_test:]
    _write_forecasts(out / TRUTH_FILE, _forecast_rows(data.bs_id, test_dates,
                                                      data.scaler.inverse(truth), "truth"))
    if method in LLM_METHODS:
        if provider is None:
            raise ValueError(f"method {method} needs a provider")
        try:
            preds, extra = _predict_llm(method, data, provider, refine_cfg, out)
        except Exception as exc:
            header["error"] = f"{type(exc).__name__}: {exc}"
            _write_json(out / HEADER_FILE, header)
            raise RunFailed(header["error"]) from exc
    else:
        preds, extra = _predict_baseline(method, data, lstm_config)

    denorm = [None if p is None else data.scaler.inverse(p) for p in preds]
    _write_forecasts(out / FORECAST_FILE, _forecast_rows(data.bs_id, test_dates, denorm, method))
    ok = [i for i, p in enumerate(preds) if p is not None]
    per_day = [{"date": test_dates[i], "mae": mae(preds[i], truth[i]), "mse": mse(preds[i], truth[i])} for i in ok]
    metrics = {
        "method": method, "bs_id": data.bs_id, "n_days": len(preds), "n_failed": len(preds) - len(ok),
        "mae": float(np.mean([d["mae"] for d in per_day])) if ok else None,
        "mse": float(np.mean([d["mse"] for d in per_day])) if ok else None,
        "per_day": per_day, "scale": "normalized-0-100",
        "days": {"train": data.n_train, "validation": data.n_val, "test": data.n_test},
        **extra,
    }
    _write_json(out / METRICS_FILE, metrics)
    header["complete"] = True
    _write_json(out / HEADER_FILE, header)
    (out / SENTINEL).write_text("", encoding="utf-8")
    return metrics


def llm_mock(name: str, series_truth: dict | None = None):
    """Offline stand-ins selectable from the command line."""
    if name == "feedback-following":
        return mocks.feedback_following_mock()
    if name == "persistence":
        return mocks.persistence_mock()
    if name == "scaled-truth":
        return mocks.scaled_truth_mock(series_truth or {})
    raise ValueError(f"unknown mock {name!r}")


def truth_by_date(series: TrafficSeries, spec: SplitSpec = SplitSpec()) -> dict:
    data = prepare(series, spec)
    return dict(zip(data.dates, data.days))
