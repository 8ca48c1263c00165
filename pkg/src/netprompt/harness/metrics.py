"""Forecast error metrics and service quality of an optimization run."""
from __future__ import annotations

import numpy as np

from netprompt.runlog import RunLog


class MetricInputError(ValueError):
    pass


def _pair(pred, truth):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size == 0 or p.size != t.size:
        raise MetricInputError(f"need equal nonzero lengths, got {p.size} and {t.size}")
    return p, t


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean((p - t) ** 2))


def service_quality(run_log: RunLog) -> float:
    """Fraction of steps in which every base station met the rate floor."""
    if not run_log.steps:
        raise MetricInputError("run log has no steps")
    return sum(not s.violation for s in run_log.steps) / len(run_log.steps)


def smooth(values, window: int = 5) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
