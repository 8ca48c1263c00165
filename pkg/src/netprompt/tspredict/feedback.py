"""Feedback on a 24-hour forecast and the matching refinement instructions.

Periodicity is judged by least-squares projection of both series onto the
first ``H`` daily harmonics; the numbers are computed here and handed to
the LLM as text.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from netprompt.tspredict.prompts import HOURS, Forecast, hour_label

NN_SUGGESTION = re.compile(r"neural[ -]network|\blstm\b|deep learning|train(?:ing)?\s+a\s+(?:new\s+)?model",
                           re.IGNORECASE)
ACCEPT_TOL = 0.005


class FeedbackInputError(ValueError):
    pass


@dataclass(frozen=True)
class HarmonicFit:
    mean: float
    a: np.ndarray     # cosine coefficients, harmonic 1..H
    b: np.ndarray     # sine coefficients

    @property
    def amplitude(self) -> np.ndarray:
        return np.hypot(self.a, self.b)

    @property
    def phase(self) -> np.ndarray:
        """Radians; ``a cos(wt) + b sin(wt) = A cos(wt - phase)``."""
        return np.arctan2(self.b, self.a)

    @property
    def peak_hour(self) -> np.ndarray:
        """Hour of the first maximum of each harmonic, in ``[0, 24/h)``."""
        h = np.arange(1, self.a.size + 1)
        period = HOURS / h
        return np.mod(self.phase / (2 * np.pi) * period, period)

    def reconstruct(self, t=None) -> np.ndarray:
        t = np.arange(HOURS) if t is None else np.asarray(t, dtype=np.float64)
        out = np.full(t.shape, self.mean, dtype=np.float64)
        for h in range(1, self.a.size + 1):
            w = 2 * np.pi * h * t / HOURS
            out += self.a[h - 1] * np.cos(w) + self.b[h - 1] * np.sin(w)
        return out


def harmonic_fit(values, n_harmonics: int = 3) -> HarmonicFit:
    """Least-squares fit of ``mean + sum_h a_h cos + b_h sin`` on the hourly grid.

    For ``H <= 11`` the columns are orthogonal on 24 equispaced points, so
    the fit reduces to the discrete Fourier coefficients.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.shape != (HOURS,) or not np.all(np.isfinite(x)):
        raise FeedbackInputError("harmonic fit needs 24 finite values")
    if not 1 <= n_harmonics <= 11:
        raise FeedbackInputError("harmonic count must lie in 1..11")
    t = np.arange(HOURS)
    h = np.arange(1, n_harmonics + 1)[:, None]
    w = 2 * np.pi * h * t[None, :] / HOURS
    a = (2.0 / HOURS) * (np.cos(w) @ x)
    b = (2.0 / HOURS) * (np.sin(w) @ x)
    return HarmonicFit(float(x.mean()), a, b)


@dataclass
class FeedbackReport:
    mae: float
    truth_fit: HarmonicFit
    pred_fit: HarmonicFit
    format_issues: list[str] = field(default_factory=list)
    missing_hours: list[int] = field(default_factory=list)
    method_note: str = ""
    neural_net_suggestion_dropped: bool = False

    @property
    def n_harmonics(self) -> int:
        return int(self.truth_fit.a.size)

    @property
    def harmonic_truth(self) -> list[tuple[float, float]]:
        return list(zip(self.truth_fit.amplitude.tolist(), self.truth_fit.phase.tolist()))

    @property
    def harmonic_pred(self) -> list[tuple[float, float]]:
        return list(zip(self.pred_fit.amplitude.tolist(), self.pred_fit.phase.tolist()))

    @property
    def mean_delta(self) -> float:
        """Amount the prediction's level must move to match the truth."""
        return self.truth_fit.mean - self.pred_fit.mean

    @property
    def amplitude_delta(self) -> np.ndarray:
        return self.truth_fit.amplitude - self.pred_fit.amplitude

    @property
    def peak_shift_hours(self) -> np.ndarray:
        """Signed shift (truth minus prediction), wrapped into half a period."""
        period = HOURS / np.arange(1, self.n_harmonics + 1)
        d = self.truth_fit.peak_hour - self.pred_fit.peak_hour
        return (d + period / 2) % period - period / 2

    @property
    def coefficient_delta(self) -> np.ndarray:
        """``(H, 2)`` differences of cosine/sine coefficients, truth minus prediction."""
        return np.stack([self.truth_fit.a - self.pred_fit.a, self.truth_fit.b - self.pred_fit.b], axis=1)

    def acceptable(self, tol: float = ACCEPT_TOL) -> bool:
        return self.mae < tol and not self.format_issues


METHOD_NOTE = (
    "The prediction so far adapts the previous day's profile. Adopt a more accurate method: keep the "
    "daily rhythm of peak and off-peak hours, correct the overall level and the size of each daily "
    "cycle using the numbers above, and do not repeat earlier predictions that received the same feedback."
)
NN_DROPPED_NOTE = " A suggestion to develop or train a neural network was disregarded to avoid extra computation."


def compute_feedback(pred: Forecast, truth, n_harmonics: int = 3) -> FeedbackReport:
    truth = np.asarray(truth, dtype=np.float64)
    values = pred.values if isinstance(pred, Forecast) else np.asarray(pred, dtype=np.float64)
    if truth.shape != (HOURS,) or values.shape != (HOURS,):
        raise FeedbackInputError("prediction and ground truth must both hold 24 values")
    mae = float(np.mean(np.abs(values - truth)))
    issues, missing, raw = [], [], ""
    if isinstance(pred, Forecast):
        issues, missing, raw = list(pred.issues), list(pred.missing_hours), pred.raw_text
    dropped = bool(NN_SUGGESTION.search(raw))
    note = METHOD_NOTE + (NN_DROPPED_NOTE if dropped else "")
    return FeedbackReport(mae, harmonic_fit(truth, n_harmonics), harmonic_fit(values, n_harmonics),
                          issues, missing, note, dropped)


def _direction(delta: float, up: str = "Raise", down: str = "Lower") -> str:
    return up if delta > 0 else down


def render_feedback_and_refinement(report: FeedbackReport, tol: float = ACCEPT_TOL) -> tuple[str, str]:
    """Feedback covering the four categories, and imperative refinement steps."""
    tf, pf = report.truth_fit, report.pred_fit
    lines = [
        "FEEDBACK:",
        f"1. Overall performance: the mean absolute error (MAE) between ground truth and the predictions "
        f"is {report.mae:.2f}. The predicted daily mean is {pf.mean:.2f}; the ground-truth daily mean is "
        f"{tf.mean:.2f}.",
        "2. Periodical performance: projecting both series onto daily sine and cosine functions gives",
    ]
    for h in range(report.n_harmonics):
        period = HOURS / (h + 1)
        lines.append(
            f"   harmonic {h + 1} (period {period:g} h): ground truth amplitude {tf.amplitude[h]:.2f}, "
            f"peak at {tf.peak_hour[h]:.2f} h, cos {tf.a[h]:.4f}, sin {tf.b[h]:.4f}; prediction amplitude "
            f"{pf.amplitude[h]:.2f}, peak at {pf.peak_hour[h]:.2f} h, cos {pf.a[h]:.4f}, sin {pf.b[h]:.4f}."
        )
    if report.format_issues:
        lines.append("3. Format and completeness: " + "; ".join(report.format_issues) + ".")
    else:
        lines.append("3. Format and completeness: all 24 hourly values are present and well formatted.")
    lines.append("4. Prediction method: " + report.method_note)
    feedback = "\n".join(lines)

    if report.acceptable(tol):
        return feedback, ("REFINEMENT: The predictions are acceptable; no changes are requested. "
                          "Repeat the previous prediction.")

    steps = []
    dm = report.mean_delta
    if abs(dm) >= tol:
        steps.append(f"{_direction(dm)} the overall traffic level by {abs(dm):.2f} at every hour.")
    amp_d = report.amplitude_delta
    shifts = report.peak_shift_hours
    for h in range(report.n_harmonics):
        period = HOURS / (h + 1)
        if abs(amp_d[h]) >= tol:
            steps.append(f"{_direction(amp_d[h])} the amplitude of harmonic {h + 1} (period {period:g} h) "
                         f"by {abs(amp_d[h]):.2f}.")
        if min(tf.amplitude[h], pf.amplitude[h]) >= tol and abs(shifts[h]) >= tol:
            steps.append(f"Shift the peak of harmonic {h + 1} {'later' if shifts[h] > 0 else 'earlier'} "
                         f"by {abs(shifts[h]):.2f} h.")
    if report.missing_hours:
        steps.append("Provide a value for every missing hour: "
                     + ", ".join(hour_label(h) for h in report.missing_hours) + ".")
    if report.format_issues:
        steps.append("Fix the format: exactly 24 lines 'HH:00: value' from 00:00 to 23:00.")
    if report.mae >= tol and not steps:
        steps.append("Reduce the remaining hour-by-hour errors while keeping the daily pattern.")
    steps.append("Return the refined prediction as exactly 24 lines 'HH:00: value'.")
    refinement = "REFINEMENT: Revise the previous prediction with these steps:\n" + "\n".join(
        f"- {s}" for s in steps)
    return feedback, refinement


def shift_summary(report: FeedbackReport) -> str:
    """One-line digest of a feedback round, used when history is compressed."""
    return (f"MAE {report.mae:.2f}, level change {report.mean_delta:+.2f}, amplitude changes "
            + ", ".join(f"h{h + 1} {d:+.2f}" for h, d in enumerate(report.amplitude_delta)))

