"""Question-answer prompts for next-day traffic and parsing of the answers."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import date

import numpy as np

HOURS = 24
_LABELED = re.compile(
    r"^\s*(?:[-*•]\s*)?(?:\d{4}-\d{2}-\d{2}[ T])?(\d{1,2}):(\d{2})(?::\d{2})?\s*(?:h\b)?\s*[:=\-–|,]?\s*"
    r"(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)"
)
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")
_BRACKETS = re.compile(r"\[([^\[\]]*)\]")
_BARE = re.compile(r"^\s*(?:[-*•]\s*)?(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*,?\s*$")


class ForecastParseError(ValueError):
    def __init__(self, found: int, message: str = ""):
        super().__init__(message or f"found {found} of {HOURS} hourly values")
        self.found = found


class PromptInputError(ValueError):
    pass


def hour_label(h: int) -> str:
    return f"{h:02d}:00"


def format_values(values) -> str:
    return "\n".join(f"{hour_label(h)}: {v:.2f}" for h, v in enumerate(values))


@dataclass(frozen=True)
class PromptSet:
    demonstration: str
    data: str
    query: str
    prior_date: str = ""
    target_date: str = ""

    @property
    def text(self) -> str:
        return (f"{self.demonstration}\n\nDATA: hourly traffic on {self.prior_date}:\n{self.data}\n\n"
                f"{self.query}")


DEMO_FRAMING = (
    "DEMONSTRATION: You are forecasting cellular network traffic. Each question gives the hourly "
    "traffic of one base station for one day and asks for the hourly traffic of the following day. "
    "Traffic has a daily rhythm with quiet night hours and busy day hours. Answer with exactly 24 "
    "lines of the form 'HH:00: value', one for every hour from 00:00 to 23:00, with two decimals "
    "and nothing else."
)


def _check_day(values, what: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (HOURS,) or not np.all(np.isfinite(v)):
        raise PromptInputError(f"{what} must hold 24 finite hourly values")
    return v


def render_prediction_prompts(prior_day, target_date: date | str, prior_date: date | str | None = None,
                              example: tuple | None = None) -> PromptSet:
    """Render demonstration, data and query prompts for one forecast day.

    ``example`` is an optional ``(example_prior, example_next, prior_date,
    next_date)`` worked example included in the demonstration prompt.
    """
    values = _check_day(prior_day, "prior day")
    target = str(target_date)
    prior = str(prior_date) if prior_date is not None else "the previous day"
    demo = DEMO_FRAMING
    if example is not None:
        ex_prior, ex_next, ex_d0, ex_d1 = example
        ex_prior = _check_day(ex_prior, "example prior day")
        ex_next = _check_day(ex_next, "example next day")
        demo += (f"\nExample question: hourly traffic on {ex_d0} was "
                 + ", ".join(f"{hour_label(h)} {v:.2f}" for h, v in enumerate(ex_prior))
                 + f". Predict hourly traffic for {ex_d1}.\nExample answer: "
                 + ", ".join(f"{hour_label(h)} {v:.2f}" for h, v in enumerate(ex_next)) + ".")
    query = (f"QUESTION: Based on the data above, predict hourly traffic for {target}. "
             "Give all 24 hourly values.\nANSWER:")
    return PromptSet(demo, format_values(values), query, prior, target)


@dataclass
class Forecast:
    values: np.ndarray
    target_date: str = ""
    missing_hours: list[int] = field(default_factory=list)
    extra_hours: list[int] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)
    raw_text: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (HOURS,):
            raise ValueError("a forecast holds exactly 24 values")


def _finish(values: list[float], target_date, missing, extra, issues, text) -> Forecast:
    arr = np.array(values[:HOURS], dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ForecastParseError(int(np.isfinite(arr).sum()), "non-finite value in forecast")
    if np.any(arr < 0):
        neg = [h for h in range(HOURS) if arr[h] < 0]
        issues.append("negative values clipped to 0 at " + ", ".join(hour_label(h) for h in neg))
        arr = np.maximum(arr, 0.0)
    return Forecast(arr, str(target_date or ""), missing, extra, issues, text)


def parse_forecast(text: str, target_date: date | str | None = None) -> Forecast:
    """Extract 24 hourly values from an LLM answer.

    Accepts ``HH:MM: value`` lines (any order), a bracketed/JSON list, or
    one bare number per line.  Mislabelled, missing or surplus hours are
    recorded in the returned forecast; fewer than 24 values raise
    :class:`ForecastParseError`.
    """
    text = text or ""
    labeled = []
    for line in text.splitlines():
        m = _LABELED.match(line)
        if m:
            labeled.append((int(m.group(1)), float(m.group(3))))
    issues: list[str] = []
    if labeled:
        by_hour: dict[int, float] = {}
        surplus: list[int] = []
        for h, v in labeled:
            if 0 <= h < HOURS and h not in by_hour:
                by_hour[h] = v
            else:
                surplus.append(h)
        if len(by_hour) == HOURS:
            if surplus:
                issues.append("extra values for hours " + ", ".join(f"{h:02d}:00" for h in surplus))
            return _finish([by_hour[h] for h in range(HOURS)], target_date, [], surplus, issues, text)
        if len(labeled) < HOURS:
            raise ForecastParseError(len(labeled))
        missing = [h for h in range(HOURS) if h not in by_hour]
        issues.append("missing hours " + ", ".join(hour_label(h) for h in missing))
        if surplus:
            issues.append("duplicate or invalid hour labels " + ", ".join(f"{h:02d}:00" for h in surplus))
        if len(labeled) > HOURS:
            issues.append(f"{len(labeled) - HOURS} values beyond 24 ignored")
        return _finish([v for _, v in labeled], target_date, missing, surplus, issues, text)

    candidates: list[list[float]] = []
    for m in _BRACKETS.finditer(text):
        try:
            arr = json.loads("[" + m.group(1) + "]")
            nums = [float(x) for x in arr]
        except (ValueError, TypeError):
            nums = [float(x) for x in _NUMBER.findall(m.group(1))]
        candidates.append(nums)
    bare = [float(m.group(1)) for m in map(_BARE.match, text.splitlines()) if m]
    if bare:
        candidates.append(bare)
    if not candidates:
        raise ForecastParseError(0)
    best = max(candidates, key=len)
    if len(best) < HOURS:
        raise ForecastParseError(len(best))
    extra = []
    if len(best) > HOURS:
        issues.append(f"{len(best) - HOURS} values beyond 24 ignored")
        extra = list(range(HOURS, len(best)))
    if any(not math.isfinite(v) for v in best[:HOURS]):
        raise ForecastParseError(sum(math.isfinite(v) for v in best[:HOURS]), "non-finite value in forecast")
    return _finish(best, target_date, [], extra, issues, text)
