"""Deterministic stand-ins for a live LLM, used offline and in CI.

* :func:`greedy_oracle` answers the brute-force best power decision for
  the environment's current snapshot.
* :func:`scaled_truth_mock` answers ``truth * factor(i)`` on refinement
  round ``i``; it needs the ground truth, so it only exercises the loop.
* :func:`feedback_following_mock` never sees the ground truth: it repeats
  the prior day, and once feedback arrives rebuilds the forecast from the
  ground-truth harmonic numbers quoted in that feedback.
"""
from __future__ import annotations

import re

import numpy as np

from netprompt.llm import ChatRequest, FunctionProvider
from netprompt.tspredict.feedback import HarmonicFit
from netprompt.tspredict.prompts import format_values, parse_forecast

_TARGET = re.compile(r"predict hourly traffic for (\S+?)\.")
_NUM = r"(-?\d+(?:\.\d+)?)"
_HARMONIC = re.compile(r"harmonic (\d+) \(period [^)]*\): ground truth amplitude \S+, peak at \S+ h, "
                       rf"cos {_NUM}, sin {_NUM}")
_TRUE_MEAN = re.compile(rf"ground-truth daily mean is {_NUM}")


def greedy_oracle(env) -> FunctionProvider:
    return FunctionProvider(lambda request: f"Decision_{env.best_action_index() + 1}")


def _question_index(request: ChatRequest) -> int:
    for i in range(len(request.messages) - 1, -1, -1):
        m = request.messages[i]
        if m.role == "user" and "QUESTION:" in m.content:
            return i
    raise ValueError("request holds no forecasting question")


def _round_of(request: ChatRequest, q: int) -> int:
    return 1 + sum(1 for m in request.messages[q + 1:] if m.role == "assistant")


def scaled_truth_mock(truth_by_date: dict, factor=lambda i: 1.0 + 0.5 / i) -> FunctionProvider:
    def respond(request: ChatRequest) -> str:
        q = _question_index(request)
        date = _TARGET.search(request.messages[q].content).group(1)
        i = _round_of(request, q)
        return format_values(np.asarray(truth_by_date[date], dtype=np.float64) * factor(i))

    return FunctionProvider(respond)


def _prior_values(question: str) -> np.ndarray:
    data = question.split("DATA:", 1)[1].split("QUESTION:", 1)[0]
    return parse_forecast(data).values


def feedback_following_mock() -> FunctionProvider:
    def respond(request: ChatRequest) -> str:
        q = _question_index(request)
        values = _prior_values(request.messages[q].content)
        feedback = [m.content for m in request.messages[q + 1:] if m.role == "user" and m.content.startswith("FEEDBACK:")]
        if feedback:
            text = feedback[-1]
            coeffs = sorted((int(h), float(a), float(b)) for h, a, b in _HARMONIC.findall(text))
            mean = _TRUE_MEAN.search(text)
            if coeffs and mean:
                fit = HarmonicFit(float(mean.group(1)), np.array([c[1] for c in coeffs]),
                                  np.array([c[2] for c in coeffs]))
                values = np.maximum(fit.reconstruct(), 0.0)
        return format_values(values)

    return FunctionProvider(respond)


def persistence_mock() -> FunctionProvider:
    """Repeats the prior day's values, ignoring any feedback."""
    return FunctionProvider(lambda request: format_values(_prior_values(request.messages[_question_index(request)].content)))
