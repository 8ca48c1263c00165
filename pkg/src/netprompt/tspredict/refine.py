"""Self-refinement loop for next-day traffic forecasts.

On validation days the answer is critiqued and refined until the MAE stops
improving; every round appends the previous answer, its feedback and the
refinement request to the conversation.  Test days are answered in one
shot, optionally with the last validation conversation as context.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from netprompt import llm as llm_mod
from netprompt.llm import ChatMessage, ChatRequest
from netprompt.tspredict.feedback import compute_feedback, render_feedback_and_refinement, shift_summary
from netprompt.tspredict.prompts import Forecast, ForecastParseError, parse_forecast, render_prediction_prompts

logger = logging.getLogger(__name__)

SYSTEM_PROMPT = "You are an assistant that forecasts hourly cellular network traffic."
FORMAT_REMINDER = ("Your answer could not be read. Reply with exactly 24 lines 'HH:00: value' "
                   "for hours 00:00 to 23:00 and nothing else.")


@dataclass
class ForecastDay:
    date: str
    prior: np.ndarray
    prior_date: str = ""
    truth: np.ndarray | None = None


def make_days(day_matrix, dates, first: int = 1) -> list[ForecastDay]:
    """Consecutive-day pairs: day ``d`` is predicted from day ``d - 1``."""
    day_matrix = np.asarray(day_matrix, dtype=np.float64)
    return [ForecastDay(str(dates[d]), day_matrix[d - 1], str(dates[d - 1]), day_matrix[d])
            for d in range(first, len(day_matrix))]


@dataclass
class RefineConfig:
    max_iters: int = 5
    tol: float = 0.01
    n_harmonics: int = 3
    token_budget: int = 100_000
    carry_validation_context: bool = True
    model: str = "mock"
    temperature: float = llm_mod.DEFAULT_PREDICT_TEMPERATURE
    max_tokens: int = 1024
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass
class DayLog:
    date: str
    phase: str
    maes: list[float] = field(default_factory=list)
    best_mae: float | None = None
    best_iteration: int = 0
    stop_reason: str = ""
    failed: bool = False
    n_messages: int = 0
    compressed_rounds: int = 0

    @property
    def iterations(self) -> int:
        return len(self.maes)


@dataclass
class RefineLog:
    days: list[DayLog] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "days": [{**asdict(d), "iterations": d.iterations} for d in self.days]}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def approx_tokens(messages) -> int:
    return sum(len(m.content) for m in messages) // 4


class _Conversation:
    """Message list plus the bookkeeping needed to summarize old rounds."""

    def __init__(self, head: list[ChatMessage]):
        self.head = head
        self.rounds: list[list[ChatMessage]] = []
        self.summaries: list[str] = []
        self.digests: list[str] = []
        self.compressed = 0

    def messages(self) -> list[ChatMessage]:
        out = list(self.head)
        for s in self.summaries:
            out.append(ChatMessage("user", s))
        for r in self.rounds:
            out.extend(r)
        return out

    def add_round(self, answer: str, feedback: str, refinement: str, digest: str) -> None:
        self.rounds.append([ChatMessage("assistant", answer or "(empty)"), ChatMessage("user", feedback),
                            ChatMessage("user", refinement)])
        self.digests.append(digest)

    def compress(self, budget: int) -> None:
        while approx_tokens(self.messages()) > budget and len(self.rounds) > 1:
            self.rounds.pop(0)
            digest = self.digests.pop(0)
            self.compressed += 1
            self.summaries.append(f"Summary of earlier refinement round {self.compressed}: {digest}.")


def _request(messages, cfg: RefineConfig) -> ChatRequest:
    return ChatRequest(tuple(messages), model=cfg.model, temperature=cfg.temperature, max_tokens=cfg.max_tokens)


def _ask_and_parse(provider, messages, cfg: RefineConfig, target: str):
    """One answer, with a single format reminder if it cannot be parsed."""
    text = provider.complete(_request(messages, cfg))
    try:
        return parse_forecast(text, target), text
    except ForecastParseError as exc:
        logger.info("unparseable forecast for %s (%s); reminding", target, exc)
    retry = list(messages) + [ChatMessage("assistant", text or "(empty)"), ChatMessage("user", FORMAT_REMINDER)]
    text2 = provider.complete(_request(retry, cfg))
    try:
        return parse_forecast(text2, target), text2
    except ForecastParseError:
        return None, text2


def _head(day: ForecastDay, example, context: list[ChatMessage] | None = None) -> list[ChatMessage]:
    ps = render_prediction_prompts(day.prior, day.date, day.prior_date, example)
    msgs = [ChatMessage("system", SYSTEM_PROMPT)]
    if context:
        msgs.extend(context)
    msgs.append(ChatMessage("user", ps.text))
    return msgs


def refine_day(provider, day: ForecastDay, cfg: RefineConfig, example=None):
    """Run the feedback/refinement loop on one validation day.

    Returns ``(best_forecast or None, DayLog, final message list)``.
    """
    if day.truth is None:
        raise ValueError(f"validation day {day.date} has no ground truth")
    log = DayLog(day.date, "validation")
    conv = _Conversation(_head(day, example))
    fc, text = _ask_and_parse(provider, conv.messages(), cfg, day.date)
    if fc is None:
        log.failed, log.stop_reason = True, "parse-failure"
        log.n_messages = len(conv.messages())
        return None, log, conv.messages()
    best, best_mae = fc, None
    prev_mae = None
    log.stop_reason = "max-iters"
    while True:
        report = compute_feedback(fc, day.truth, cfg.n_harmonics)
        mae = report.mae
        log.maes.append(mae)
        if best_mae is None or mae < best_mae:
            best, best_mae, log.best_iteration = fc, mae, len(log.maes)
        if report.acceptable():
            log.stop_reason = "acceptable"
            break
        if prev_mae is not None and (prev_mae - mae) / prev_mae < cfg.tol:
            log.stop_reason = "converged"
            break
        if len(log.maes) >= cfg.max_iters:
            break
        prev_mae = mae
        feedback, refinement = render_feedback_and_refinement(report)
        conv.add_round(text, feedback, refinement, shift_summary(report))
        conv.compress(cfg.token_budget)
        nxt, text = _ask_and_parse(provider, conv.messages(), cfg, day.date)
        if nxt is None:
            log.stop_reason = "parse-failure"
            break
        fc = nxt
    log.best_mae = best_mae
    log.n_messages = len(conv.messages())
    log.compressed_rounds = conv.compressed
    final = conv.messages() + [ChatMessage("assistant", text or "(empty)")]
    return best, log, final


def run_self_refine(provider, val_days: list[ForecastDay], test_days: list[ForecastDay],
                    cfg: RefineConfig | None = None, example=None):
    """Refine on validation days, then answer test days without feedback.

    Returns ``(val_forecasts, test_forecasts, RefineLog)``; failed days map
    to ``None``.
    """
    cfg = cfg or RefineConfig()
    log = RefineLog(config=asdict(cfg))

    def one(day):
        return refine_day(provider, day, cfg, example)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(one, val_days))
    else:
        results = [one(d) for d in val_days]
    val_fc = []
    context = None
    for fc, day_log, msgs in results:
        val_fc.append(fc)
        log.days.append(day_log)
        if fc is not None:
            context = msgs
    ctx = None
    if cfg.carry_validation_context and context is not None:
        ctx = [m for m in context if m.role != "system"]
        while len(ctx) > 2 and approx_tokens(ctx) > cfg.token_budget:
            ctx = ctx[:1] + ctx[2:]
    test_fc = []
    for day in test_days:
        fc, _ = _ask_and_parse(provider, _head(day, example, ctx), cfg, day.date)
        entry = DayLog(day.date, "test", stop_reason="inference", failed=fc is None)
        if fc is not None and day.truth is not None:
            mae = float(np.mean(np.abs(fc.values - day.truth)))
            entry.maes, entry.best_mae, entry.best_iteration = [mae], mae, 1
        log.days.append(entry)
        test_fc.append(fc)
    return val_fc, test_fc, log


def run_plain_prompt(provider, days: list[ForecastDay], cfg: RefineConfig | None = None, example=None):
    """Single-shot prompting without feedback (the plain LLM baseline)."""
    cfg = cfg or RefineConfig()
    log = RefineLog(config={**asdict(cfg), "method": "llm-plain"})
    out: list[Forecast | None] = []
    for day in days:
        fc, _ = _ask_and_parse(provider, _head(day, example), cfg, day.date)
        entry = DayLog(day.date, "test", stop_reason="inference", failed=fc is None)
        if fc is not None and day.truth is not None:
            mae = float(np.mean(np.abs(fc.values - day.truth)))
            entry.maes, entry.best_mae, entry.best_iteration = [mae], mae, 1
        log.days.append(entry)
        out.append(fc)
    return out, log
