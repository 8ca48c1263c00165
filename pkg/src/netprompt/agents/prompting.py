"""Iterative prompting for power control.

Each decision goes through: observe the state, pick similar past
experiences as recommended/inadvisable demonstrations, render the task
prompt, ask the LLM for a ``Decision_i`` label, act, and append the
outcome to the experience pool.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from netprompt import llm as llm_mod
from netprompt.netsim import Action, EnvState, PowerControlEnv
from netprompt.runlog import RunLog, StepRecord

logger = logging.getLogger(__name__)

SYSTEM_PROMPT = "You are an assistant for wireless network management. Follow the task description exactly."
COT_PREAMBLE = "Let's think step by step."
_DECISION_RE = re.compile(r"Decision_([0-9]+)")


class DecisionParseError(ValueError):
    pass


class RunAborted(RuntimeError):
    """Raised when the LLM provider keeps failing; ``log`` holds the partial run."""

    def __init__(self, message: str, log: RunLog):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class Experience:
    state: EnvState
    action: Action
    reward: float
    episode: int = 0
    step: int = 0
    action_index: int = -1


class ExperiencePool:
    """Append-only experience store with running per-feature min/max."""

    def __init__(self):
        self.records: list[Experience] = []
        self._feats: list[np.ndarray] = []
        self.mins: np.ndarray | None = None
        self.maxs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def add(self, exp: Experience) -> None:
        if not math.isfinite(exp.reward):
            raise ValueError("experience reward must be finite")
        v = exp.state.vector()
        self.records.append(exp)
        self._feats.append(v)
        if self.mins is None:
            self.mins, self.maxs = v.copy(), v.copy()
        else:
            np.minimum(self.mins, v, out=self.mins)
            np.maximum(self.maxs, v, out=self.maxs)

    def features(self) -> np.ndarray:
        return np.array(self._feats)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - self.mins) / safe, 0.0)


@dataclass
class DemonstrationSet:
    recommended: list[Experience] = field(default_factory=list)
    inadvisable: list[Experience] = field(default_factory=list)
    recommended_idx: list[int] = field(default_factory=list)
    inadvisable_idx: list[int] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.recommended or self.inadvisable)


def select_demonstrations(pool: ExperiencePool, state: EnvState, k: int) -> DemonstrationSet:
    """Nearest ``4k`` pool entries by normalized distance, split top/bottom ``k`` by reward.

    With fewer than ``2k`` entries the whole pool is split at the reward
    median instead (the upper half, rounded up, is recommended).  Both
    lists come back in pool order.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    n = len(pool)
    if k == 0 or n == 0:
        return DemonstrationSet()
    rewards = [e.reward for e in pool.records]
    if n < 2 * k:
        by_reward = sorted(range(n), key=lambda i: (-rewards[i], i))
        n_rec = (n + 1) // 2
        rec, bad = by_reward[:n_rec], by_reward[n_rec:]
    else:
        feats = pool.normalize(pool.features())
        q = pool.normalize(state.vector())
        # Column-wise accumulation keeps the summation order fixed.
        d2 = np.zeros(n)
        for j in range(feats.shape[1]):
            d2 += (feats[:, j] - q[j]) ** 2
        near = np.argsort(d2, kind="stable")[: min(4 * k, n)].tolist()
        rec = sorted(near, key=lambda i: (-rewards[i], i))[:k]
        chosen = set(rec)
        rest = [i for i in near if i not in chosen]
        bad = sorted(rest, key=lambda i: (rewards[i], i))[:k]
    rec, bad = sorted(rec), sorted(bad)
    return DemonstrationSet(
        [pool.records[i] for i in rec], [pool.records[i] for i in bad], rec, bad,
    )


@dataclass(frozen=True)
class PromptBundle:
    task_goal: str
    definitions: str
    rules: str
    demonstrations: str
    new_case: str

    @property
    def text(self) -> str:
        parts = [self.task_goal, self.definitions, self.rules]
        if self.demonstrations:
            parts.append(self.demonstrations)
        parts.append(self.new_case)
        return "\n\n".join(parts)


def _fmt_list(values, spec=".2f") -> str:
    return "[" + ", ".join(format(v, spec) if isinstance(v, float) else str(v) for v in values) + "]"


def format_state(state: EnvState) -> str:
    return (f"users_per_bs={_fmt_list(state.users_per_bs)}, "
            f"mean_gain_db={_fmt_list(state.mean_gain_db)}, "
            f"mean_interf_gain_db={_fmt_list(state.mean_interf_gain_db)}")


def decision_label(index: int) -> str:
    return f"Decision_{index + 1}"


def render_task_prompt(state: EnvState, decision_set: list[Action], demos: DemonstrationSet,
                       power_levels, rate_threshold_bps: float = 1.5e6,
                       chain_of_thought: bool = False) -> PromptBundle:
    if not decision_set:
        raise ValueError("decision set is empty")
    n_bs = len(state.users_per_bs)
    index_of = {a: i for i, a in enumerate(decision_set)}

    goal = (
        "TASK GOAL: This is a decision-making task for base station power control. "
        f"{n_bs} adjacent base stations serve a changing number of users. "
        "Choose one of the candidate decisions, which fixes the transmit power of every base station, "
        "so that total power consumption is as low as possible while the average data rate of each "
        f"base station's users stays above {rate_threshold_bps / 1e6:g} Mbps per user."
    )
    lines = [
        "DEFINITIONS: The environment states are:",
        "- users_per_bs: number of users served by each base station (count).",
        "- mean_gain_db: average channel gain from each base station to its own users (dB).",
        "- mean_interf_gain_db: average channel gain from the other base stations to each base station's users (dB).",
        "- reward: minus the total transmit power (W), minus a penalty when a base station misses the rate "
        "threshold; higher is better.",
        "The candidate decisions are:",
    ]
    for i, a in enumerate(decision_set):
        powers = ", ".join(f"BS{b + 1}={power_levels[j]:g} W" for b, j in enumerate(a.level_index_per_bs))
        lines.append(f"{decision_label(i)}: {powers}")
    definitions = "\n".join(lines)

    labels = "{" + ", ".join(decision_label(i) for i in range(len(decision_set))) + "}"
    rules = (f"RULES: The answer must be exactly one label from {labels}. "
             "Recommended demonstrations achieved high rewards in similar states; inadvisable "
             "demonstrations achieved low rewards and should be avoided.")

    demo_lines: list[str] = []
    for title, group in (("Recommended demonstrations:", demos.recommended),
                         ("Inadvisable demonstrations:", demos.inadvisable)):
        if not group:
            continue
        demo_lines.append(title)
        for n, e in enumerate(group, 1):
            idx = e.action_index if e.action_index >= 0 else index_of[e.action]
            demo_lines.append(f"Example {n}: state: {format_state(e.state)} -> decision: "
                              f"{decision_label(idx)} -> reward: {e.reward:.2f}")
    demonstrations = "DEMONSTRATIONS:\n" + "\n".join(demo_lines) if demo_lines else ""

    closing = (f"Select from {labels} based on above examples. "
               "Output exactly one decision label in the form Decision_i.")
    if chain_of_thought:
        closing = (f"{COT_PREAMBLE} Reason about the rates each base station needs, then "
                   f"select from {labels} based on above examples and finish with exactly one "
                   "decision label in the form Decision_i.")
    new_case = ("NEW CASE: Here is a new case to solve, and the current environment state is: "
                f"{format_state(state)}.\n{closing}")
    return PromptBundle(goal, definitions, rules, demonstrations, new_case)


def parse_decision(text: str, n: int) -> int:
    """Zero-based index of the last ``Decision_<i>`` with ``1 <= i <= n``."""
    if n < 1:
        raise ValueError("decision set size must be >= 1")
    matches = _DECISION_RE.findall(text or "")
    if not matches:
        raise DecisionParseError("no Decision_<i> label found")
    i = int(matches[-1])
    if not 1 <= i <= n:
        raise DecisionParseError(f"Decision_{i} outside 1..{n}")
    return i - 1


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear anneal from ``start`` to ``end`` over the first ``anneal_fraction`` of episodes."""

    start: float = 0.3
    end: float = 0.05
    anneal_fraction: float = 0.5

    def value(self, episode: int, episodes: int) -> float:
        horizon = max(1.0, self.anneal_fraction * episodes)
        frac = min(1.0, episode / horizon)
        return self.start + (self.end - self.start) * frac


class _Explorer:
    """Exploration decisions and random actions.

    ``stratified``: a step explores whenever the running sum of epsilon
    crosses an integer, and exploratory actions are drawn from a reshuffled
    bag holding every action once.  ``bernoulli``: independent coin flips
    and uniform draws.
    """

    def __init__(self, n_actions: int, rng: np.random.Generator, mode: str):
        if mode not in ("stratified", "bernoulli"):
            raise ValueError(f"unknown exploration mode {mode!r}")
        self.n = n_actions
        self.rng = rng
        self.mode = mode
        self._acc = 0.0
        self._bag: list[int] = []

    def explore(self, eps: float) -> bool:
        if self.mode == "bernoulli":
            return bool(self.rng.random() < eps)
        self._acc += eps
        if self._acc >= 1.0 - 1e-12:
            self._acc -= 1.0
            return True
        return False

    def random_action(self) -> int:
        if self.mode == "bernoulli":
            return int(self.rng.integers(self.n))
        if not self._bag:
            self._bag = self.rng.permutation(self.n).tolist()
        return self._bag.pop()


@dataclass
class PromptingConfig:
    episodes: int = 50
    steps_per_episode: int = 20
    k: int = 5
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    exploration: str = "stratified"
    chain_of_thought: bool = False
    model: str = "mock"
    temperature: float = llm_mod.DEFAULT_OPTIMIZE_TEMPERATURE
    max_tokens: int = 256
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes, "steps_per_episode": self.steps_per_episode, "k": self.k,
            "epsilon": {"start": self.epsilon.start, "end": self.epsilon.end,
                        "anneal_fraction": self.epsilon.anneal_fraction},
            "exploration": self.exploration, "chain_of_thought": self.chain_of_thought,
            "model": self.model, "temperature": self.temperature, "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


def _ask(provider, messages, cfg: PromptingConfig) -> str:
    req = llm_mod.ChatRequest(tuple(messages), model=cfg.model, temperature=cfg.temperature,
                              max_tokens=cfg.max_tokens)
    return provider.complete(req)


def choose_with_llm(provider, env: PowerControlEnv, state: EnvState, demos: DemonstrationSet,
                    cfg: PromptingConfig, rng: np.random.Generator) -> tuple[int, str]:
    """Ask for a decision; retry once on an unparseable answer, then fall back."""
    bundle = render_task_prompt(state, env.actions, demos, env.config.power_levels,
                                env.config.rate_threshold_bps, cfg.chain_of_thought)
    messages = [llm_mod.ChatMessage("system", SYSTEM_PROMPT), llm_mod.ChatMessage("user", bundle.text)]
    n = env.n_actions
    text = _ask(provider, messages, cfg)
    try:
        return parse_decision(text, n), "llm"
    except DecisionParseError:
        logger.info("unparseable decision %r; retrying with a reminder", text[:80])
    messages += [
        llm_mod.ChatMessage("assistant", text or "(empty)"),
        llm_mod.ChatMessage("user", f"Reply with one label only, Decision_1 to Decision_{n}."),
    ]
    text = _ask(provider, messages, cfg)
    try:
        return parse_decision(text, n), "llm-retry"
    except DecisionParseError:
        pass
    if demos.recommended:
        best = max(demos.recommended, key=lambda e: e.reward)
        idx = best.action_index if best.action_index >= 0 else env.action_index(best.action)
        return idx, "fallback-demo"
    return int(rng.integers(n)), "fallback-random"


def run_iterative_prompting(env: PowerControlEnv, provider, cfg: PromptingConfig | None = None,
                            pool: ExperiencePool | None = None) -> RunLog:
    cfg = cfg or PromptingConfig()
    pool = pool if pool is not None else ExperiencePool()
    rng = np.random.default_rng(cfg.seed)
    explorer = _Explorer(env.n_actions, rng, cfg.exploration)
    log = RunLog("llm", {"network": env.config.to_dict(), "agent": cfg.to_dict()})
    for ep in range(cfg.episodes):
        if ep:
            env.new_episode()
        eps = cfg.epsilon.value(ep, cfg.episodes)
        for s in range(cfg.steps_per_episode):
            state = env.observe()
            if explorer.explore(eps):
                idx, source = explorer.random_action(), "explore"
            else:
                demos = select_demonstrations(pool, state, cfg.k)
                try:
                    idx, source = choose_with_llm(provider, env, state, demos, cfg, rng)
                except llm_mod.LLMError as exc:
                    log.error = f"{type(exc).__name__}: {exc}"
                    raise RunAborted(f"LLM provider failed at episode {ep} step {s}: {exc}", log) from exc
            action = env.actions[idx]
            out = env.step(action)
            pool.add(Experience(state, action, out.reward, ep, s, idx))
            log.add(StepRecord(ep, s, idx, out.total_power_w, out.reward, out.violation,
                               explored=source == "explore", source=source))
    log.complete = True
    return log


def run_random(env: PowerControlEnv, episodes: int, steps_per_episode: int, seed: int = 0) -> RunLog:
    rng = np.random.default_rng(seed)
    log = RunLog("random", {"network": env.config.to_dict(),
                            "agent": {"episodes": episodes, "steps_per_episode": steps_per_episode, "seed": seed}})
    for ep in range(episodes):
        if ep:
            env.new_episode()
        for s in range(steps_per_episode):
            idx = int(rng.integers(env.n_actions))
            out = env.step(env.actions[idx])
            log.add(StepRecord(ep, s, idx, out.total_power_w, out.reward, out.violation,
                               explored=True, source="random"))
    log.complete = True
    return log
