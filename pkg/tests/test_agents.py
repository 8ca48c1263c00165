import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from netprompt import llm, mocks
from netprompt.agents import dqn as dqn_mod
from netprompt.agents.dqn import DqnConfig, ReplayBuffer, run_dqn, td_targets
from netprompt.agents.prompting import (
    COT_PREAMBLE,
    DecisionParseError,
    EpsilonSchedule,
    Experience,
    ExperiencePool,
    PromptingConfig,
    RunAborted,
    choose_with_llm,
    parse_decision,
    render_task_prompt,
    run_iterative_prompting,
    run_random,
    select_demonstrations,
)
from netprompt.netsim import Action, EnvState, create_env, toy_config


def make_state(rng, n_bs=3, coarse=False):
    users = tuple(int(u) for u in rng.integers(5, 16, n_bs))
    if coarse:
        # few distinct values, so duplicate states and distance ties show up
        gain = tuple(float(g) for g in rng.choice([-90.0, -80.0], n_bs))
        interf = tuple(float(g) for g in rng.choice([-110.0, -100.0], n_bs))
    else:
        gain = tuple(float(g) for g in rng.uniform(-100, -70, n_bs))
        interf = tuple(float(g) for g in rng.uniform(-120, -90, n_bs))
    return EnvState(users, gain, interf)


def make_pool(rng, n, coarse=False):
    pool = ExperiencePool()
    for i in range(n):
        reward = float(rng.integers(-6, 0)) if rng.random() < 0.5 else float(rng.normal(-5, 2))
        pool.add(Experience(make_state(rng, coarse=coarse), Action((0, 0, 0)), reward, 0, i, 0))
    return pool


def oracle_demos(pool, state, k):
    """Exhaustive search with plain Python: normalize, sort everything by distance, split by reward."""
    n = len(pool.records)
    if k == 0 or n == 0:
        return [], []
    rewards = [e.reward for e in pool.records]
    if n < 2 * k:
        order = sorted(range(n), key=lambda i: (-rewards[i], i))
        half = (n + 1) // 2
        return sorted(order[:half]), sorted(order[half:])
    rows = [list(e.state.vector()) for e in pool.records]
    lo = [min(col) for col in zip(*rows)]
    hi = [max(col) for col in zip(*rows)]

    def norm(v):
        return [(x - a) / (b - a) if b > a else 0.0 for x, a, b in zip(v, lo, hi)]

    q = norm(list(state.vector()))
    dist = [sum((x - y) ** 2 for x, y in zip(norm(r), q)) for r in rows]
    ranked = sorted(range(n), key=lambda i: (dist[i], i))
    near = ranked[:min(4 * k, n)]
    rec = sorted(near, key=lambda i: (-rewards[i], i))[:k]
    rest = [i for i in near if i not in rec]
    bad = sorted(rest, key=lambda i: (rewards[i], i))[:k]
    return sorted(rec), sorted(bad)


# -- demonstration selection ----------------------------------------------

def test_empty_pool_gives_empty_set():
    demos = select_demonstrations(ExperiencePool(), make_state(np.random.default_rng(0)), 3)
    assert not demos
    assert demos.recommended == [] and demos.inadvisable == []


def test_negative_k_rejected():
    with pytest.raises(ValueError):
        select_demonstrations(ExperiencePool(), make_state(np.random.default_rng(0)), -1)


def test_exact_state_is_among_nearest():
    rng = np.random.default_rng(1)
    pool = make_pool(rng, 40)
    target = pool.records[17]
    # k=1 keeps only the four nearest; the exact match is at distance 0
    feats = pool.normalize(pool.features())
    d = np.sum((feats - pool.normalize(target.state.vector())) ** 2, axis=1)
    assert d[17] == 0.0
    demos = select_demonstrations(pool, target.state, 1)
    near = set(np.argsort(d, kind="stable")[:4].tolist())
    assert 17 in near
    assert set(demos.recommended_idx + demos.inadvisable_idx) <= near


def test_crafted_pool_of_twelve():
    # three clusters of states; the query sits on cluster A
    a = EnvState((5, 5, 5), (-80.0, -80.0, -80.0), (-100.0, -100.0, -100.0))
    b = EnvState((10, 10, 10), (-90.0, -90.0, -90.0), (-110.0, -110.0, -110.0))
    c = EnvState((15, 15, 15), (-70.0, -70.0, -70.0), (-95.0, -95.0, -95.0))
    pool = ExperiencePool()
    spec = [(a, -3.0), (b, -1.0), (a, -2.0), (c, -9.0), (a, -8.0), (b, -4.0),
            (a, -5.0), (c, -1.0), (b, -7.0), (c, -6.0), (b, -2.0), (c, -3.0)]
    for i, (s, r) in enumerate(spec):
        pool.add(Experience(s, Action((0, 0, 0)), r, 0, i, 0))
    demos = select_demonstrations(pool, a, 1)
    # the four A entries are nearest: rewards -3, -2, -8, -5 at 0, 2, 4, 6
    assert demos.recommended_idx == [2]
    assert demos.inadvisable_idx == [4]
    assert (demos.recommended_idx, demos.inadvisable_idx) == oracle_demos(pool, a, 1)


@settings(max_examples=200)
@given(st.integers(0, 2**31 - 1), st.integers(0, 50), st.integers(0, 6), st.booleans())
def test_selection_matches_exhaustive_oracle(seed, n, k, coarse):
    rng = np.random.default_rng(seed)
    pool = make_pool(rng, n, coarse)
    query = pool.records[int(rng.integers(n))].state if n and rng.random() < 0.3 else make_state(rng, coarse=coarse)
    demos = select_demonstrations(pool, query, k)
    rec, bad = oracle_demos(pool, query, k)
    assert demos.recommended_idx == rec
    assert demos.inadvisable_idx == bad
    assert not set(rec) & set(bad)
    assert len(rec) <= max(k, 0) and len(bad) <= max(k, 0)
    assert demos.recommended == [pool.records[i] for i in rec]


def test_small_pool_median_split():
    rng = np.random.default_rng(2)
    pool = ExperiencePool()
    for i, r in enumerate([-4.0, -1.0, -3.0]):
        pool.add(Experience(make_state(rng), Action((0, 0, 0)), r, 0, i, 0))
    demos = select_demonstrations(pool, make_state(rng), 5)
    assert demos.recommended_idx == [1, 2]
    assert demos.inadvisable_idx == [0]


def test_pool_rejects_nonfinite_reward_and_tracks_minmax():
    rng = np.random.default_rng(3)
    pool = ExperiencePool()
    with pytest.raises(ValueError):
        pool.add(Experience(make_state(rng), Action((0, 0, 0)), math.nan))
    for _ in range(20):
        pool.add(Experience(make_state(rng), Action((0, 0, 0)), -1.0))
    f = pool.features()
    np.testing.assert_array_equal(pool.mins, f.min(axis=0))
    np.testing.assert_array_equal(pool.maxs, f.max(axis=0))
    normed = pool.normalize(f)
    assert normed.min() >= 0.0 and normed.max() <= 1.0


# -- prompt rendering --------------------------------------------------------

def toy_prompt_inputs(demos=None, cot=False):
    env = create_env(toy_config())
    return render_task_prompt(env.observe(), env.actions, demos or select_demonstrations(ExperiencePool(), None, 0),
                              env.config.power_levels, env.config.rate_threshold_bps, cot)


def test_prompt_without_demos():
    text = toy_prompt_inputs().text
    assert "decision-making task" in text and "candidate decisions" in text
    assert "DEMONSTRATIONS" not in text and "Example" not in text
    assert "Here is a new case to solve" in text
    assert "{Decision_1, Decision_2, Decision_3, Decision_4}" in text
    assert "users_per_bs" in text and "(dB)" in text
    assert COT_PREAMBLE not in text


def test_prompt_is_deterministic():
    assert toy_prompt_inputs().text == toy_prompt_inputs().text


def test_prompt_section_order():
    b = toy_prompt_inputs()
    text = b.text
    positions = [text.index(s) for s in (b.task_goal, b.definitions, b.rules, b.new_case)]
    assert positions == sorted(positions)


def test_demo_blocks_counted_and_labelled():
    env = create_env(toy_config())
    s = env.observe()
    pool = ExperiencePool()
    for i, (idx, r) in enumerate([(0, -2.0), (3, -10.0), (1, -6.0)]):
        pool.add(Experience(s, env.actions[idx], r, 0, i, idx))
    demos = select_demonstrations(pool, s, 5)           # pool < 2k: median split, 2 + 1
    assert len(demos.recommended) == 2 and len(demos.inadvisable) == 1
    b = render_task_prompt(s, env.actions, demos, env.config.power_levels)
    assert b.demonstrations.startswith("DEMONSTRATIONS:")
    lines = b.demonstrations.splitlines()
    examples = [ln for ln in lines if ln.startswith("Example ")]
    assert len(examples) == 3
    rec_at = lines.index("Recommended demonstrations:")
    bad_at = lines.index("Inadvisable demonstrations:")
    # pool order within the recommended label: entry 0 then entry 2
    assert "Decision_1 -> reward: -2.00" in lines[rec_at + 1]
    assert "Decision_2 -> reward: -6.00" in lines[rec_at + 2]
    assert "Decision_4 -> reward: -10.00" in lines[bad_at + 1]


def test_chain_of_thought_preamble():
    assert "Let's think step by step" in toy_prompt_inputs(cot=True).text


def test_empty_decision_set_rejected():
    env = create_env(toy_config())
    with pytest.raises(ValueError):
        render_task_prompt(env.observe(), [], select_demonstrations(ExperiencePool(), None, 0), (1, 5))


# -- decision parsing ---------------------------------------------------------

@pytest.mark.parametrize("text,n,want", [
    ("I choose Decision_3 because...", 8, 2),
    ("Decision_2 ... final answer Decision_5", 8, 4),
    ("Decision_1", 1, 0),
])
def test_parse_decision(text, n, want):
    assert parse_decision(text, n) == want


@pytest.mark.parametrize("text", ["increase power", "Decision_9", "Decision_0", "", "decision_2"])
def test_parse_decision_errors(text):
    with pytest.raises(DecisionParseError):
        parse_decision(text, 8)


def test_parse_decision_needs_positive_n():
    with pytest.raises(ValueError):
        parse_decision("Decision_1", 0)


@given(st.text(), st.integers(1, 1000))
def test_parse_decision_is_total(text, n):
    try:
        i = parse_decision(text, n)
    except DecisionParseError:
        return
    assert 0 <= i < n


# -- exploration and the prompting loop ---------------------------------------

def test_epsilon_schedule():
    sch = EpsilonSchedule()
    assert sch.value(0, 50) == pytest.approx(0.3)
    assert sch.value(25, 50) == pytest.approx(0.05)
    assert sch.value(49, 50) == pytest.approx(0.05)
    assert sch.value(10, 50) == pytest.approx(0.3 - 0.25 * 10 / 25)


def always_first():
    return llm.make_mock([("new case to solve", "I select Decision_1")])


def test_always_first_fills_pool():
    env = create_env(toy_config())
    pool = ExperiencePool()
    cfg = PromptingConfig(episodes=4, steps_per_episode=6, epsilon=EpsilonSchedule(0.0, 0.0))
    log = run_iterative_prompting(env, always_first(), cfg, pool)
    assert len(pool) == 24 == len(log.steps)
    assert all(e.action_index == 0 for e in pool.records)
    assert log.complete and all(s.source == "llm" for s in log.steps)


@pytest.mark.parametrize("mode", ["stratified", "bernoulli"])
def test_full_exploration_is_uniform(mode):
    env = create_env(toy_config())
    cfg = PromptingConfig(episodes=50, steps_per_episode=20, epsilon=EpsilonSchedule(1.0, 1.0),
                          exploration=mode, seed=4)
    counter = llm.CallCounter(always_first())
    log = run_iterative_prompting(env, counter, cfg)
    assert counter.calls == 0
    counts = np.bincount([s.action_index for s in log.steps], minlength=env.n_actions)
    assert counts.sum() == 1000
    assert stats.chisquare(counts).pvalue > 1e-3


def test_greedy_oracle_beats_random():
    env = create_env(toy_config())
    cfg = PromptingConfig(episodes=10, steps_per_episode=20)
    llm_log = run_iterative_prompting(env, mocks.greedy_oracle(env), cfg)
    rnd = run_random(create_env(toy_config()), 10, 20)
    assert np.mean([s.reward for s in llm_log.steps]) >= np.mean([s.reward for s in rnd.steps])


def test_retry_then_success():
    env = create_env(toy_config())
    answers = iter(["no idea", "Decision_4"])
    prov = llm.FunctionProvider(lambda r: next(answers))
    idx, src = choose_with_llm(prov, env, env.observe(), select_demonstrations(ExperiencePool(), None, 0),
                               PromptingConfig(), np.random.default_rng(0))
    assert (idx, src) == (3, "llm-retry")


def test_fallback_to_best_demo_then_random():
    env = create_env(toy_config())
    s = env.observe()
    pool = ExperiencePool()
    for i, (idx, r) in enumerate([(2, -6.0), (1, -5.0), (3, -10.0)]):
        pool.add(Experience(s, env.actions[idx], r, 0, i, idx))
    prov = llm.FunctionProvider(lambda r: "whatever")
    demos = select_demonstrations(pool, s, 5)
    assert choose_with_llm(prov, env, s, demos, PromptingConfig(), np.random.default_rng(0)) == (1, "fallback-demo")
    idx, src = choose_with_llm(prov, env, s, select_demonstrations(ExperiencePool(), None, 0), PromptingConfig(),
                               np.random.default_rng(0))
    assert src == "fallback-random" and 0 <= idx < env.n_actions


def test_transport_failure_aborts_with_partial_log():
    env = create_env(toy_config())
    calls = []

    def flaky(request):
        calls.append(1)
        if len(calls) > 7:
            raise llm.TransportError("connection refused")
        return "Decision_1"

    cfg = PromptingConfig(episodes=3, steps_per_episode=5, epsilon=EpsilonSchedule(0.0, 0.0))
    with pytest.raises(RunAborted) as exc:
        run_iterative_prompting(env, llm.FunctionProvider(flaky), cfg)
    log = exc.value.log
    assert len(log.steps) == 7 and not log.complete
    assert "TransportError" in log.error


# -- DQN ---------------------------------------------------------------------

def test_replay_buffer_capacity():
    buf = ReplayBuffer(10, 2)
    for i in range(25):
        buf.add(np.array([i, i]), i % 3, float(i), np.array([i + 1, i + 1]))
    assert len(buf) == 10
    assert sorted(buf.r.tolist()) == list(map(float, range(15, 25)))
    s, a, r, s2 = buf.sample(np.random.default_rng(0), 64)
    assert s.shape == (64, 2) and set(r.tolist()) <= set(buf.r.tolist())


def test_default_buffer_never_exceeds_capacity():
    env = create_env(toy_config())
    log = run_dqn(env, DqnConfig(pool_capacity=100, batch_size=64), episodes=3, steps_per_episode=60)
    assert log.agent.buffer.size == 100 == len(log.agent.buffer)
    assert DqnConfig().pool_capacity == 10000


def test_td_targets_gamma_zero_are_rewards():
    r = np.array([1.0, -2.0, 0.5])
    q = np.array([[3.0, 9.0], [1.0, -1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(td_targets(r, q, 0.0), r)
    np.testing.assert_allclose(td_targets(r, q, 0.9), r + 0.9 * np.array([9.0, 1.0, 0.0]))


def test_dqn_config_validation():
    with pytest.raises(ValueError):
        DqnConfig(pool_capacity=10, batch_size=64)
    with pytest.raises(ValueError):
        DqnConfig(gamma=1.5)


@dataclass
class _Out:
    reward: float
    total_power_w: float = 0.0
    violation: bool = False


class Bandit:
    """One state, two actions, fixed rewards 1 and 0."""

    n_actions = 2

    def features(self):
        return np.array([1.0])

    def step_index_action(self, a):
        return _Out(1.0 if a == 0 else 0.0)


def test_dqn_learns_bandit():
    log = run_dqn(Bandit(), DqnConfig(seed=0), episodes=100, steps_per_episode=20)
    assert len(log.steps) == 2000
    assert log.agent.greedy(np.array([1.0])) == 0
    assert all(s.greedy_action == 0 for s in log.steps[-200:])


def test_dqn_divergence_is_reported(monkeypatch):
    class Huge(Bandit):
        def step_index_action(self, a):
            return _Out(math.inf)

    with pytest.raises(dqn_mod.DqnError):
        run_dqn(Huge(), DqnConfig(batch_size=4, pool_capacity=10), episodes=1, steps_per_episode=10)
