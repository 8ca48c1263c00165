import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netprompt.netsim import (
    Action,
    ActionError,
    ActionSpaceError,
    ConfigError,
    DomainError,
    NetworkConfig,
    Snapshot,
    create_env,
    enumerate_actions,
    pathloss_db,
    toy_config,
    user_rate_bps,
)


def brute_force_reward(cfg, snap, levels):
    """Independent evaluator: plain loops over users, no numpy vector math."""
    powers = [cfg.power_levels[i] for i in levels]
    noise_w = 10 ** (cfg.noise_dbm / 10) / 1000
    per_bs = [[] for _ in range(cfg.n_bs)]
    for u in range(len(snap.serving)):
        b = int(snap.serving[u])
        sig = powers[b] * snap.gains[u][b]
        intf = sum(powers[j] * snap.gains[u][j] for j in range(cfg.n_bs) if j != b)
        bw = cfg.bandwidth_hz / snap.users_per_bs[b]
        per_bs[b].append(bw * math.log2(1 + sig / (intf + noise_w)))
    avg = [sum(r) / len(r) for r in per_bs]
    thr = cfg.rate_threshold_bps
    pen = sum(max(0.0, thr - a) / thr for a in avg)
    return -sum(powers) - cfg.penalty_weight * pen, avg


# -- path loss and rate formula ------------------------------------------

def test_pathloss_reference_points():
    assert pathloss_db(1000) == pytest.approx(128.1, abs=1e-12)
    assert pathloss_db(100) == pytest.approx(90.5, abs=1e-12)
    assert pathloss_db(10) == pathloss_db(35)
    assert pathloss_db(0) == pathloss_db(35)


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -1.0])
def test_pathloss_domain(bad):
    with pytest.raises(DomainError):
        pathloss_db(bad)


def test_user_rate_reference_points():
    assert user_rate_bps(0.0, 1.0, 0.0, 1e-3, 10e6) == 0.0
    assert user_rate_bps(1.0, 1.0, 0.0, 1.0, 1.0) == pytest.approx(1.0)
    assert user_rate_bps(3.0, 1.0, 0.0, 1.0, 2.0) == pytest.approx(4.0)
    with pytest.raises(DomainError):
        user_rate_bps(1.0, 1.0, 0.0, 0.0, 1.0)


# -- configuration ---------------------------------------------------------

@pytest.mark.parametrize("kw,field", [
    ({"power_levels": ()}, "power_levels"),
    ({"power_levels": (1.0, 1.0)}, "power_levels"),
    ({"power_levels": (-1.0, 2.0)}, "power_levels"),
    ({"n_bs": 1}, "n_bs"),
    ({"user_range": (0, 5)}, "user_range"),
    ({"user_range": (6, 5)}, "user_range"),
    ({"rate_threshold_bps": 0.0}, "rate_threshold_bps"),
    ({"penalty_weight": -1.0}, "penalty_weight"),
])
def test_config_errors_name_the_field(kw, field):
    with pytest.raises(ConfigError) as exc:
        NetworkConfig(**kw)
    assert exc.value.field == field


def test_config_json_round_trip():
    cfg = NetworkConfig(seed=7, power_levels=(1, 2, 3))
    back = NetworkConfig.from_json(cfg.to_json())
    assert back == cfg
    assert set(json.loads(cfg.to_json())) == set(NetworkConfig.__dataclass_fields__)
    with pytest.raises(ConfigError):
        NetworkConfig.from_dict({"n_bs": 3, "bogus": 1})


# -- actions ---------------------------------------------------------------

def test_enumerate_actions_sizes_and_order():
    assert len(enumerate_actions(NetworkConfig(n_bs=3, power_levels=(1, 2, 3, 4)))) == 64
    acts = enumerate_actions(NetworkConfig(n_bs=3, power_levels=tuple(range(1, 11))))
    assert len(acts) == 1000
    assert acts[0].level_index_per_bs == (0, 0, 0) and acts[-1].level_index_per_bs == (9, 9, 9)
    assert [a.level_index_per_bs for a in acts] == sorted(a.level_index_per_bs for a in acts)
    with pytest.raises(ActionSpaceError):
        enumerate_actions(NetworkConfig(n_bs=7, power_levels=tuple(range(1, 11))))


def test_single_level_gives_one_action_per_layout():
    acts = enumerate_actions(NetworkConfig(n_bs=2, power_levels=(1.0,)))
    assert [a.level_index_per_bs for a in acts] == [(0, 0)]


def test_action_index_matches_enumeration():
    env = create_env(NetworkConfig(seed=1))
    for i, a in enumerate(env.actions):
        assert env.action_index(a) == i


def test_invalid_action_rejected():
    env = create_env(toy_config())
    with pytest.raises(ActionError):
        env.step(Action((0, 2)))
    with pytest.raises(ActionError):
        env.step(Action((0,)))


# -- dynamics and determinism ----------------------------------------------

def test_same_seed_same_first_state():
    a, b = create_env(NetworkConfig(seed=7)), create_env(NetworkConfig(seed=7))
    assert json.dumps(a.observe().to_dict()) == json.dumps(b.observe().to_dict())


def test_user_counts_in_range_and_state_shape():
    env = create_env(NetworkConfig(seed=3))
    for _ in range(200):
        st_ = env.observe()
        assert all(5 <= u <= 15 for u in st_.users_per_bs)
        assert len(st_.mean_gain_db) == len(st_.mean_interf_gain_db) == 3
        assert np.all(np.isfinite(st_.vector()))
        env.step(env.actions[0])


def test_sequence_determinism():
    rng = np.random.default_rng(0)
    seq = rng.integers(0, 512, 50)
    runs = []
    for _ in range(2):
        env = create_env(NetworkConfig(seed=11))
        runs.append([env.step_index_action(int(i)) for i in seq])
    assert runs[0] == runs[1]


def test_evaluate_is_pure():
    env = create_env(NetworkConfig(seed=2))
    a = env.actions[100]
    assert env.evaluate(a) == env.evaluate(a)
    before = env.observe()
    env.evaluate(a)
    assert env.observe() == before


def test_step_advances_and_redraws():
    env = create_env(NetworkConfig(seed=2))
    s0 = env.observe()
    env.step(env.actions[0])
    s1 = env.observe()
    assert s1.step == s0.step + 1
    assert s1 != s0


def test_max_power_single_central_user_has_no_violation():
    cfg = NetworkConfig()
    env = create_env(cfg)
    pos = env.positions
    serving = np.arange(cfg.n_bs)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    gains = 10 ** (-(128.1 + 37.6 * np.log10(np.maximum(dist, 35.0) / 1000)) / 10)
    env.set_snapshot(Snapshot(serving, gains, np.full(cfg.n_bs, cfg.bandwidth_hz), (1,) * cfg.n_bs))
    top = len(cfg.power_levels) - 1
    out = env.evaluate(Action((top,) * cfg.n_bs))
    assert not out.violation
    assert min(out.avg_rate_bps_per_bs) > cfg.rate_threshold_bps


# -- oracle and properties -------------------------------------------------

def test_toy_rewards_match_brute_force():
    cfg = toy_config(seed=4)
    env = create_env(cfg)
    for _ in range(25):
        for a in env.actions:
            out = env.evaluate(a)
            ref, avg = brute_force_reward(cfg, env.snapshot, a.level_index_per_bs)
            assert out.reward == pytest.approx(ref, rel=1e-9)
            np.testing.assert_allclose(out.avg_rate_bps_per_bs, avg, rtol=1e-9)
        env.step(env.actions[0])


def test_toy_reward_table_is_deterministic():
    env = create_env(toy_config(seed=1))
    for _ in range(100):
        assert [env.evaluate(a).reward for a in env.actions] == [-2.0, -6.0, -6.0, -10.0]
        assert env.best_action_index() == 0
        env.step(env.actions[3])


def test_default_config_rewards_match_brute_force():
    cfg = NetworkConfig(seed=5)
    env = create_env(cfg)
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = env.actions[int(rng.integers(env.n_actions))]
        ref, _ = brute_force_reward(cfg, env.snapshot, a.level_index_per_bs)
        assert env.evaluate(a).reward == pytest.approx(ref, rel=1e-9)
        env.step(a)


@given(st.integers(0, 2**31 - 1), st.integers(0, 511), st.integers(0, 2))
def test_power_monotonicity(seed, action_idx, bs):
    env = create_env(NetworkConfig(seed=seed))
    base = env.actions[action_idx]
    levels = list(base.level_index_per_bs)
    if levels[bs] == len(env.config.power_levels) - 1:
        levels[bs] -= 1
        base = Action(levels)
    up = list(base.level_index_per_bs)
    up[bs] += 1
    r0 = np.array(env.evaluate(base).user_rates_bps)
    r1 = np.array(env.evaluate(Action(up)).user_rates_bps)
    own = env.snapshot.serving == bs
    assert np.all(r1[own] >= r0[own] * (1 - 1e-12))
    assert np.all(r1[~own] <= r0[~own] * (1 + 1e-12))


@given(st.integers(0, 2**31 - 1), st.integers(0, 511))
def test_reward_ceiling_and_violation_flag(seed, action_idx):
    env = create_env(NetworkConfig(seed=seed))
    cfg = env.config
    a = env.actions[action_idx]
    out = env.step(a)
    assert out.reward <= -cfg.n_bs * min(cfg.power_levels) + 1e-12
    assert out.violation == (min(out.avg_rate_bps_per_bs) < cfg.rate_threshold_bps)
    assert out.total_power_w == pytest.approx(sum(cfg.power_levels[i] for i in a.level_index_per_bs))
