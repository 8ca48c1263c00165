"""Deep Q-learning baseline: replay buffer, target network, epsilon-greedy."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from netprompt import nn
from netprompt.netsim import PowerControlEnv
from netprompt.runlog import RunLog, StepRecord


class DqnError(RuntimeError):
    pass


@dataclass(frozen=True)
class DqnConfig:
    pool_capacity: int = 10000
    batch_size: int = 64
    learning_rate: float = 0.005
    layers: int = 3
    hidden_size: int = 64
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    target_sync: int = 200
    huber_delta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.pool_capacity < self.batch_size:
            raise ValueError("pool_capacity must be >= batch_size")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.layers < 1 or self.hidden_size < 1 or self.batch_size < 1:
            raise ValueError("layers, hidden_size and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.size = 0
        self._ptr = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2) -> None:
        i = self._ptr
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self._ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, self.size, size=batch)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]


def td_targets(rewards, next_q, gamma: float) -> np.ndarray:
    """``r + gamma * max_a Q_target(s', a)`` for a batch."""
    return np.asarray(rewards, dtype=np.float64) + gamma * np.max(next_q, axis=1)


def encode_state(env) -> np.ndarray:
    """Scaled features for the power-control env; other envs supply their own."""
    if isinstance(env, PowerControlEnv):
        st = env.observe()
        lo, hi = env.config.user_range
        users = (np.array(st.users_per_bs, dtype=np.float64) - lo) / max(hi - lo, 1)
        gains = (np.array(st.mean_gain_db) + 100.0) / 30.0
        interf = (np.array(st.mean_interf_gain_db) + 100.0) / 30.0
        return np.concatenate([users, gains, interf])
    return np.asarray(env.features(), dtype=np.float64)


class DqnAgent:
    def __init__(self, state_dim: int, n_actions: int, config: DqnConfig):
        self.config = config
        self.n_actions = n_actions
        self.rng = np.random.default_rng(config.seed)
        sizes = [state_dim] + [config.hidden_size] * (config.layers - 1) + [n_actions]
        self.q = nn.Mlp(sizes, rng=self.rng)
        self.target = self.q.copy()
        self.opt = nn.OptimState("sgd", config.learning_rate)
        self.buffer = ReplayBuffer(config.pool_capacity, state_dim)
        self.updates = 0
        self.last_loss = float("nan")

    def greedy(self, s) -> int:
        return int(np.argmax(self.q.predict(s)))

    def train_step(self) -> float:
        cfg = self.config
        s, a, r, s2 = self.buffer.sample(self.rng, cfg.batch_size)
        y = td_targets(r, self.target.predict(s2), cfg.gamma)
        q = self.q.forward(s)
        rows = np.arange(len(a))
        loss, g = nn.huber_loss(q[rows, a], y, cfg.huber_delta)
        if not np.isfinite(loss):
            raise DqnError(f"non-finite TD loss after {self.updates} updates "
                           f"(max |Q| = {np.max(np.abs(q)):.3g})")
        out_grad = np.zeros_like(q)
        out_grad[rows, a] = g
        nn.optimize_step(self.q.params(), self.q.backward(out_grad), self.opt)
        self.updates += 1
        if self.updates % cfg.target_sync == 0:
            self.target.load_from(self.q)
        self.last_loss = loss
        return loss


def run_dqn(env, config: DqnConfig | None = None, episodes: int = 50, steps_per_episode: int = 20,
            agent: DqnAgent | None = None) -> RunLog:
    """Train online; every step records the greedy action before acting."""
    config = config or DqnConfig()
    s = encode_state(env)
    agent = agent or DqnAgent(s.size, env.n_actions, config)
    total = episodes * steps_per_episode
    decay_steps = max(1, int(config.epsilon_decay_fraction * total))
    config_dict = {"agent": {**config.to_dict(), "episodes": episodes, "steps_per_episode": steps_per_episode}}
    if isinstance(env, PowerControlEnv):
        config_dict["network"] = env.config.to_dict()
    log = RunLog("dqn", config_dict)
    t = 0
    for ep in range(episodes):
        if ep and hasattr(env, "new_episode"):
            env.new_episode()
        for step in range(steps_per_episode):
            frac = min(1.0, t / decay_steps)
            eps = config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
            greedy = agent.greedy(s)
            explored = bool(agent.rng.random() < eps)
            a = int(agent.rng.integers(env.n_actions)) if explored else greedy
            out = env.step_index_action(a)
            s2 = encode_state(env)
            agent.buffer.add(s, a, out.reward, s2)
            if len(agent.buffer) >= config.batch_size:
                agent.train_step()
            log.add(StepRecord(ep, step, a, out.total_power_w, out.reward, out.violation,
                               explored=explored, source="dqn", greedy_action=greedy))
            s = s2
            t += 1
    log.complete = True
    log.agent = agent
    return log
