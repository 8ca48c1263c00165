"""Multi-cell downlink power-control environment.

Users are dropped uniformly in a disc around each base station, channel
gains follow the urban-macro path loss ``128.1 + 37.6 log10(d_km)`` plus
i.i.d. log-normal shadowing, and each user's rate is the Shannon rate on
an equal share of its base station's bandwidth.  After every step the user
counts and positions are redrawn from the environment RNG.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from netprompt import _kernels

MIN_DISTANCE_M = 35.0
MAX_ACTIONS = 10**6


class ConfigError(ValueError):
    """Invalid :class:`NetworkConfig`; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ActionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ActionSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    n_bs: int = 3
    power_levels: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0)
    bandwidth_hz: float = 10e6
    noise_dbm: float = -104.0
    rate_threshold_bps: float = 1.5e6
    user_range: tuple[int, int] = (5, 15)
    cell_radius_m: float = 500.0
    shadowing_sigma_db: float = 8.0
    penalty_weight: float = 100.0
    seed: int = 0
    inter_site_distance_m: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "power_levels", tuple(float(p) for p in self.power_levels))
        object.__setattr__(self, "user_range", tuple(int(u) for u in self.user_range))
        if self.n_bs < 2:
            raise ConfigError("n_bs", "need at least 2 base stations")
        levels = self.power_levels
        if len(levels) == 0:
            raise ConfigError("power_levels", "decision set is empty")
        if any(not (p > 0 and math.isfinite(p)) for p in levels):
            raise ConfigError("power_levels", "levels must be positive and finite")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("power_levels", "levels must be strictly increasing")
        if len(self.user_range) != 2:
            raise ConfigError("user_range", "expected (min, max)")
        lo, hi = self.user_range
        if lo < 1 or lo > hi:
            raise ConfigError("user_range", "need 1 <= min <= max")
        if not self.rate_threshold_bps > 0:
            raise ConfigError("rate_threshold_bps", "must be positive")
        if not self.penalty_weight >= 0:
            raise ConfigError("penalty_weight", "must be non-negative")
        if not self.bandwidth_hz > 0:
            raise ConfigError("bandwidth_hz", "must be positive")
        if not self.cell_radius_m > 0:
            raise ConfigError("cell_radius_m", "must be positive")
        if not self.shadowing_sigma_db >= 0:
            raise ConfigError("shadowing_sigma_db", "must be non-negative")
        if not self.inter_site_distance_m > 0:
            raise ConfigError("inter_site_distance_m", "must be positive")
        if not math.isfinite(self.noise_dbm):
            raise ConfigError("noise_dbm", "must be finite")

    @property
    def noise_w(self) -> float:
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["power_levels"] = list(self.power_levels)
        d["user_range"] = list(self.user_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        return cls.from_dict(json.loads(text))


def toy_config(seed: int = 0, **overrides) -> NetworkConfig:
    """Two base stations, two power levels, small cells and no shadowing.

    Every user is close enough to its serving BS that the lowest power
    level always meets the rate floor, so rewards depend only on the
    action and the optimal action is always index 0.
    """
    params = dict(
        n_bs=2,
        power_levels=(1.0, 5.0),
        cell_radius_m=100.0,
        shadowing_sigma_db=0.0,
        seed=seed,
    )
    params.update(overrides)
    return NetworkConfig(**params)


@dataclass(frozen=True)
class EnvState:
    users_per_bs: tuple[int, ...]
    mean_gain_db: tuple[float, ...]
    mean_interf_gain_db: tuple[float, ...]
    episode: int = 0
    step: int = 0

    def vector(self) -> np.ndarray:
        """Feature vector: user counts, then serving gains, then interfering gains."""
        return np.array(self.users_per_bs + self.mean_gain_db + self.mean_interf_gain_db, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "users_per_bs": list(self.users_per_bs),
            "mean_gain_db": list(self.mean_gain_db),
            "mean_interf_gain_db": list(self.mean_interf_gain_db),
            "episode": self.episode,
            "step": self.step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvState":
        return cls(
            tuple(int(v) for v in d["users_per_bs"]),
            tuple(float(v) for v in d["mean_gain_db"]),
            tuple(float(v) for v in d["mean_interf_gain_db"]),
            int(d.get("episode", 0)),
            int(d.get("step", 0)),
        )


@dataclass(frozen=True)
class Action:
    level_index_per_bs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "level_index_per_bs", tuple(int(i) for i in self.level_index_per_bs))


@dataclass(frozen=True)
class StepOutcome:
    avg_rate_bps_per_bs: tuple[float, ...]
    total_power_w: float
    violation: bool
    reward: float
    user_rates_bps: tuple[float, ...] = field(repr=False, default=())


@dataclass(frozen=True)
class Snapshot:
    """Per-user channel realisation the next action will be evaluated on."""

    serving: np.ndarray          # (n_users,) serving BS index
    gains: np.ndarray            # (n_users, n_bs) linear gains
    bw_per_user: np.ndarray      # (n_users,) Hz
    users_per_bs: tuple[int, ...]


def pathloss_db(distance_m: float) -> float:
    """Urban-macro path loss in dB, distance clamped to 35 m."""
    d = float(distance_m)
    if not math.isfinite(d) or d < 0:
        raise DomainError(f"distance must be finite and non-negative, got {distance_m!r}")
    d_km = max(d, MIN_DISTANCE_M) / 1000.0
    return 128.1 + 37.6 * math.log10(d_km)


def _pathloss_db_array(d: np.ndarray) -> np.ndarray:
    return 128.1 + 37.6 * np.log10(np.maximum(d, MIN_DISTANCE_M) / 1000.0)


def user_rate_bps(p_tx_w, gain_linear, interference_w, noise_w, bandwidth_hz) -> float:
    if noise_w <= 0:
        raise DomainError("noise power must be positive")
    if min(p_tx_w, gain_linear, interference_w, bandwidth_hz) < 0:
        raise DomainError("inputs must be non-negative")
    return bandwidth_hz * math.log2(1.0 + p_tx_w * gain_linear / (interference_w + noise_w))


def bs_positions(n_bs: int, inter_site_distance_m: float) -> np.ndarray:
    """Regular polygon with side = inter-site distance (equilateral for 3)."""
    radius = inter_site_distance_m / (2.0 * math.sin(math.pi / n_bs))
    ang = 2.0 * np.pi * np.arange(n_bs) / n_bs
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)


def enumerate_actions(config: NetworkConfig) -> list[Action]:
    n_levels = len(config.power_levels)
    if n_levels ** config.n_bs > MAX_ACTIONS:
        raise ActionSpaceError(f"{n_levels}^{config.n_bs} actions exceeds {MAX_ACTIONS}")
    return [Action(idx) for idx in itertools.product(range(n_levels), repeat=config.n_bs)]


class PowerControlEnv:
    """Stateful environment; single-threaded because stepping advances the RNG."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.positions = bs_positions(config.n_bs, config.inter_site_distance_m)
        self.episode = 0
        self.step_index = 0
        self._actions = enumerate_actions(config)
        self.snapshot = self._draw_users()

    # -- user dynamics ---------------------------------------------------
    def _draw_users(self) -> Snapshot:
        cfg = self.config
        lo, hi = cfg.user_range
        counts = self.rng.integers(lo, hi + 1, size=cfg.n_bs)
        serving = np.repeat(np.arange(cfg.n_bs), counts)
        n = serving.size
        r = cfg.cell_radius_m * np.sqrt(self.rng.random(n))
        ang = 2.0 * np.pi * self.rng.random(n)
        xy = self.positions[serving] + np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        dist = np.linalg.norm(xy[:, None, :] - self.positions[None, :, :], axis=2)
        loss_db = _pathloss_db_array(dist)
        if cfg.shadowing_sigma_db > 0:
            loss_db = loss_db + self.rng.normal(0.0, cfg.shadowing_sigma_db, size=loss_db.shape)
        gains = 10.0 ** (-loss_db / 10.0)
        bw = cfg.bandwidth_hz / counts[serving]
        return Snapshot(serving, gains, bw.astype(np.float64), tuple(int(c) for c in counts))

    def set_snapshot(self, snapshot: Snapshot) -> None:
        self.snapshot = snapshot

    # -- observation -----------------------------------------------------
    def observe(self) -> EnvState:
        snap = self.snapshot
        gain_db = 10.0 * np.log10(snap.gains)
        n_bs = self.config.n_bs
        serving_db, interf_db = [], []
        for b in range(n_bs):
            rows = gain_db[snap.serving == b]
            serving_db.append(float(rows[:, b].mean()))
            others = np.delete(rows, b, axis=1)
            interf_db.append(float(others.mean()))
        return EnvState(snap.users_per_bs, tuple(serving_db), tuple(interf_db), self.episode, self.step_index)

    # -- actions ---------------------------------------------------------
    @property
    def actions(self) -> list[Action]:
        return self._actions

    @property
    def n_actions(self) -> int:
        return len(self._actions)

    def action_index(self, action: Action) -> int:
        n_levels = len(self.config.power_levels)
        idx = 0
        for i in action.level_index_per_bs:
            idx = idx * n_levels + i
        return idx

    def _check(self, action: Action) -> None:
        levels = action.level_index_per_bs
        if len(levels) != self.config.n_bs:
            raise ActionError(f"expected {self.config.n_bs} indices, got {len(levels)}")
        n_levels = len(self.config.power_levels)
        for i in levels:
            if not 0 <= i < n_levels:
                raise ActionError(f"power level index {i} out of range [0, {n_levels})")

    def evaluate(self, action: Action) -> StepOutcome:
        """Outcome of ``action`` on the current snapshot, without advancing."""
        self._check(action)
        cfg = self.config
        snap = self.snapshot
        powers = np.array([cfg.power_levels[i] for i in action.level_index_per_bs])
        rates = _kernels.user_rates(powers, snap.gains, snap.serving, snap.bw_per_user, cfg.noise_w)
        avg = tuple(float(rates[snap.serving == b].mean()) for b in range(cfg.n_bs))
        total_power = float(sum(cfg.power_levels[i] for i in action.level_index_per_bs))
        thr = cfg.rate_threshold_bps
        shortfall = sum(max(0.0, thr - a) / thr for a in avg)
        reward = -total_power - cfg.penalty_weight * shortfall
        return StepOutcome(
            avg_rate_bps_per_bs=avg,
            total_power_w=total_power,
            violation=min(avg) < thr,
            reward=float(reward),
            user_rates_bps=tuple(float(r) for r in rates),
        )

    def step(self, action: Action) -> StepOutcome:
        outcome = self.evaluate(action)
        self.step_index += 1
        self.snapshot = self._draw_users()
        return outcome

    def step_index_action(self, index: int) -> StepOutcome:
        return self.step(self._actions[index])

    def features(self) -> np.ndarray:
        return self.observe().vector()

    def new_episode(self) -> None:
        self.episode += 1
        self.step_index = 0

    def best_action_index(self) -> int:
        """Brute-force best action on the current snapshot (lowest index on ties)."""
        rewards = [self.evaluate(a).reward for a in self._actions]
        return int(np.argmax(rewards))


def create_env(config: NetworkConfig) -> PowerControlEnv:
    return PowerControlEnv(config)
