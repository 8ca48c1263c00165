"""Experiment configuration files.

An optimize config is a JSON object with optional keys ``network`` (fields
of :class:`NetworkConfig`, or the string ``"toy"``), ``agent`` (agent
options), ``episodes``, ``steps_per_episode`` and ``seed``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from netprompt.agents.dqn import DqnConfig
from netprompt.agents.prompting import EpsilonSchedule, PromptingConfig
from netprompt.netsim import NetworkConfig, toy_config

KNOWN_KEYS = {"network", "agent", "episodes", "steps_per_episode", "seed"}


class ConfigFileError(ValueError):
    pass


@dataclass
class OptimizeConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    agent: dict = field(default_factory=dict)
    episodes: int = 50
    steps_per_episode: int = 20
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizeConfig":
        unknown = set(data) - KNOWN_KEYS
        if unknown:
            raise ConfigFileError(f"unknown config keys: {sorted(unknown)}")
        seed = int(data.get("seed", 0))
        net = data.get("network", {})
        if net == "toy":
            network = toy_config(seed)
        elif isinstance(net, dict):
            network = NetworkConfig.from_dict({"seed": seed, **net})
        else:
            raise ConfigFileError("network must be an object or \"toy\"")
        agent = data.get("agent", {})
        if not isinstance(agent, dict):
            raise ConfigFileError("agent must be an object")
        return cls(network, dict(agent), int(data.get("episodes", 50)), int(data.get("steps_per_episode", 20)),
                   seed)

    @classmethod
    def load(cls, path) -> "OptimizeConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigFileError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {"network": self.network.to_dict(), "agent": self.agent, "episodes": self.episodes,
                "steps_per_episode": self.steps_per_episode, "seed": self.seed}

    def prompting(self) -> PromptingConfig:
        a = dict(self.agent)
        eps = a.pop("epsilon", None)
        kw = {k: a[k] for k in ("k", "exploration", "chain_of_thought", "model", "temperature", "max_tokens")
              if k in a}
        cfg = PromptingConfig(episodes=self.episodes, steps_per_episode=self.steps_per_episode, seed=self.seed,
                              **kw)
        if eps is not None:
            cfg.epsilon = EpsilonSchedule(**eps)
        return cfg

    def dqn(self) -> DqnConfig:
        names = set(DqnConfig.__dataclass_fields__) - {"seed"}
        return DqnConfig(seed=self.seed, **{k: v for k, v in self.agent.items() if k in names})
