from typing import Dict, Type

from merlin.agents.base import Agent, WindowResult
from merlin.agents.merlin import MerlinAgent
from merlin.agents.rl import RLLSTMAgent, RLMemAgent
from merlin.core.config import TrainConfig
from merlin.core.errors import ConfigError

AGENTS: Dict[str, Type[Agent]] = {
    MerlinAgent.name: MerlinAgent,
    RLLSTMAgent.name: RLLSTMAgent,
    RLMemAgent.name: RLMemAgent,
}


def make_agent(config: TrainConfig) -> Agent:
    agent_cls = AGENTS.get(config.agent)
    if agent_cls is None:
        raise ConfigError(f"Unknown agent: {config.agent}")
    return agent_cls(config)


__all__ = ["AGENTS", "Agent", "MerlinAgent", "RLLSTMAgent", "RLMemAgent", "WindowResult", "make_agent"]
