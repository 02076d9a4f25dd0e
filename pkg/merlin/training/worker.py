import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from merlin.agents.base import Agent
from merlin.core.config import TrainConfig
from merlin.core.errors import GradientError, NonFiniteError
from merlin.envs.memory_game import MemoryGame
from merlin.schemas.run import MetricsRow
from merlin.training.server import ParameterServer

logger = logging.getLogger(__name__)

EPISODE_STATS = ("mbp_loss", "kl", "image_loss", "return_loss", "saturated")


@dataclass
class EpisodeAccumulator:
    score: float = 0.0
    steps: int = 0
    sums: Dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in EPISODE_STATS})
    entropy_weighted: float = 0.0

    def add(self, rewards: List[float], stats: Dict[str, float]) -> None:
        self.score += float(sum(rewards))
        self.steps += len(rewards)
        for key in EPISODE_STATS:
            self.sums[key] += stats.get(key, 0.0)
        self.entropy_weighted += stats.get("policy_entropy", 0.0) * len(rewards)


def worker_seed(config: TrainConfig, index: int) -> int:
    """Seeds worker `index`'s environment, including its glyph pool."""
    return config.seed * 1000 + index


class Worker:
    """
    Owns one environment and all episode state; each `run_window` syncs
    parameters from the server, runs one truncation window, submits both
    gradient sets and reports finished episodes.
    """

    def __init__(self, index: int, config: TrainConfig, agent: Agent, server: ParameterServer,
                 report: Callable[[MetricsRow], None], clock: Optional[Callable[[], float]] = None):
        self.index = index
        self.config = config
        self.agent = agent
        self.server = server
        self.report = report
        self.clock = clock
        seed = worker_seed(config, index)
        self.env = MemoryGame(config, seed)
        self.rng = np.random.default_rng(seed + 1)
        self.episodes = 0
        self.discarded = 0
        self._new_episode()

    def _new_episode(self) -> None:
        self.observation = self.env.reset()
        self.state = self.agent.initial_state()
        self.accumulator = EpisodeAccumulator()

    def run_window(self) -> int:
        """Run one window; returns the number of environment steps taken."""
        params = self.server.snapshot()
        try:
            result = self.agent.run_window(params, self.env, self.observation, self.state, self.rng)
        except NonFiniteError as e:
            self.discarded += 1
            logger.warning(f"Worker {self.index}: discarding window after non-finite value in {e.primitive}")
            self._new_episode()
            return 0
        try:
            self.server.apply_all(result.grads)
        except GradientError as e:
            self.discarded += 1
            logger.warning(f"Worker {self.index}: gradient rejected, resetting episode ({e})")
            self._new_episode()
            return 0
        env_steps = self.server.add_env_steps(result.steps)
        self.accumulator.add(result.rewards, result.stats)
        self.observation, self.state = result.observation, result.state
        if result.done:
            self._finish_episode(env_steps)
        return result.steps

    def _finish_episode(self, env_steps: int) -> None:
        acc = self.accumulator
        self.episodes += 1
        row = MetricsRow(
            wall_time=self.clock() if self.clock else 0.0,
            env_steps=env_steps,
            episode_return=acc.score,
            policy_entropy=acc.entropy_weighted / max(acc.steps, 1),
            **{key: value for key, value in acc.sums.items() if key != "saturated"},
            saturated=int(acc.sums["saturated"]),
        )
        if row.saturated:
            logger.warning(f"Worker {self.index}: clamped {row.saturated} probabilities in episode {self.episodes}")
        logger.debug(f"Worker {self.index}: episode {self.episodes} return {acc.score:.1f} at {env_steps} steps")
        self.report(row)
        self._new_episode()


def run_worker(worker: Worker, max_steps: int, stop: threading.Event,
               after_window: Optional[Callable[[], None]] = None) -> None:
    """Thread body: run windows until the global step budget is spent or `stop` is set."""
    while not stop.is_set() and worker.server.env_steps < max_steps:
        worker.run_window()
        if after_window is not None:
            after_window()


def wall_clock() -> Callable[[], float]:
    start = time.monotonic()
    return lambda: time.monotonic() - start
