"""Reference players: a perfect-memory oracle and a uniform-random player."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from merlin.core.config import TrainConfig
from merlin.envs.memory_game import MemoryGame

logger = logging.getLogger(__name__)


@dataclass
class EpisodeScore:
    score: float
    moves_to_clear: Optional[int]


@dataclass
class ReferenceScores:
    oracle_mean: float
    oracle_stderr: float
    random_mean: float
    random_stderr: float
    oracle_clear_rate: float


class PerfectMemoryPlayer:
    """
    Remembers every card it has seen. If the card just flipped has a known
    partner it flips the partner; otherwise it flips one card of a known
    pair, else an unseen card. After clearance any location will do.
    """

    def __init__(self, num_actions: int):
        self.num_actions = num_actions
        self.seen: Dict[int, int] = {}
        self.last: Optional[int] = None

    def observe(self, location: int, card: int) -> None:
        if card >= 0:
            self.seen[location] = card
        self.last = location

    def act(self, cleared: np.ndarray) -> int:
        live = {loc: card for loc, card in self.seen.items() if not cleared[loc]}
        if self.last is not None and self.last in live:
            for loc, card in live.items():
                if loc != self.last and card == live[self.last]:
                    return loc
        by_card: Dict[int, List[int]] = {}
        for loc, card in sorted(live.items()):
            by_card.setdefault(card, []).append(loc)
        for locations in by_card.values():
            if len(locations) == 2:
                return locations[0]
        for loc in range(self.num_actions):
            if not cleared[loc] and loc not in self.seen:
                return loc
        return 0


def oracle_play(env: MemoryGame, seed: Optional[int] = None) -> EpisodeScore:
    """Play one episode with the perfect-memory strategy."""
    env.reset(seed)
    player = PerfectMemoryPlayer(env.num_actions)
    score, moves, done, cleared_at = 0.0, 0, False, None
    while not done:
        action = player.act(env.board.cleared)
        card = int(env.board.cards[action])
        _, reward, done = env.step(action)
        moves += 1
        score += reward
        player.observe(action, card)
        if cleared_at is None and env.board.all_cleared:
            cleared_at = moves
    return EpisodeScore(score, cleared_at)


def random_play(env: MemoryGame, rng: np.random.Generator, seed: Optional[int] = None) -> EpisodeScore:
    """Play one episode choosing locations uniformly at random."""
    env.reset(seed)
    score, moves, done, cleared_at = 0.0, 0, False, None
    while not done:
        _, reward, done = env.step(int(rng.integers(env.num_actions)))
        moves += 1
        score += reward
        if cleared_at is None and env.board.all_cleared:
            cleared_at = moves
    return EpisodeScore(score, cleared_at)


def mean_stderr(values: List[float]):
    arr = np.asarray(values, dtype=np.float64)
    stderr = arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else 0.0
    return float(arr.mean()), float(stderr)


def reference_scores(config: TrainConfig, episodes: int = 10_000, seed: int = 0) -> ReferenceScores:
    """Simulated score ceiling (oracle) and floor (random play) for a task."""
    env = MemoryGame(config, seed)
    rng = np.random.default_rng(seed)
    oracle = [oracle_play(env, seed + i) for i in range(episodes)]
    random = [random_play(env, rng, seed + i) for i in range(episodes)]
    oracle_mean, oracle_stderr = mean_stderr([o.score for o in oracle])
    random_mean, random_stderr = mean_stderr([r.score for r in random])
    clear_rate = float(np.mean([o.moves_to_clear is not None for o in oracle]))
    logger.info(f"Reference scores over {episodes} episodes: oracle {oracle_mean:.3f}, random {random_mean:.3f}")
    return ReferenceScores(oracle_mean, oracle_stderr, random_mean, random_stderr, clear_rate)
