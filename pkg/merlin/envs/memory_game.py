"""
Memory Game: pairs of cards face down on a grid; flipping two matching cards
on consecutive turns scores a point and removes them.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from merlin.core.config import TrainConfig
from merlin.core.errors import GameError
from merlin.envs.augment import augment
from merlin.envs.glyphs import glyph_set, load_glyph_dir

logger = logging.getLogger(__name__)


@dataclass
class Observation:
    image: np.ndarray
    prev_action: Optional[int]
    prev_reward: float
    num_actions: int

    def action_onehot(self, dtype="float32") -> np.ndarray:
        onehot = np.zeros(self.num_actions, dtype=dtype)
        if self.prev_action is not None:
            onehot[self.prev_action] = 1.0
        return onehot


@dataclass
class Board:
    cards: np.ndarray
    glyphs: np.ndarray
    cleared: np.ndarray
    last: Optional[int]
    moves_remaining: int

    @property
    def all_cleared(self) -> bool:
        return bool(self.cleared.all())


class MemoryGame:
    """
    One environment instance; `cards[i]` is the glyph id placed at grid index i.

    A fixed glyph pool is built once per environment seed and every episode
    draws its pairs from it. Every step consumes one move, including flips
    of cleared locations; once the board is clear each remaining step pays 1.
    """

    def __init__(self, config: TrainConfig, seed: int = 0):
        self.rows, self.cols = config.grid_rows, config.grid_cols
        self.num_actions = config.num_actions
        self.num_pairs = config.num_pairs
        self.move_budget = config.move_budget
        self.image_shape = (config.image_size, config.image_size, config.image_channels)
        if config.glyph_dir:
            self.pool = load_glyph_dir(config.glyph_dir, config.image_size)
        else:
            self.pool = glyph_set(seed, config.glyph_pool_size, config.image_size, config.glyph_min_distance)
        if self.pool.shape[0] < self.num_pairs:
            raise GameError(f"Glyph pool of {self.pool.shape[0]} cannot supply {self.num_pairs} pairs")
        self.rng = np.random.default_rng(seed)
        self.board: Optional[Board] = None
        self.done = True

    def blank(self) -> np.ndarray:
        return np.zeros(self.image_shape, dtype=np.float32)

    def reset(self, seed: Optional[int] = None) -> Observation:
        """Deal a fresh board; the first observation is blank."""
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        chosen = self.rng.choice(self.pool.shape[0], size=self.num_pairs, replace=False)
        cards = np.full(self.num_actions, -1, dtype=np.int64)
        deck = np.repeat(np.arange(self.num_pairs), 2)
        places = self.rng.permutation(self.num_actions)[:deck.size]
        cards[places] = deck
        # grid cells without a card start out cleared
        cleared = cards < 0
        self.board = Board(cards, self.pool[chosen], cleared, None, self.move_budget)
        self.done = False
        return Observation(self.blank(), None, 0.0, self.num_actions)

    def card_image(self, location: int) -> np.ndarray:
        glyph = augment(self.board.glyphs[self.board.cards[location]], self.rng)
        return np.repeat(glyph[:, :, None], self.image_shape[2], axis=2)

    def step(self, action: int) -> Tuple[Observation, float, bool]:
        if self.done or self.board is None:
            raise GameError("step called on a finished episode; call reset first")
        if not 0 <= int(action) < self.num_actions:
            raise GameError(f"Action {action} outside [0, {self.num_actions})")
        action = int(action)
        board = self.board
        board.moves_remaining -= 1
        reward = 0.0
        if board.all_cleared:
            reward = 1.0
            image = self.blank()
        elif board.cleared[action]:
            image = self.blank()
        else:
            image = self.card_image(action)
            last = board.last
            if (last is not None and last != action and not board.cleared[last]
                    and board.cards[last] == board.cards[action]):
                reward = 1.0
                board.cleared[[last, action]] = True
                logger.debug(f"Matched pair at {last} and {action}")
        board.last = action
        self.done = board.moves_remaining == 0
        return Observation(image, action, reward, self.num_actions), reward, self.done
