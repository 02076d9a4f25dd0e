from merlin.envs.memory_game import MemoryGame, Observation
from merlin.envs.oracle import oracle_play, random_play, reference_scores

__all__ = ["MemoryGame", "Observation", "oracle_play", "random_play", "reference_scores"]
