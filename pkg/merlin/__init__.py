"""MERLIN: memory-based predictor and read-only policy agents for the memory game."""

__version__ = "0.1.0"
