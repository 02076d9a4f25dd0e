class MerlinError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(MerlinError):
    """A primitive or slot received arrays of incompatible shape."""

    def __init__(self, primitive: str, message: str):
        self.primitive = primitive
        super().__init__(f"{primitive}: {message}")


class NonFiniteError(MerlinError):
    """A primitive produced NaN or infinite values."""

    def __init__(self, primitive: str, message: str = "non-finite output"):
        self.primitive = primitive
        super().__init__(f"{primitive}: {message}")


class ConfigError(MerlinError):
    """Invalid configuration or flag combination."""


class CheckpointError(MerlinError):
    """Unreadable or incompatible checkpoint file."""


class GameError(MerlinError):
    """Illegal interaction with the memory game."""


class IndistinguishableGlyphError(MerlinError):
    """A generated glyph is too close to one already in the set."""


class GradientError(MerlinError):
    """A gradient is malformed, mismatched or cannot be checked."""
