from merlin.db.checkpoint import Checkpoint, load, save
from merlin.db.metrics import MetricsWriter

__all__ = ["Checkpoint", "MetricsWriter", "load", "save"]
