from merlin.schemas.base import BaseSchema
from merlin.schemas.checkpoint import CheckpointMeta
from merlin.schemas.run import (
    METRICS_COLUMNS,
    CheckResult,
    EpisodeResult,
    EvalSummary,
    MetricsRow,
    ReferenceSummary,
    RunManifest,
)

__all__ = [
    "BaseSchema",
    "CheckpointMeta",
    "METRICS_COLUMNS", "MetricsRow", "RunManifest",
    "EpisodeResult", "EvalSummary", "ReferenceSummary",
    "CheckResult",
]
