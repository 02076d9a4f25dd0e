from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import ConfigDict, Field

from merlin.schemas.base import BaseSchema

METRICS_COLUMNS = (
    "wall_time", "env_steps", "episode_return", "mbp_loss", "kl", "image_loss", "return_loss", "policy_entropy",
)


class RunManifest(BaseSchema):
    """Written once before training starts; never modified afterwards."""

    config: Dict[str, Any]
    seed: int
    build_id: str = Field(..., min_length=8)
    started_at: datetime
    output_dir: str

    model_config = ConfigDict(frozen=True, from_attributes=True, populate_by_name=True)


class MetricsRow(BaseSchema):
    """One completed episode."""

    wall_time: float = Field(..., ge=0)
    env_steps: int = Field(..., ge=0)
    episode_return: float
    mbp_loss: float = 0.0
    kl: float = 0.0
    image_loss: float = 0.0
    return_loss: float = 0.0
    policy_entropy: float = 0.0
    # clamped Bernoulli probabilities; logged, not a CSV column
    saturated: int = Field(0, ge=0)

    def csv_values(self) -> List[str]:
        return [f"{self.wall_time:.3f}", str(self.env_steps)] + [
            repr(float(getattr(self, name))) for name in METRICS_COLUMNS[2:]
        ]


class EpisodeResult(BaseSchema):
    episode: int
    seed: int
    score: float
    steps: int


class ReferenceSummary(BaseSchema):
    oracle_mean: float
    oracle_stderr: float
    random_mean: float
    random_stderr: float
    oracle_clear_rate: float


class EvalSummary(BaseSchema):
    checkpoint: str
    agent: str
    episodes: int
    greedy: bool
    mean_score: float
    stderr: float
    reference: Optional[ReferenceSummary] = None


class CheckResult(BaseSchema):
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
