from typing import Any, Dict, List, Literal

from pydantic import Field

from merlin.schemas.base import BaseSchema


class CheckpointMeta(BaseSchema):
    """JSON header of a checkpoint file."""

    agent: str
    precision: Literal["float32", "float64"]
    config: Dict[str, Any]
    env_steps: int = Field(0, ge=0)
    groups: Dict[str, List[str]]
    group_steps: Dict[str, int] = Field(default_factory=dict)
