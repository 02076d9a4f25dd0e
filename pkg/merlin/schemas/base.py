from pydantic import BaseModel, ConfigDict


class BaseSchema(BaseModel):
    """Base schema for run artefacts written to or read from disk."""

    model_config = ConfigDict(
        from_attributes=True,  # build from dataclasses such as EpisodeScore
        populate_by_name=True,
    )
