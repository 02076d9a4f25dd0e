import os
from typing import Optional, List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings

from merlin.core.errors import ConfigError


AgentName = Literal["merlin", "rl-lstm", "rl-mem"]
TaskName = Literal["memory", "memory-mini"]
LesionName = Literal["none", "no-memory", "only-return", "no-return", "no-retroactive"]

LESION_ALIASES = {
    "only-return-decoder": "only-return",
    "no-return-decoder": "no-return",
}


class Settings(BaseSettings):
    PROJECT_NAME: str = "MERLIN memory game agents"

    LOG_LEVEL: str = "INFO"
    OUTPUT_ROOT: str = "runs"
    DEFAULT_WORKERS: int = os.cpu_count() or 1
    CHECKPOINT_INTERVAL: int = 100_000

    @field_validator("LOG_LEVEL")
    @classmethod
    def upper_log_level(cls, v: str) -> str:
        return v.upper()

    model_config = ConfigDict(
        case_sensitive=True,
        env_prefix="MERLIN_",
        env_file=".env",
        extra="ignore",
    )


settings = Settings()


class TrainConfig(BaseModel):
    """Hyperparameters, architecture sizes and environment sizes for one run."""

    agent: AgentName = "merlin"
    task: TaskName = "memory"
    seed: int = 0
    workers: int = Field(1, ge=1)
    max_steps: int = Field(1_000_000, ge=1)
    sync: bool = False
    precision: Literal["float32", "float64"] = "float32"
    checkpoint_interval: int = Field(settings.CHECKPOINT_INTERVAL, ge=1)

    # Optimisation
    lr_mbp: float = Field(1e-5, gt=0)
    lr_policy: float = Field(1e-4, gt=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    grad_clip: Optional[float] = Field(None, gt=0)

    # Returns and losses
    gamma: float = Field(1.0, ge=0, le=1)
    lam: float = Field(0.8, ge=0, le=1)
    alpha_image: float = Field(1.0, ge=0)
    alpha_return: float = Field(1.0 / 24.0, ge=0)
    alpha_reward: float = Field(1.0, ge=0)
    alpha_action: float = Field(1.0, ge=0)
    alpha_entropy: float = Field(0.01, ge=0)
    window: int = Field(24, ge=1)

    # Latent state and memory
    z_size: int = Field(100, ge=1)
    mem_rows: int = Field(40, ge=1)
    mbp_read_heads: int = Field(3, ge=0)
    policy_read_heads: int = Field(1, ge=0)
    rl_read_heads: int = Field(3, ge=1)
    retroactive: bool = False

    # Architecture
    image_size: int = Field(32, ge=8)
    image_channels: int = Field(1, ge=1)
    resnet_channels: int = Field(64, ge=1)
    resnet_bottleneck: int = Field(32, ge=1)
    resnet_strides: Tuple[int, ...] = (2, 1, 2, 1, 2, 1)
    embed_size: int = Field(500, ge=1)
    lstm_layers: int = Field(1, ge=1)
    lstm_width: int = Field(50, ge=1)
    policy_hidden: int = Field(200, ge=1)
    value_hidden: int = Field(200, ge=1)
    advantage_hidden: int = Field(50, ge=1)
    block_policy_gradient: bool = True

    # Lesion switches
    lesion: LesionName = "none"
    use_memory: bool = True
    observation_decoders: bool = True
    learned_prior: bool = True
    kl_cost: bool = True
    return_decoder: bool = True

    # Environment
    grid_rows: int = Field(4, ge=1)
    grid_cols: int = Field(4, ge=1)
    num_pairs: int = Field(8, ge=1)
    move_budget: int = Field(24, ge=1)
    glyph_pool_size: int = Field(48, ge=1)
    glyph_min_distance: float = Field(0.05, ge=0, le=1)
    glyph_dir: Optional[str] = None

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("lesion", mode="before")
    @classmethod
    def normalise_lesion(cls, v):
        if isinstance(v, str):
            return LESION_ALIASES.get(v, v)
        return v

    @model_validator(mode="after")
    def check_consistency(self) -> "TrainConfig":
        if self.agent != "merlin" and self.lesion != "none":
            raise ValueError("Lesions only apply to the merlin agent")
        if 2 * self.num_pairs > self.grid_rows * self.grid_cols:
            raise ValueError("Pairs do not fit on the grid")
        if self.glyph_pool_size < self.num_pairs:
            raise ValueError("Glyph pool smaller than the number of pairs")
        downsample = 1
        for stride in self.resnet_strides:
            downsample *= stride
        if self.image_size % downsample:
            raise ValueError("Image size must be divisible by the encoder downsampling")
        return self

    @property
    def num_actions(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def retro_gamma(self) -> float:
        """Discount used for retroactive writes; 1 leaves the second half blank."""
        return self.gamma if self.retroactive else 1.0

    def update(self, **changes) -> "TrainConfig":
        """Return a validated copy with the given fields replaced."""
        try:
            return TrainConfig.model_validate({**self.model_dump(), **changes})
        except ValueError as e:
            raise ConfigError(str(e)) from e


# Memory game hyperparameters per agent family
MERLIN_MEMORY = dict(
    lr_mbp=1e-5, lr_policy=1e-4, gamma=1.0, lam=0.8,
    alpha_image=1.0, alpha_reward=1.0, alpha_return=1.0 / 24.0, alpha_action=1.0,
    alpha_entropy=0.01, window=24, z_size=100, retroactive=False,
    mem_rows=40, mbp_read_heads=3, policy_read_heads=1,
)

RL_MEMORY = dict(
    lr_policy=1e-5, gamma=1.0, lam=0.8, alpha_entropy=0.01, window=24,
    mem_rows=40, z_size=100, rl_read_heads=3,
)

FULL_TASK = dict(grid_rows=4, grid_cols=4, num_pairs=8, move_budget=24, window=24)
MINI_TASK = dict(grid_rows=2, grid_cols=3, num_pairs=3, move_budget=10, window=10)

TASK_BOARDS = {"memory": FULL_TASK, "memory-mini": MINI_TASK}


def preset(agent: str = "merlin", task: str = "memory", **overrides) -> TrainConfig:
    """Build the configuration for an agent/task pair; `overrides` are applied last."""
    values = dict(MERLIN_MEMORY if agent == "merlin" else RL_MEMORY)
    values.update(TASK_BOARDS.get(task, {}))
    values.update(agent=agent, task=task)
    values.update(overrides)
    try:
        config = TrainConfig.model_validate(values)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if config.lesion != "none":
        config = lesion(config.update(lesion="none"), config.lesion)
    return config


def load_config_file(path: str, **overrides) -> TrainConfig:
    """Load a JSON config file, apply flag overrides and any lesion it names."""
    try:
        with open(path, "r") as f:
            raw = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    try:
        config = TrainConfig.model_validate_json(raw)
    except ValueError as e:
        raise ConfigError(f"Invalid config file {path}: {e}") from e
    task = overrides.get("task")
    if task is not None and task != config.task:
        # a different task brings its own board; explicit flags still win
        overrides = {**TASK_BOARDS.get(task, {}), **overrides}
    if overrides:
        config = config.update(**overrides)
    if config.lesion != "none":
        config = lesion(config.update(lesion="none"), config.lesion)
    return config


LESION_SWITCHES = {
    "none": {},
    # external memory removed; predictor and policy keep separate deep LSTMs
    "no-memory": dict(use_memory=False),
    # observation decoders removed, prior fixed to N(0, 1), no KL cost
    "only-return": dict(observation_decoders=False, learned_prior=False, kl_cost=False),
    # return decoder removed; the policy learns its own linear value head
    "no-return": dict(return_decoder=False),
    # second half of each memory row never written
    "no-retroactive": dict(retroactive=False),
}


def lesion(config: TrainConfig, flag: str) -> TrainConfig:
    """Apply one of the four lesion switches; aliases such as "only-return-decoder" are accepted."""
    flag = LESION_ALIASES.get(flag, flag)
    if flag not in LESION_SWITCHES:
        raise ConfigError(f"Unknown lesion: {flag}")
    if flag != "none" and config.agent != "merlin":
        raise ConfigError(f"Lesion {flag} requires the merlin agent, got {config.agent}")
    return config.update(lesion=flag, **LESION_SWITCHES[flag])


def lesion_names() -> List[str]:
    return list(LESION_SWITCHES)
