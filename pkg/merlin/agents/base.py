"""
Agent interface shared by MERLIN and the baselines.

An agent owns one module per optimiser group and knows how to take a step on
a tape. The base class runs truncation windows: it records up to `window`
steps on one tape, bootstraps the value on a separate tape when the window
ends mid-episode, builds the per-group losses and differentiates them.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from merlin.autodiff.tape import Tape, Tensor
from merlin.core.config import TrainConfig
from merlin.envs.memory_game import MemoryGame, Observation
from merlin.models.base import Module
from merlin.models.nets import to_chw

logger = logging.getLogger(__name__)

SALIENCY_SIGMA = 2.0

GroupParams = Dict[str, Dict[str, np.ndarray]]


@dataclass
class StepOutput:
    action: int
    logits: Tensor
    value: Tensor
    state: Any
    image: Tensor
    reads: Dict[str, np.ndarray] = field(default_factory=dict)
    extras: Dict[str, Any] = field(default_factory=dict)
    reward: float = 0.0


@dataclass
class Rollout:
    tape: Tape
    steps: List[StepOutput]
    observation: Observation
    state: Any
    done: bool

    @property
    def rewards(self) -> List[float]:
        return [s.reward for s in self.steps]

    @property
    def actions(self) -> List[int]:
        return [s.action for s in self.steps]


@dataclass
class LossBundle:
    """Backward seeds per optimiser group plus scalar statistics for logging."""

    seeds: Dict[str, Dict[Tensor, None]]
    stats: Dict[str, float]


@dataclass
class WindowResult:
    grads: Dict[str, Dict[str, np.ndarray]]
    stats: Dict[str, float]
    rewards: List[float]
    observation: Observation
    state: Any
    done: bool

    @property
    def steps(self) -> int:
        return len(self.rewards)


class Agent:
    """Base class; subclasses define modules, state, one step and the window losses."""

    name = "agent"

    def __init__(self, config: TrainConfig):
        self.config = config
        self.dtype = config.precision
        self.modules: Dict[str, Module] = {}

    # Parameters and state

    def groups(self) -> Dict[str, List[str]]:
        return {group: module.param_names() for group, module in self.modules.items()}

    def init_params(self, rng: np.random.Generator) -> GroupParams:
        return {group: module.init_params(rng, self.dtype) for group, module in self.modules.items()}

    def initial_state(self) -> Any:
        raise NotImplementedError

    def step(self, tape: Tape, p: Mapping[str, Tensor], obs: Observation, state: Any,
             rng: np.random.Generator, greedy: bool, index: int) -> StepOutput:
        raise NotImplementedError

    def window_losses(self, rollout: Rollout, v_boot: float) -> LossBundle:
        raise NotImplementedError

    # Shared machinery

    def observe(self, tape: Tape, obs: Observation, index: int):
        image = tape.input(f"image/{index}", to_chw(obs.image))
        action = tape.constant(obs.action_onehot(self.dtype))
        reward = tape.constant(np.float64(obs.prev_reward))
        return image, action, reward

    def rollout(self, params: Mapping[str, np.ndarray], env: MemoryGame, obs: Observation, state: Any,
                rng: np.random.Generator, steps: int, greedy: bool = False) -> Rollout:
        """Record up to `steps` environment steps on one tape, stopping at episode end."""
        tape = Tape(self.dtype)
        p = tape.bind_params(params)
        current = state.on(tape)
        outputs: List[StepOutput] = []
        done = False
        for index in range(steps):
            out = self.step(tape, p, obs, current, rng, greedy, index)
            obs, out.reward, done = env.step(out.action)
            outputs.append(out)
            current = out.state
            if done:
                break
        return Rollout(tape, outputs, obs, current, done)

    def bootstrap_value(self, params: Mapping[str, np.ndarray], obs: Observation, state: Any,
                        rng: np.random.Generator) -> float:
        """Value of the next observation, computed on its own tape from the carried state."""
        tape = Tape(self.dtype)
        p = tape.bind_params(params)
        # child stream so bootstrapping leaves the rollout draws unchanged
        out = self.step(tape, p, obs, state.on(tape), rng.spawn(1)[0], False, 0)
        return out.value.item()

    def run_window(self, params: GroupParams, env: MemoryGame, obs: Observation, state: Any,
                   rng: np.random.Generator) -> WindowResult:
        """
        One truncation window: roll out, bootstrap if the episode continues,
        and differentiate each group's loss with respect to that group only.
        """
        flat = flatten(params)
        rollout = self.rollout(flat, env, obs, state, rng, self.config.window)
        carried = rollout.state.numpy()
        v_boot = 0.0
        if not rollout.done:
            v_boot = self.bootstrap_value(flat, rollout.observation, carried, rng)
        bundle = self.window_losses(rollout, v_boot)
        grads = {}
        for group, names in self.groups().items():
            grads[group] = rollout.tape.backward(bundle.seeds[group], wrt=names)
        return WindowResult(grads, bundle.stats, rollout.rewards, rollout.observation, carried, rollout.done)

    def saliency(self, tape: Tape, out: StepOutput) -> np.ndarray:
        """Squared gradient of the value with respect to the observed pixels, smoothed."""
        g = tape.gradients({out.value: None})[out.image.index]
        if g is None:
            g = np.zeros_like(out.image.value)
        return gaussian_filter((g * g).sum(axis=0), sigma=SALIENCY_SIGMA)


def flatten(params: GroupParams) -> Dict[str, np.ndarray]:
    flat: Dict[str, np.ndarray] = {}
    for group in params.values():
        flat.update(group)
    return flat


def one_hot(tape: Tape, index: int, size: int, dtype) -> Tensor:
    v = np.zeros(size, dtype=dtype)
    v[index] = 1.0
    return tape.constant(v)


def step_stats(values: Optional[Dict[str, float]] = None, **extra) -> Dict[str, float]:
    stats = {"mbp_loss": 0.0, "kl": 0.0, "image_loss": 0.0, "return_loss": 0.0, "policy_entropy": 0.0}
    stats.update(values or {})
    stats.update(extra)
    return stats
