"""
Parameter server shared by all workers.

Parameters are partitioned into disjoint optimiser groups (MBP and policy for
MERLIN, a single policy group for the baselines), each with its own ADAM
state and learning rate. Every named tensor has a lock, so a gradient
application or snapshot copy never interleaves with another within one
tensor; across tensors workers may see slightly stale values.
"""
import logging
import threading
from typing import Dict, Mapping, Optional

import numpy as np

from merlin.core.config import TrainConfig
from merlin.core.errors import GradientError

logger = logging.getLogger(__name__)


class ParameterServer:
    def __init__(self, params: Mapping[str, Mapping[str, np.ndarray]], learning_rates: Mapping[str, float],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: Optional[float] = None):
        self.params: Dict[str, Dict[str, np.ndarray]] = {
            group: {name: np.array(value) for name, value in values.items()} for group, values in params.items()
        }
        missing = set(self.params) - set(learning_rates)
        if missing:
            raise GradientError(f"No learning rate for groups {sorted(missing)}")
        self.learning_rates = dict(learning_rates)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.m = {g: {n: np.zeros_like(v) for n, v in vals.items()} for g, vals in self.params.items()}
        self.v = {g: {n: np.zeros_like(v) for n, v in vals.items()} for g, vals in self.params.items()}
        self.steps = {group: 0 for group in self.params}
        self.env_steps = 0
        self._locks = {name: threading.Lock() for vals in self.params.values() for name in vals}
        self._counter_lock = threading.Lock()
        self.assert_disjoint()

    @classmethod
    def from_config(cls, params: Mapping[str, Mapping[str, np.ndarray]], config: TrainConfig) -> "ParameterServer":
        rates = {"mbp": config.lr_mbp, "policy": config.lr_policy}
        return cls(params, {g: rates[g] for g in params}, config.adam_beta1, config.adam_beta2,
                   config.adam_eps, config.grad_clip)

    def assert_disjoint(self) -> None:
        seen = set()
        for group, values in self.params.items():
            overlap = seen & set(values)
            if overlap:
                raise GradientError(f"Group {group} shares parameters {sorted(overlap)}")
            seen |= set(values)

    def groups(self) -> Dict[str, list]:
        return {group: list(values) for group, values in self.params.items()}

    def snapshot(self) -> Dict[str, Dict[str, np.ndarray]]:
        """Per-tensor consistent copy of every parameter."""
        copy = {}
        for group, values in self.params.items():
            copy[group] = {}
            for name, value in values.items():
                with self._locks[name]:
                    copy[group][name] = value.copy()
        return copy

    def add_env_steps(self, n: int) -> int:
        with self._counter_lock:
            self.env_steps += n
            return self.env_steps

    def _validate(self, group: str, grads: Mapping[str, np.ndarray]) -> None:
        if group not in self.params:
            raise GradientError(f"Unknown parameter group {group}")
        params = self.params[group]
        unknown = set(grads) - set(params)
        if unknown:
            raise GradientError(f"Gradients for parameters outside group {group}: {sorted(unknown)[:5]}")
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise GradientError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise GradientError(f"{name}: non-finite gradient")

    def apply(self, group: str, grads: Mapping[str, np.ndarray]) -> None:
        """ADAM update of one group; rejected submissions leave every tensor untouched."""
        self.apply_all({group: grads})

    def apply_all(self, submission: Mapping[str, Mapping[str, np.ndarray]]) -> None:
        """
        Apply one window's gradients for several groups. Every group is
        validated before any is updated, so a rejected submission changes nothing.
        """
        try:
            for group, grads in submission.items():
                self._validate(group, grads)
        except GradientError as e:
            logger.error(f"Rejected gradient submission: {e}")
            raise
        for group, grads in submission.items():
            self._update(group, grads)

    def _update(self, group: str, grads: Mapping[str, np.ndarray]) -> None:
        if self.grad_clip is not None:
            norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                grads = {name: g * scale for name, g in grads.items()}
        with self._counter_lock:
            self.steps[group] += 1
            t = self.steps[group]
        lr = self.learning_rates[group]
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        params, m, v = self.params[group], self.m[group], self.v[group]
        for name, g in grads.items():
            with self._locks[name]:
                m[name] = self.beta1 * m[name] + (1.0 - self.beta1) * g
                v[name] = self.beta2 * v[name] + (1.0 - self.beta2) * g * g
                update = lr * (m[name] / correction1) / (np.sqrt(v[name] / correction2) + self.eps)
                params[name] = (params[name] - update).astype(params[name].dtype)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Flat name -> array view of parameters and ADAM moments for checkpointing."""
        arrays: Dict[str, np.ndarray] = {}
        snapshot = self.snapshot()
        for group, values in snapshot.items():
            arrays.update(values)
            for name in values:
                arrays[f"adam/m/{name}"] = self.m[group][name].copy()
                arrays[f"adam/v/{name}"] = self.v[group][name].copy()
        return arrays

    def load_state(self, arrays: Mapping[str, np.ndarray], steps: Mapping[str, int], env_steps: int) -> None:
        for group, values in self.params.items():
            for name in values:
                if name not in arrays:
                    raise GradientError(f"Checkpoint lacks parameter {name}")
                with self._locks[name]:
                    values[name] = np.array(arrays[name], dtype=values[name].dtype)
                    self.m[group][name] = np.array(arrays.get(f"adam/m/{name}", np.zeros_like(values[name])))
                    self.v[group][name] = np.array(arrays.get(f"adam/v/{name}", np.zeros_like(values[name])))
        self.steps.update({g: int(s) for g, s in steps.items() if g in self.steps})
        self.env_steps = int(env_steps)


def adam_step(server: ParameterServer, grads: Mapping[str, np.ndarray], which: str) -> Dict[str, np.ndarray]:
    """Apply one ADAM step to group `which` and return its updated parameters."""
    server.apply(which, grads)
    server.assert_disjoint()
    return server.params[which]
