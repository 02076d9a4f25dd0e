from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple, TypeVar

import numpy as np
from scipy.stats import truncnorm

from merlin.autodiff.tape import Tensor

Params = Mapping[str, Tensor]

ModuleType = TypeVar("ModuleType", bound="Module")


@dataclass(frozen=True)
class ParamSpec:
    """Name, shape and fan-in of one parameter tensor (fan_in 0 means zero init)."""

    name: str
    shape: Tuple[int, ...]
    fan_in: int = 0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def init_param(spec: ParamSpec, rng: np.random.Generator, dtype="float32") -> np.ndarray:
    """
    Truncated-normal fan-in initialisation.

    Weights are drawn from N(0, 1/fan_in) truncated at two standard deviations;
    biases (fan_in 0) start at zero.
    """
    if spec.fan_in <= 0:
        return np.zeros(spec.shape, dtype=dtype)
    std = 1.0 / np.sqrt(spec.fan_in)
    values = truncnorm.rvs(-2.0, 2.0, scale=std, size=spec.shape, random_state=rng)
    return np.asarray(values, dtype=dtype).reshape(spec.shape)


class Module:
    """
    Base class for network components.

    A module owns parameter specs under its name prefix and child modules; it
    holds no arrays. Forward passes receive the parameters bound on a tape.
    """

    def __init__(self, name: str):
        self.name = name
        self._specs: List[ParamSpec] = []
        self._children: List["Module"] = []

    def param(self, local: str, shape: Tuple[int, ...], fan_in: int = 0) -> str:
        full = f"{self.name}/{local}"
        self._specs.append(ParamSpec(full, tuple(int(s) for s in shape), fan_in))
        return full

    def add(self, child: ModuleType) -> ModuleType:
        self._children.append(child)
        return child

    def specs(self) -> List[ParamSpec]:
        result = list(self._specs)
        for child in self._children:
            result.extend(child.specs())
        return result

    def param_names(self) -> List[str]:
        return [s.name for s in self.specs()]

    def num_params(self) -> int:
        return sum(s.size for s in self.specs())

    def init_params(self, rng: np.random.Generator, dtype="float32") -> Dict[str, np.ndarray]:
        return {s.name: init_param(s, rng, dtype) for s in self.specs()}

    def zero_params(self, dtype="float32") -> Dict[str, np.ndarray]:
        return {s.name: np.zeros(s.shape, dtype=dtype) for s in self.specs()}

