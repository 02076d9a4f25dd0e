"""
Reverse-mode automatic differentiation over dense numpy arrays.

A Tape records every primitive application in the order it happens, so the
record is topologically sorted by construction. Leaves are either named slots
(parameters or inputs, which can be rebound when the tape is replayed by
`eval`) or anonymous constants. `backward` walks the record in reverse.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from merlin.autodiff.primitives import PRIMITIVES, Primitive
from merlin.core.errors import NonFiniteError, ShapeError

PARAM = "param"
INPUT = "input"
CONST = "const"
OP = "op"


@dataclass
class Node:
    kind: str
    primitive: Optional[Primitive] = None
    parents: Tuple[int, ...] = ()
    attrs: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None


class Tensor:
    """Handle to one value recorded on a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"<Tensor #{self.index} shape={self.shape}>"

    def _lift(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else self.tape.constant(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.apply("scale", self, factor=float(other))
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.apply("scale", self, factor=1.0 / float(other))
        return NotImplemented

    def __neg__(self):
        return self.tape.apply("scale", self, factor=-1.0)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return self.tape.apply("slice", self, key=key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.apply("reshape", self, shape=tuple(shape))

    def sum(self, axis: Optional[int] = None):
        return self.tape.apply("sum", self, axis=axis)

    def mean(self, axis: Optional[int] = None):
        return self.tape.apply("mean", self, axis=axis)


Seed = Mapping[Union[str, Tensor], Optional[np.ndarray]]


class Tape:
    """Ordered record of primitive applications with named parameter and input slots."""

    def __init__(self, dtype: Union[str, np.dtype] = "float32"):
        self.dtype = np.dtype(dtype)
        self.nodes: List[Node] = []
        self.values: List[np.ndarray] = []
        self.contexts: List[Any] = []
        self.slots: Dict[str, int] = {}
        self.outputs: Dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    # Leaves

    def _leaf(self, kind: str, value, name: Optional[str] = None) -> Tensor:
        array = np.array(value, dtype=self.dtype)
        self.nodes.append(Node(kind=kind, name=name))
        self.values.append(array)
        self.contexts.append(None)
        return Tensor(self, len(self.nodes) - 1)

    def param(self, name: str, value) -> Tensor:
        if name in self.slots:
            raise ShapeError("param", f"slot {name} already bound")
        tensor = self._leaf(PARAM, value, name)
        self.slots[name] = tensor.index
        return tensor

    def input(self, name: str, value) -> Tensor:
        if name in self.slots:
            raise ShapeError("input", f"slot {name} already bound")
        tensor = self._leaf(INPUT, value, name)
        self.slots[name] = tensor.index
        return tensor

    def constant(self, value) -> Tensor:
        return self._leaf(CONST, value)

    def zeros(self, *shape) -> Tensor:
        return self.constant(np.zeros(shape, dtype=self.dtype))

    def bind_params(self, values: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        return {name: self.param(name, value) for name, value in values.items()}

    @property
    def param_names(self) -> List[str]:
        return [n for n, i in self.slots.items() if self.nodes[i].kind == PARAM]

    def mark_output(self, name: str, tensor: Tensor) -> Tensor:
        self.outputs[name] = tensor.index
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        if name in self.outputs:
            return Tensor(self, self.outputs[name])
        return Tensor(self, self.slots[name])

    # Primitive application

    def _run(self, primitive: Primitive, inputs: List[np.ndarray], attrs: Dict[str, Any]):
        primitive.check([x.shape for x in inputs], **attrs)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out, ctx = primitive.forward(inputs, **attrs)
        out = np.asarray(out, dtype=self.dtype)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(primitive.name)
        return out, ctx

    def apply(self, primitive: Union[str, Primitive], *tensors: Tensor, **attrs) -> Tensor:
        if isinstance(primitive, str):
            primitive = PRIMITIVES[primitive]
        for t in tensors:
            if t.tape is not self:
                raise ShapeError(primitive.name, "operand recorded on a different tape")
        out, ctx = self._run(primitive, [t.value for t in tensors], attrs)
        self.nodes.append(Node(kind=OP, primitive=primitive,
                               parents=tuple(t.index for t in tensors), attrs=attrs))
        self.values.append(out)
        self.contexts.append(ctx)
        return Tensor(self, len(self.nodes) - 1)

    # Replay and differentiation

    def eval(self, bindings: Optional[Mapping[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
        """
        Replay the record with rebound slots.

        Args:
            bindings: New values for named slots; unbound slots keep their recorded value

        Returns:
            Values of every marked output
        """
        bindings = bindings or {}
        unknown = set(bindings) - set(self.slots)
        if unknown:
            raise ShapeError("eval", f"unknown slots {sorted(unknown)}")
        for index, node in enumerate(self.nodes):
            if node.kind == OP:
                parents = [self.values[i] for i in node.parents]
                self.values[index], self.contexts[index] = self._run(node.primitive, parents, node.attrs)
            elif node.name in bindings:
                value = np.array(bindings[node.name], dtype=self.dtype)
                if value.shape != self.values[index].shape:
                    raise ShapeError(node.kind, f"slot {node.name} expects {self.values[index].shape}, got {value.shape}")
                self.values[index] = value
        return {name: self.values[i].copy() for name, i in self.outputs.items()}

    def _seed_index(self, key: Union[str, Tensor]) -> int:
        if isinstance(key, Tensor):
            return key.index
        if key in self.outputs:
            return self.outputs[key]
        if key in self.slots:
            return self.slots[key]
        raise ShapeError("backward", f"unknown seed {key}")

    def gradients(self, seed: Seed) -> List[Optional[np.ndarray]]:
        """Accumulated gradient for every recorded value (None where nothing flows)."""
        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        for key, value in seed.items():
            index = self._seed_index(key)
            target = self.values[index]
            g = np.ones_like(target) if value is None else np.asarray(value, dtype=self.dtype)
            if g.shape != target.shape:
                raise ShapeError("backward", f"seed shape {g.shape} does not match {target.shape}")
            grads[index] = g if grads[index] is None else grads[index] + g
        start = max(self._seed_index(k) for k in seed) if seed else -1
        for index in range(start, -1, -1):
            node = self.nodes[index]
            g = grads[index]
            if g is None or node.kind != OP:
                continue
            parents = [self.values[i] for i in node.parents]
            parent_grads = node.primitive.backward(g, self.values[index], parents,
                                                   self.contexts[index], **node.attrs)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                pg = np.asarray(pg, dtype=self.dtype)
                grads[parent] = pg if grads[parent] is None else grads[parent] + pg
        return grads

    def backward(self, seed: Seed, wrt: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
        """
        Gradients of the seeded values with respect to named slots.

        Args:
            seed: Output name or tensor mapped to its upstream gradient (None means ones)
            wrt: Slot names to report; defaults to every parameter slot

        Returns:
            Gradient per slot, zeros where no path exists
        """
        grads = self.gradients(seed)
        names = self.param_names if wrt is None else list(wrt)
        result = {}
        for name in names:
            index = self.slots[name]
            g = grads[index]
            result[name] = np.zeros_like(self.values[index]) if g is None else g
        return result


def eval(tape: Tape, bindings: Optional[Mapping[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
    return tape.eval(bindings)


def backward(tape: Tape, seed: Seed, wrt: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
    return tape.backward(seed, wrt)
