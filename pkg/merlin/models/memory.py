"""
External memory with content-based reads, append-style writes and a
retroactive second half per row.

Rows hold [z, retroactive sum]; reads within a step always see the memory
left by the previous step. The matrix lives on the tape during a window so
reads of rows written earlier in the same window are differentiable; usage
and write weightings are bookkeeping and stay in numpy.
"""
import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple, Union

import numpy as np

from merlin.autodiff import ops
from merlin.autodiff.tape import Tape, Tensor
from merlin.core.errors import ShapeError
from merlin.models.base import Params
from merlin.models.nets import Linear

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, Tensor]


@dataclass
class MemoryState:
    matrix: Matrix
    usage: np.ndarray
    v_wr: np.ndarray
    v_ret: np.ndarray
    t: int = 0
    # rows overwritten so far; kept for analysis dumps
    overwrites: int = field(default=0)

    @classmethod
    def blank(cls, rows: int, word: int, dtype="float32") -> "MemoryState":
        return cls(
            matrix=np.zeros((rows, word), dtype=dtype),
            usage=np.zeros(rows),
            v_wr=np.zeros(rows),
            v_ret=np.zeros(rows),
        )

    @property
    def rows(self) -> int:
        return self.usage.shape[0]

    @property
    def word(self) -> int:
        return self.matrix.shape[1]

    def on(self, tape: Tape) -> "MemoryState":
        matrix = self.matrix if isinstance(self.matrix, Tensor) else tape.constant(self.matrix)
        return MemoryState(matrix, self.usage.copy(), self.v_wr.copy(), self.v_ret.copy(), self.t, self.overwrites)

    def stopped(self) -> "MemoryState":
        """View whose matrix passes no gradient back to the writers."""
        if not isinstance(self.matrix, Tensor):
            return self
        return MemoryState(ops.stop_gradient(self.matrix), self.usage, self.v_wr, self.v_ret, self.t, self.overwrites)

    def numpy(self) -> "MemoryState":
        matrix = self.matrix.numpy() if isinstance(self.matrix, Tensor) else self.matrix.copy()
        return MemoryState(matrix, self.usage.copy(), self.v_wr.copy(), self.v_ret.copy(), self.t, self.overwrites)


@dataclass
class ReadResult:
    weights: Tensor
    vectors: Tensor

    @property
    def flat(self) -> Tensor:
        return self.vectors.reshape((self.vectors.size,))


class MemoryInterface(Linear):
    def __init__(self, name: str, n_in: int, num_heads: int, word: int):
        super().__init__(name, n_in, num_heads * (word + 1))
        self.num_heads, self.word = num_heads, word


def make_keys(interface: MemoryInterface, p: Params, h: Tensor) -> Tuple[Tensor, Tensor]:
    """Keys (K, word) from the first K*word interface entries, softplus strengths from the last K."""
    i = interface(p, h)
    k, word = interface.num_heads, interface.word
    keys = i[0:k * word].reshape((k, word))
    betas = ops.softplus(i[k * word:k * (word + 1)])
    return keys, betas


def content_read(mem: MemoryState, keys: Tensor, betas: Tensor) -> ReadResult:
    """
    Cosine-similarity addressing: w[i] = softmax_j(beta_i * cos(key_i, M_j)), m[i] = M^T w[i].
    """
    if keys.shape[-1] != mem.word:
        raise ShapeError("read", f"key width {keys.shape[-1]} does not match memory word {mem.word}")
    matrix = mem.matrix if isinstance(mem.matrix, Tensor) else keys.tape.constant(mem.matrix)
    similarity = ops.cosine(keys, matrix)
    weights = ops.softmax(similarity * betas.reshape((betas.shape[0], 1)))
    return ReadResult(weights, weights @ matrix)


def retroactive_update(v_ret: np.ndarray, v_wr: np.ndarray, gamma: float) -> np.ndarray:
    """v_ret' = gamma * v_ret + (1 - gamma) * v_wr, with v_wr the previous step's write weighting."""
    return gamma * v_ret + (1.0 - gamma) * v_wr


def allocate(mem: MemoryState) -> int:
    """Row for the next write: the next fresh row while any remain, else least used (lowest index on ties)."""
    if mem.t < mem.rows:
        return mem.t
    return int(np.argmin(mem.usage))


def write(mem: MemoryState, z: Tensor, gamma: float) -> MemoryState:
    """
    Append z to the allocated row and add z to the retroactive half of earlier rows.

    M_t = M_{t-1} + v_wr [z, 0]^T + v_ret [0, z]^T. Overwriting a used row
    clears its contents, usage and retroactive weight first.
    """
    word = mem.word
    if 2 * z.shape[0] != word:
        raise ShapeError("write", f"z of width {z.shape[0]} does not fit memory word {word}")
    tape = z.tape
    v_ret = retroactive_update(mem.v_ret, mem.v_wr, gamma)
    usage = mem.usage.copy()
    row = allocate(mem)
    matrix = mem.matrix if isinstance(mem.matrix, Tensor) else tape.constant(mem.matrix)
    overwrites = mem.overwrites
    if mem.t >= mem.rows:
        usage[row] = 0.0
        v_ret[row] = 0.0
        keep = np.ones((mem.rows, 1))
        keep[row] = 0.0
        matrix = matrix * tape.constant(keep)
        overwrites += 1
        logger.debug(f"Overwriting memory row {row} at step {mem.t}")
    v_wr = np.zeros(mem.rows)
    v_wr[row] = 1.0
    blank = tape.zeros(z.shape[0])
    first = ops.concat([z, blank]).reshape((1, word))
    matrix = matrix + tape.constant(v_wr[:, None]) * first
    if np.any(v_ret):
        second = ops.concat([blank, z]).reshape((1, word))
        matrix = matrix + tape.constant(v_ret[:, None]) * second
    return MemoryState(matrix, usage, v_wr, v_ret, mem.t + 1, overwrites)


def update_usage(mem: MemoryState, read_weights: Sequence[Tensor]) -> MemoryState:
    usage = mem.usage.copy()
    for weights in read_weights:
        w = weights.value
        usage += w.reshape(-1, mem.rows).sum(axis=0)
    return MemoryState(mem.matrix, usage, mem.v_wr, mem.v_ret, mem.t, mem.overwrites)
