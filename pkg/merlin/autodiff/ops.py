"""Functional wrappers around the registered primitives."""
from typing import Sequence, Tuple

import numpy as np

from merlin.autodiff.tape import Tensor

PROB_EPS = 1e-6


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a.tape.apply("matmul", a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    return a.tape.apply("add", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return a.tape.apply("mul", a, b)


def tanh(x: Tensor) -> Tensor:
    return x.tape.apply("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return x.tape.apply("sigmoid", x)


def relu(x: Tensor) -> Tensor:
    return x.tape.apply("relu", x)


def softmax(x: Tensor) -> Tensor:
    return x.tape.apply("softmax", x)


def log_softmax(x: Tensor) -> Tensor:
    return x.tape.apply("log_softmax", x)


def softplus(x: Tensor) -> Tensor:
    return x.tape.apply("softplus", x)


def exp(x: Tensor) -> Tensor:
    return x.tape.apply("exp", x)


def log(x: Tensor) -> Tensor:
    return x.tape.apply("log", x)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    return x.tape.apply("clip", x, lo=lo, hi=hi)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [t for t in tensors if t.size > 0 or len(tensors) == 1]
    if len(tensors) == 1:
        return tensors[0]
    return tensors[0].tape.apply("concat", *tensors, axis=axis)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return x.reshape(shape)


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    return x.sum(axis)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    return x.mean(axis)


def cosine(keys: Tensor, memory: Tensor) -> Tensor:
    return keys.tape.apply("cosine", keys, memory)


def stop_gradient(x: Tensor) -> Tensor:
    return x.tape.apply("stop_gradient", x)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return x.tape.apply("conv2d", x, w, stride=stride, padding=padding)


def conv_transpose2d(x: Tensor, w: Tensor, out_size: Tuple[int, int],
                     stride: int = 1, padding: int = 0) -> Tensor:
    return x.tape.apply("conv_transpose2d", x, w, stride=stride, padding=padding,
                        out_size=tuple(out_size))


def square(x: Tensor) -> Tensor:
    return x * x


def bernoulli_nll(probs: Tensor, targets: np.ndarray) -> Tuple[Tensor, int]:
    """
    Summed Bernoulli negative log-likelihood of `targets` under `probs`.

    Probabilities are clamped to [1e-6, 1 - 1e-6]; the number of clamped entries
    is returned alongside the loss so callers can flag saturation.
    """
    p = probs.value
    saturated = int(np.count_nonzero((p < PROB_EPS) | (p > 1.0 - PROB_EPS)))
    clamped = clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    t = probs.tape.constant(targets)
    one_minus_t = probs.tape.constant(1.0 - np.asarray(targets))
    ll = t * log(clamped) + one_minus_t * log(1.0 - clamped)
    return -ll.sum(), saturated
