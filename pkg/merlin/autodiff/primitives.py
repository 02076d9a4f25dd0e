"""
Differentiable primitives.

Every primitive is a stateless object with a `forward` that returns the output
array together with whatever context its `backward` needs, and a `backward`
that maps the output gradient to one gradient (or None) per input. Primitives
register themselves in PRIMITIVES so the verification battery can grad-check
each of them from the inputs produced by `sample`.
"""
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from merlin.core.errors import ShapeError

COSINE_EPS = 1e-8

PRIMITIVES: Dict[str, "Primitive"] = {}

Grads = List[Optional[np.ndarray]]


def register(cls):
    instance = cls()
    PRIMITIVES[instance.name] = instance
    return instance


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Primitive:
    """Base class for tape primitives."""

    name = "primitive"
    arity = 1
    differentiable = True

    def check(self, shapes: Sequence[Tuple[int, ...]], **attrs) -> None:
        """Raise ShapeError if the input shapes are not acceptable."""

    def forward(self, inputs: Sequence[np.ndarray], **attrs) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, out: np.ndarray, inputs: Sequence[np.ndarray],
                 ctx: Any, **attrs) -> Grads:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> Tuple[List[np.ndarray], Dict[str, Any]]:
        """Random inputs and attributes at which the primitive is differentiable."""
        return [rng.normal(size=(3, 4))], {}

    def fail(self, message: str) -> None:
        raise ShapeError(self.name, message)


# Binary arithmetic

class _Broadcasting(Primitive):
    arity = 2

    def check(self, shapes, **attrs):
        try:
            np.broadcast_shapes(*shapes)
        except ValueError:
            self.fail(f"cannot broadcast shapes {shapes[0]} and {shapes[1]}")

    def sample(self, rng):
        return [rng.normal(size=(3, 4)), rng.normal(size=(4,))], {}


@register
class Add(_Broadcasting):
    name = "add"

    def forward(self, inputs, **attrs):
        return inputs[0] + inputs[1], None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [_unbroadcast(grad, inputs[0].shape), _unbroadcast(grad, inputs[1].shape)]


@register
class Sub(_Broadcasting):
    name = "sub"

    def forward(self, inputs, **attrs):
        return inputs[0] - inputs[1], None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [_unbroadcast(grad, inputs[0].shape), _unbroadcast(-grad, inputs[1].shape)]


@register
class Mul(_Broadcasting):
    name = "mul"

    def forward(self, inputs, **attrs):
        return inputs[0] * inputs[1], None

    def backward(self, grad, out, inputs, ctx, **attrs):
        a, b = inputs
        return [_unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)]


@register
class Scale(Primitive):
    name = "scale"

    def forward(self, inputs, factor=1.0, **attrs):
        return inputs[0] * factor, None

    def backward(self, grad, out, inputs, ctx, factor=1.0, **attrs):
        return [grad * factor]

    def sample(self, rng):
        return [rng.normal(size=(5,))], {"factor": -1.7}


@register
class MatMul(Primitive):
    name = "matmul"
    arity = 2

    def check(self, shapes, **attrs):
        a, b = shapes
        if len(a) not in (1, 2) or len(b) not in (1, 2):
            self.fail(f"expected 1-D or 2-D operands, got {a} and {b}")
        if a[-1] != b[0]:
            self.fail(f"inner dimensions differ: {a} @ {b}")

    def forward(self, inputs, **attrs):
        return inputs[0] @ inputs[1], None

    def backward(self, grad, out, inputs, ctx, **attrs):
        a, b = inputs
        a2 = a if a.ndim == 2 else a[None, :]
        b2 = b if b.ndim == 2 else b[:, None]
        g2 = grad.reshape(a2.shape[0], b2.shape[1])
        return [(g2 @ b2.T).reshape(a.shape), (a2.T @ g2).reshape(b.shape)]

    def sample(self, rng):
        return [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], {}


# Elementwise nonlinearities

@register
class Tanh(Primitive):
    name = "tanh"

    def forward(self, inputs, **attrs):
        return np.tanh(inputs[0]), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [grad * (1.0 - out * out)]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@register
class Sigmoid(Primitive):
    name = "sigmoid"

    def forward(self, inputs, **attrs):
        return _sigmoid(inputs[0]), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [grad * out * (1.0 - out)]


@register
class Relu(Primitive):
    name = "relu"

    def forward(self, inputs, **attrs):
        return np.maximum(inputs[0], 0.0), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [grad * (inputs[0] > 0)]

    def sample(self, rng):
        x = rng.uniform(0.1, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        return [x], {}


@register
class Softplus(Primitive):
    name = "softplus"

    def forward(self, inputs, **attrs):
        return np.logaddexp(0.0, inputs[0]), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [grad * _sigmoid(inputs[0])]


@register
class Exp(Primitive):
    name = "exp"

    def forward(self, inputs, **attrs):
        return np.exp(inputs[0]), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [grad * out]


@register
class Log(Primitive):
    name = "log"

    def forward(self, inputs, **attrs):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(inputs[0]), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [grad / inputs[0]]

    def sample(self, rng):
        return [rng.uniform(0.5, 2.0, size=(3, 4))], {}


@register
class Clip(Primitive):
    name = "clip"

    def forward(self, inputs, lo=0.0, hi=1.0, **attrs):
        return np.clip(inputs[0], lo, hi), None

    def backward(self, grad, out, inputs, ctx, lo=0.0, hi=1.0, **attrs):
        x = inputs[0]
        return [grad * ((x > lo) & (x < hi))]

    def sample(self, rng):
        x = rng.uniform(0.1, 0.4, size=(6,)) * rng.choice([-1.0, 1.0], size=(6,))
        x[:2] = [0.9, -0.8]
        return [x], {"lo": -0.5, "hi": 0.5}


# Softmax family

@register
class Softmax(Primitive):
    name = "softmax"

    def forward(self, inputs, **attrs):
        x = inputs[0]
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [out * (grad - (grad * out).sum(axis=-1, keepdims=True))]


@register
class LogSoftmax(Primitive):
    name = "log_softmax"

    def forward(self, inputs, **attrs):
        x = inputs[0]
        shifted = x - x.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True)), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [grad - np.exp(out) * grad.sum(axis=-1, keepdims=True)]


# Structural

@register
class Concat(Primitive):
    name = "concat"
    arity = -1

    def check(self, shapes, axis=-1, **attrs):
        ndim = len(shapes[0])
        ax = axis % ndim
        for shape in shapes:
            if len(shape) != ndim or any(s != shapes[0][i] for i, s in enumerate(shape) if i != ax):
                self.fail(f"incompatible shapes {list(shapes)} along axis {axis}")

    def forward(self, inputs, axis=-1, **attrs):
        return np.concatenate(inputs, axis=axis), None

    def backward(self, grad, out, inputs, ctx, axis=-1, **attrs):
        sizes = np.cumsum([x.shape[axis] for x in inputs])[:-1]
        return list(np.split(grad, sizes, axis=axis))

    def sample(self, rng):
        return [rng.normal(size=(2, 3)), rng.normal(size=(2, 1)), rng.normal(size=(2, 2))], {"axis": 1}


@register
class Slice(Primitive):
    name = "slice"

    def check(self, shapes, key=(), **attrs):
        try:
            np.empty(shapes[0], dtype=np.int8)[key]
        except IndexError as e:
            self.fail(str(e))

    def forward(self, inputs, key=(), **attrs):
        return inputs[0][key], None

    def backward(self, grad, out, inputs, ctx, key=(), **attrs):
        full = np.zeros_like(inputs[0])
        full[key] = grad
        return [full]

    def sample(self, rng):
        return [rng.normal(size=(4, 5))], {"key": (slice(1, 3), slice(None, None, 2))}


@register
class Reshape(Primitive):
    name = "reshape"

    def check(self, shapes, shape=(), **attrs):
        if int(np.prod(shapes[0])) != int(np.prod(shape)):
            self.fail(f"cannot reshape {shapes[0]} to {shape}")

    def forward(self, inputs, shape=(), **attrs):
        return inputs[0].reshape(shape), None

    def backward(self, grad, out, inputs, ctx, shape=(), **attrs):
        return [grad.reshape(inputs[0].shape)]

    def sample(self, rng):
        return [rng.normal(size=(2, 6))], {"shape": (3, 4)}


@register
class Sum(Primitive):
    name = "sum"

    def forward(self, inputs, axis=None, **attrs):
        return np.asarray(inputs[0].sum(axis=axis)), None

    def backward(self, grad, out, inputs, ctx, axis=None, **attrs):
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return [np.broadcast_to(grad, inputs[0].shape).copy()]


@register
class Mean(Primitive):
    name = "mean"

    def forward(self, inputs, axis=None, **attrs):
        return np.asarray(inputs[0].mean(axis=axis)), None

    def backward(self, grad, out, inputs, ctx, axis=None, **attrs):
        x = inputs[0]
        count = x.size if axis is None else x.shape[axis]
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return [np.broadcast_to(grad, x.shape) / count]

    def sample(self, rng):
        return [rng.normal(size=(3, 4))], {"axis": 0}


@register
class StopGradient(Primitive):
    name = "stop_gradient"
    differentiable = False

    def forward(self, inputs, **attrs):
        return inputs[0].copy(), None

    def backward(self, grad, out, inputs, ctx, **attrs):
        return [None]


# Memory addressing

@register
class CosineRows(Primitive):
    """Cosine similarity of each key (row of `keys` or a single vector) with each row of a matrix."""

    name = "cosine"
    arity = 2

    def check(self, shapes, **attrs):
        k, m = shapes
        if len(m) != 2 or len(k) not in (1, 2) or k[-1] != m[1]:
            self.fail(f"keys {k} do not match memory rows {m}")

    def forward(self, inputs, **attrs):
        keys, mem = inputs
        k2 = keys if keys.ndim == 2 else keys[None, :]
        k_norm = np.sqrt((k2 * k2).sum(axis=1))
        m_norm = np.sqrt((mem * mem).sum(axis=1))
        kn = np.maximum(k_norm, COSINE_EPS)
        mn = np.maximum(m_norm, COSINE_EPS)
        sim = (k2 @ mem.T) / (kn[:, None] * mn[None, :])
        ctx = (k2, k_norm > COSINE_EPS, m_norm > COSINE_EPS, kn, mn, sim)
        return sim.reshape(keys.shape[:-1] + (mem.shape[0],)), ctx

    def backward(self, grad, out, inputs, ctx, **attrs):
        keys, mem = inputs
        k2, k_live, m_live, kn, mn, sim = ctx
        g = grad.reshape(sim.shape)
        gs = g * sim
        g_keys = (g @ (mem / mn[:, None])) / kn[:, None]
        g_keys -= gs.sum(axis=1)[:, None] * k2 * (k_live / (kn * kn))[:, None]
        g_mem = (g.T @ (k2 / kn[:, None])) / mn[:, None]
        g_mem -= gs.sum(axis=0)[:, None] * mem * (m_live / (mn * mn))[:, None]
        return [g_keys.reshape(keys.shape), g_mem]

    def sample(self, rng):
        return [rng.normal(size=(2, 5)), rng.normal(size=(4, 5))], {}


# Convolutions over (channels, height, width) arrays

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * k * k, ho * wo)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int], k: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    c = shape[0]
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    return out


@register
class Conv2D(Primitive):
    name = "conv2d"
    arity = 2

    def check(self, shapes, stride=1, padding=0, **attrs):
        x, w = shapes
        if len(x) != 3 or len(w) != 4 or w[2] != w[3]:
            self.fail(f"expected (C,H,W) input and (O,C,k,k) kernel, got {x} and {w}")
        if x[0] != w[1]:
            self.fail(f"input has {x[0]} channels, kernel expects {w[1]}")
        if x[1] + 2 * padding < w[2] or x[2] + 2 * padding < w[3]:
            self.fail(f"kernel {w[2]}x{w[3]} larger than padded input {x}")

    def forward(self, inputs, stride=1, padding=0, **attrs):
        x, w = inputs
        o, c, k, _ = w.shape
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
        ho = (xp.shape[1] - k) // stride + 1
        wo = (xp.shape[2] - k) // stride + 1
        cols = _im2col(xp, k, stride, ho, wo)
        out = (w.reshape(o, -1) @ cols).reshape(o, ho, wo)
        return out, (cols, xp.shape)

    def backward(self, grad, out, inputs, ctx, stride=1, padding=0, **attrs):
        x, w = inputs
        cols, padded_shape = ctx
        o, c, k, _ = w.shape
        ho, wo = grad.shape[1:]
        g2 = grad.reshape(o, -1)
        g_w = (g2 @ cols.T).reshape(w.shape)
        g_xp = _col2im(w.reshape(o, -1).T @ g2, padded_shape, k, stride, ho, wo)
        if padding:
            g_xp = g_xp[:, padding:-padding, padding:-padding]
        return [g_xp, g_w]

    def sample(self, rng):
        return [rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3))], {"stride": 2, "padding": 1}


@register
class ConvTranspose2D(Primitive):
    """Adjoint of Conv2D; `out_size` fixes the spatial output size."""

    name = "conv_transpose2d"
    arity = 2

    def check(self, shapes, stride=1, padding=0, out_size=(1, 1), **attrs):
        x, w = shapes
        if len(x) != 3 or len(w) != 4 or w[2] != w[3]:
            self.fail(f"expected (C,H,W) input and (Cin,Cout,k,k) kernel, got {x} and {w}")
        if x[0] != w[0]:
            self.fail(f"input has {x[0]} channels, kernel expects {w[0]}")
        for size, n in zip(out_size, x[1:]):
            if (size + 2 * padding - w[2]) // stride + 1 != n:
                self.fail(f"output size {out_size} inconsistent with input {x} at stride {stride}")

    def _full_shape(self, x_shape, w_shape, stride, padding, out_size):
        k = w_shape[2]
        hf = max((x_shape[1] - 1) * stride + k, padding + out_size[0])
        wf = max((x_shape[2] - 1) * stride + k, padding + out_size[1])
        return (w_shape[1], hf, wf)

    def forward(self, inputs, stride=1, padding=0, out_size=(1, 1), **attrs):
        x, w = inputs
        ci, co, k, _ = w.shape
        h, wd = x.shape[1:]
        cols = w.reshape(ci, -1).T @ x.reshape(ci, -1)
        full = _col2im(cols, self._full_shape(x.shape, w.shape, stride, padding, out_size),
                       k, stride, h, wd)
        return full[:, padding:padding + out_size[0], padding:padding + out_size[1]].copy(), None

    def backward(self, grad, out, inputs, ctx, stride=1, padding=0, out_size=(1, 1), **attrs):
        x, w = inputs
        ci, co, k, _ = w.shape
        h, wd = x.shape[1:]
        g_full = np.zeros(self._full_shape(x.shape, w.shape, stride, padding, out_size), dtype=grad.dtype)
        g_full[:, padding:padding + out_size[0], padding:padding + out_size[1]] = grad
        g_cols = _im2col(g_full, k, stride, h, wd)
        g_x = (w.reshape(ci, -1) @ g_cols).reshape(x.shape)
        g_w = (x.reshape(ci, -1) @ g_cols.T).reshape(w.shape)
        return [g_x, g_w]

    def sample(self, rng):
        attrs = {"stride": 2, "padding": 1, "out_size": (6, 6)}
        return [rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 2, 3, 3))], attrs
