"""
Network building blocks shared by MERLIN and the baselines.

Every block is a Module: construction declares parameter specs, calling it
records the forward pass on the tape that holds the bound parameters. Images
travel as (channels, height, width); vectors have no batch dimension.
"""
from dataclasses import dataclass
from typing import Any, List, Sequence, Tuple

import numpy as np

from merlin.autodiff import ops
from merlin.autodiff.tape import Tape, Tensor
from merlin.core.config import TrainConfig
from merlin.core.errors import ShapeError
from merlin.models.base import Module, Params


def to_chw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(image, (2, 0, 1)))


def to_hwc(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(image, (1, 2, 0)))


class Linear(Module):
    def __init__(self, name: str, n_in: int, n_out: int):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out
        self.w = self.param("w", (n_in, n_out), fan_in=n_in)
        self.b = self.param("b", (n_out,))

    def __call__(self, p: Params, x: Tensor) -> Tensor:
        if x.shape != (self.n_in,):
            raise ShapeError("linear", f"{self.name} expects ({self.n_in},), got {x.shape}")
        return x @ p[self.w] + p[self.b]


class MLP(Module):
    def __init__(self, name: str, n_in: int, hidden: Sequence[int], n_out: int):
        super().__init__(name)
        sizes = [n_in, *hidden, n_out]
        self.layers = [self.add(Linear(f"{name}/l{i + 1}", a, b))
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def __call__(self, p: Params, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = ops.tanh(layer(p, x))
        return self.layers[-1](p, x)


@dataclass
class LSTMState:
    """Per-layer hidden and cell vectors; numpy arrays between windows, tensors on a tape."""

    h: Tuple[Any, ...]
    s: Tuple[Any, ...]

    @classmethod
    def zeros(cls, layers: int, width: int, dtype="float32") -> "LSTMState":
        return cls(tuple(np.zeros(width, dtype=dtype) for _ in range(layers)),
                   tuple(np.zeros(width, dtype=dtype) for _ in range(layers)))

    def on(self, tape: Tape) -> "LSTMState":
        return LSTMState(tuple(tape.constant(x) for x in self.h), tuple(tape.constant(x) for x in self.s))

    def numpy(self) -> "LSTMState":
        return LSTMState(tuple(_array(x) for x in self.h), tuple(_array(x) for x in self.s))


def _array(x) -> np.ndarray:
    return x.numpy() if isinstance(x, Tensor) else np.array(x)


class DeepLSTM(Module):
    """
    Stacked LSTM whose output is the concatenation of every layer's hidden vector.

    Layer l sees [x, h_prev^l, h^(l-1)]; gates are ordered input, forget, cell, output.
    """

    def __init__(self, name: str, n_in: int, width: int, layers: int = 1):
        super().__init__(name)
        self.n_in, self.width, self.layers = n_in, width, layers
        self.w, self.b = [], []
        for layer in range(layers):
            fan_in = n_in + width + (width if layer else 0)
            self.w.append(self.param(f"l{layer + 1}/w", (fan_in, 4 * width), fan_in=fan_in))
            self.b.append(self.param(f"l{layer + 1}/b", (4 * width,)))

    @property
    def output_size(self) -> int:
        return self.width * self.layers

    def zero_state(self, dtype="float32") -> LSTMState:
        return LSTMState.zeros(self.layers, self.width, dtype)

    def __call__(self, p: Params, state: LSTMState, x: Tensor) -> Tuple[LSTMState, Tensor]:
        if x.shape != (self.n_in,):
            raise ShapeError("lstm", f"{self.name} expects input ({self.n_in},), got {x.shape}")
        n = self.width
        hs, ss = [], []
        below = None
        for layer in range(self.layers):
            parts = [x, state.h[layer]] + ([below] if below is not None else [])
            pre = ops.concat(parts) @ p[self.w[layer]] + p[self.b[layer]]
            i = ops.sigmoid(pre[0:n])
            f = ops.sigmoid(pre[n:2 * n])
            g = ops.tanh(pre[2 * n:3 * n])
            o = ops.sigmoid(pre[3 * n:4 * n])
            s = f * state.s[layer] + i * g
            h = o * ops.tanh(s)
            hs.append(h)
            ss.append(s)
            below = h
        return LSTMState(tuple(hs), tuple(ss)), ops.concat(hs)


class ResBlock(Module):
    """conv3x3(bottleneck, stride) -> relu -> conv3x3(out) plus a strided 1x1 projection skip."""

    def __init__(self, name: str, c_in: int, bottleneck: int, c_out: int, stride: int):
        super().__init__(name)
        self.stride = stride
        self.w1 = self.param("conv1/w", (bottleneck, c_in, 3, 3), fan_in=c_in * 9)
        self.b1 = self.param("conv1/b", (bottleneck,))
        self.w2 = self.param("conv2/w", (c_out, bottleneck, 3, 3), fan_in=bottleneck * 9)
        self.b2 = self.param("conv2/b", (c_out,))
        self.ws = self.param("skip/w", (c_out, c_in, 1, 1), fan_in=c_in)

    def __call__(self, p: Params, x: Tensor) -> Tensor:
        y = ops.conv2d(x, p[self.w1], stride=self.stride, padding=1)
        y = ops.relu(y + _channel_bias(p[self.b1]))
        y = ops.conv2d(y, p[self.w2], stride=1, padding=1) + _channel_bias(p[self.b2])
        return y + ops.conv2d(x, p[self.ws], stride=self.stride)


class TransposedResBlock(Module):
    """Dual of ResBlock: every layer transposed, applied in reverse order."""

    def __init__(self, name: str, c_in: int, bottleneck: int, c_out: int, stride: int):
        # c_in/c_out name the dual encoder block; this block maps c_out back to c_in
        super().__init__(name)
        self.stride = stride
        self.w1 = self.param("deconv1/w", (c_out, bottleneck, 3, 3), fan_in=c_out * 9)
        self.b1 = self.param("deconv1/b", (bottleneck,))
        self.w2 = self.param("deconv2/w", (bottleneck, c_in, 3, 3), fan_in=bottleneck * 9)
        self.b2 = self.param("deconv2/b", (c_in,))
        self.ws = self.param("skip/w", (c_out, c_in, 1, 1), fan_in=c_out)

    def __call__(self, p: Params, x: Tensor) -> Tensor:
        size = x.shape[1:]
        up = (size[0] * self.stride, size[1] * self.stride)
        y = ops.conv_transpose2d(x, p[self.w1], out_size=size, stride=1, padding=1)
        y = ops.relu(y + _channel_bias(p[self.b1]))
        y = ops.conv_transpose2d(y, p[self.w2], out_size=up, stride=self.stride, padding=1)
        y = y + _channel_bias(p[self.b2])
        return y + ops.conv_transpose2d(x, p[self.ws], out_size=up, stride=self.stride)


def _channel_bias(b: Tensor) -> Tensor:
    return b.reshape((b.shape[0], 1, 1))


def block_layout(config: TrainConfig) -> List[Tuple[int, int, int]]:
    layout = []
    channels = config.image_channels
    for stride in config.resnet_strides:
        layout.append((channels, config.resnet_channels, stride))
        channels = config.resnet_channels
    return layout


def trunk_shape(config: TrainConfig) -> Tuple[int, int, int]:
    down = int(np.prod(config.resnet_strides))
    side = config.image_size // down
    return (config.resnet_channels, side, side)


class ImageEncoder(Module):
    def __init__(self, name: str, config: TrainConfig):
        super().__init__(name)
        self.input_shape = (config.image_channels, config.image_size, config.image_size)
        self.blocks = [self.add(ResBlock(f"{name}/block{i + 1}", c_in, config.resnet_bottleneck, c_out, s))
                       for i, (c_in, c_out, s) in enumerate(block_layout(config))]
        self.trunk_size = int(np.prod(trunk_shape(config)))
        self.out = self.add(Linear(f"{name}/out", self.trunk_size, config.embed_size))

    def __call__(self, p: Params, image: Tensor) -> Tensor:
        if image.shape != self.input_shape:
            raise ShapeError("encoder", f"expected image {self.input_shape}, got {image.shape}")
        x = image
        for block in self.blocks:
            x = block(p, x)
        return ops.tanh(self.out(p, x.reshape((self.trunk_size,))))


class ImageDecoder(Module):
    """Linear to the trunk size, transposed ResNet blocks, per-pixel sigmoid."""

    def __init__(self, name: str, config: TrainConfig):
        super().__init__(name)
        self.z_size = config.z_size
        self.trunk = trunk_shape(config)
        self.inp = self.add(Linear(f"{name}/in", config.z_size, int(np.prod(self.trunk))))
        layout = list(enumerate(block_layout(config)))[::-1]
        self.blocks = [self.add(TransposedResBlock(f"{name}/block{i + 1}", c_in, config.resnet_bottleneck, c_out, s))
                       for i, (c_in, c_out, s) in layout]

    def __call__(self, p: Params, z: Tensor) -> Tensor:
        if z.shape != (self.z_size,):
            raise ShapeError("decoder", f"expected z ({self.z_size},), got {z.shape}")
        x = self.inp(p, z).reshape(self.trunk)
        for block in self.blocks:
            x = block(p, x)
        return ops.sigmoid(x)


class Encoder(Module):
    """Observation embedding e = [image embedding, previous action one-hot, previous reward]."""

    def __init__(self, name: str, config: TrainConfig):
        super().__init__(name)
        self.image = self.add(ImageEncoder(f"{name}/image", config))
        self.num_actions = config.num_actions
        self.output_size = config.embed_size + config.num_actions + 1

    def __call__(self, p: Params, image: Tensor, prev_action: Tensor, prev_reward: Tensor) -> Tensor:
        if prev_action.shape != (self.num_actions,):
            raise ShapeError("encoder", f"expected action one-hot ({self.num_actions},), got {prev_action.shape}")
        return ops.concat([self.image(p, image), prev_action, prev_reward.reshape((1,))])


@dataclass
class ReturnPrediction:
    value: Tensor
    advantage: Tensor
    return_hat: Tensor


class ReturnDecoder(Module):
    """
    State-value and advantage heads.

    V reads [z, log pi] with log pi stopped; A reads [z, a]. The return
    prediction is sg(V) + A so the return loss through it never reaches V.
    """

    def __init__(self, name: str, config: TrainConfig):
        super().__init__(name)
        n = config.z_size + config.num_actions
        self.value = self.add(MLP(f"{name}/value", n, [config.value_hidden], 1))
        self.advantage = self.add(MLP(f"{name}/advantage", n, [config.advantage_hidden] * 2, 1))

    def __call__(self, p: Params, z: Tensor, policy_logits: Tensor, action: Tensor) -> ReturnPrediction:
        log_pi = ops.stop_gradient(ops.log_softmax(policy_logits))
        v = self.value(p, ops.concat([z, log_pi]))[0]
        a = self.advantage(p, ops.concat([z, action]))[0]
        return ReturnPrediction(v, a, ops.stop_gradient(v) + a)


class LinearDecoders(Module):
    def __init__(self, name: str, config: TrainConfig):
        super().__init__(name)
        self.reward = self.add(Linear(f"{name}/reward", config.z_size, 1))
        self.action = self.add(Linear(f"{name}/action", config.z_size, config.num_actions))

    def __call__(self, p: Params, z: Tensor) -> Tuple[Tensor, Tensor]:
        return self.reward(p, z)[0], ops.sigmoid(self.action(p, z))
