"""Read-only policy network, action sampling, GAE and the policy-gradient loss."""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from merlin.autodiff import ops
from merlin.autodiff.tape import Tape, Tensor
from merlin.core.config import TrainConfig
from merlin.core.errors import ShapeError
from merlin.models.base import Module, Params
from merlin.models.memory import MemoryInterface, MemoryState, ReadResult, content_read, make_keys
from merlin.models.nets import MLP, DeepLSTM, Linear, LSTMState


@dataclass
class PolicyState:
    lstm: LSTMState
    reads: object

    def on(self, tape: Tape) -> "PolicyState":
        return PolicyState(self.lstm.on(tape), tape.constant(self.reads))

    def numpy(self) -> "PolicyState":
        reads = self.reads.numpy() if isinstance(self.reads, Tensor) else np.array(self.reads)
        return PolicyState(self.lstm.numpy(), reads)


@dataclass
class PolicyOutput:
    logits: Tensor
    state: PolicyState
    h: Tensor
    reads: Optional[ReadResult] = None
    value: Optional[Tensor] = None


@dataclass
class AdvantageWindow:
    rewards: np.ndarray
    values: np.ndarray
    deltas: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    actions: np.ndarray


class Policy(Module):
    """
    Deep LSTM over [z, previous reads] with one content-read head on the
    shared memory and a tanh MLP over [z, h, reads] producing action logits.

    z enters through a stop-gradient unless `block_policy_gradient` is off.
    Without a return decoder the policy owns a linear value head on h.
    """

    def __init__(self, config: TrainConfig, name: str = "policy"):
        super().__init__(name)
        z = config.z_size
        self.block_gradient = config.block_policy_gradient
        self.heads = config.policy_read_heads if config.use_memory else 0
        self.read_size = self.heads * 2 * z
        self.lstm = self.add(DeepLSTM(f"{name}/lstm", z + self.read_size, config.lstm_width, config.lstm_layers))
        h = self.lstm.output_size
        self.interface = None
        if self.heads:
            self.interface = self.add(MemoryInterface(f"{name}/interface", h, self.heads, 2 * z))
        self.mlp = self.add(MLP(f"{name}/mlp", z + h + self.read_size, [config.policy_hidden], config.num_actions))
        self.value = None
        if not config.return_decoder:
            self.value = self.add(Linear(f"{name}/value", h, 1))

    def zero_state(self, dtype="float32") -> PolicyState:
        return PolicyState(self.lstm.zero_state(dtype), np.zeros(self.read_size, dtype=dtype))

    def policy_step(self, p: Params, z: Tensor, state: PolicyState, mem: Optional[MemoryState]) -> PolicyOutput:
        # reads see the memory before this step's write
        if self.block_gradient:
            z = ops.stop_gradient(z)
            mem = mem.stopped() if mem is not None else None
        lstm_state, h = self.lstm(p, state.lstm, ops.concat([z, state.reads]))
        reads = None
        m = state.reads
        if self.interface is not None and mem is not None:
            keys, betas = make_keys(self.interface, p, h)
            reads = content_read(mem, keys, betas)
            m = reads.flat
        logits = self.mlp(p, ops.concat([z, h, m]))
        value = self.value(p, h)[0] if self.value is not None else None
        return PolicyOutput(logits, PolicyState(lstm_state, m), h, reads, value)


def softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def sample_action(logits: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> int:
    if greedy:
        return int(np.argmax(logits))
    probs = softmax(logits)
    return int(rng.choice(probs.shape[0], p=probs))


def gae(rewards: Sequence[float], values: Sequence[float], v_next: float, gamma: float, lam: float,
        terminal: bool, actions: Optional[Sequence[int]] = None) -> AdvantageWindow:
    """
    Generalised advantage estimation over one window.

    delta_k = r_k + gamma_k V_{k+1} - V_k with gamma_k = 0 at termination and
    A_k = delta_k + gamma lambda A_{k+1}, A beyond the window being 0.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape:
        raise ShapeError("gae", f"{r.shape[0]} rewards but {v.shape[0]} values")
    n = r.shape[0]
    following = np.append(v[1:], 0.0 if terminal else float(v_next))
    discounts = np.full(n, gamma)
    if terminal and n:
        discounts[-1] = 0.0
    deltas = r + discounts * following - v
    advantages = np.zeros(n)
    running = 0.0
    for k in range(n - 1, -1, -1):
        running = deltas[k] + gamma * lam * running
        advantages[k] = running
    returns = np.zeros(n)
    running = 0.0 if terminal else float(v_next)
    for k in range(n - 1, -1, -1):
        running = r[k] + gamma * running
        returns[k] = running
    acts = np.asarray(actions if actions is not None else np.zeros(n), dtype=np.int64)
    return AdvantageWindow(r, v, deltas, advantages, returns, acts)


def policy_loss(window: AdvantageWindow, logits: Sequence[Tensor], alpha_entropy: float) -> Tuple[Tensor, float]:
    """
    -sum_t A_t log pi_t(a_t) - alpha_entropy * sum_t H(pi_t), advantages held constant.

    Returns the loss and the mean per-step entropy.
    """
    if len(logits) != window.advantages.shape[0]:
        raise ShapeError("policy_loss", f"{len(logits)} logits for {window.advantages.shape[0]} steps")
    tape = logits[0].tape
    loss = tape.zeros()
    entropy_total = 0.0
    for advantage, action, step_logits in zip(window.advantages, window.actions, logits):
        log_pi = ops.log_softmax(step_logits)
        entropy = -(ops.softmax(step_logits) * log_pi).sum()
        entropy_total += entropy.item()
        loss = loss - log_pi[int(action)] * float(advantage) - entropy * alpha_entropy
    return loss, entropy_total / len(logits)


def value_loss(values: Sequence[Tensor], returns: Sequence[float]) -> Tensor:
    tape = values[0].tape
    loss = tape.zeros()
    for v, target in zip(values, returns):
        loss = loss + ops.square(v - float(target)) * 0.5
    return loss
