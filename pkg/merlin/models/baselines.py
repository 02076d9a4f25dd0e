"""End-to-end policy-gradient baselines sharing MERLIN's observation encoder."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from merlin.autodiff import ops
from merlin.autodiff.tape import Tape, Tensor
from merlin.core.config import TrainConfig
from merlin.models.base import Module, Params
from merlin.models.memory import MemoryInterface, MemoryState, ReadResult, content_read, make_keys, update_usage, write
from merlin.models.nets import DeepLSTM, Encoder, Linear, LSTMState

# RL-MEM stores its write vectors without the retroactive half.
NO_RETROACTIVE = 1.0


@dataclass
class BaselineState:
    lstm: LSTMState
    memory: Optional[MemoryState] = None
    reads: object = None

    def on(self, tape: Tape) -> "BaselineState":
        memory = self.memory.on(tape) if self.memory is not None else None
        reads = tape.constant(self.reads) if self.reads is not None else None
        return BaselineState(self.lstm.on(tape), memory, reads)

    def numpy(self) -> "BaselineState":
        memory = self.memory.numpy() if self.memory is not None else None
        reads = self.reads
        if isinstance(reads, Tensor):
            reads = reads.numpy()
        return BaselineState(self.lstm.numpy(), memory, reads)


@dataclass
class BaselineOutput:
    logits: Tensor
    value: Tensor
    state: BaselineState
    reads: Optional[ReadResult] = None
    write_vector: Optional[Tensor] = None


class RLLSTM(Module):
    """Deep LSTM over the embedding with linear policy and value heads."""

    def __init__(self, config: TrainConfig, name: str = "rl"):
        super().__init__(name)
        self.encoder = self.add(Encoder(f"{name}/encoder", config))
        self.lstm = self.add(DeepLSTM(f"{name}/lstm", self.encoder.output_size, config.lstm_width, config.lstm_layers))
        h = self.lstm.output_size
        self.logits = self.add(Linear(f"{name}/logits", h, config.num_actions))
        self.value = self.add(Linear(f"{name}/value", h, 1))

    def zero_state(self, dtype="float32") -> BaselineState:
        return BaselineState(self.lstm.zero_state(dtype))

    def rl_lstm_step(self, p: Params, e: Tensor, state: BaselineState) -> BaselineOutput:
        lstm_state, h = self.lstm(p, state.lstm, e)
        return BaselineOutput(self.logits(p, h), self.value(p, h)[0], BaselineState(lstm_state))


class RLMem(Module):
    """
    Deep LSTM over [e, previous reads] that writes a vector d_t = W h_t to an
    external memory each step and reads it back through content addressing.
    """

    def __init__(self, config: TrainConfig, name: str = "rl"):
        super().__init__(name)
        self.config = config
        z = config.z_size
        self.word = 2 * z
        self.heads = config.rl_read_heads
        self.read_size = self.heads * self.word
        self.encoder = self.add(Encoder(f"{name}/encoder", config))
        self.lstm = self.add(DeepLSTM(f"{name}/lstm", self.encoder.output_size + self.read_size,
                                      config.lstm_width, config.lstm_layers))
        h = self.lstm.output_size
        self.interface = self.add(MemoryInterface(f"{name}/interface", h, self.heads, self.word))
        self.writer = self.add(Linear(f"{name}/write", h, z))
        self.logits = self.add(Linear(f"{name}/logits", h + self.read_size, config.num_actions))
        self.value = self.add(Linear(f"{name}/value", h + self.read_size, 1))

    def zero_state(self, dtype="float32") -> BaselineState:
        memory = MemoryState.blank(self.config.mem_rows, self.word, dtype)
        return BaselineState(self.lstm.zero_state(dtype), memory, np.zeros(self.read_size, dtype=dtype))

    def rl_mem_step(self, p: Params, e: Tensor, state: BaselineState) -> BaselineOutput:
        lstm_state, h = self.lstm(p, state.lstm, ops.concat([e, state.reads]))
        keys, betas = make_keys(self.interface, p, h)
        reads = content_read(state.memory, keys, betas)
        d = self.writer(p, h)
        memory = update_usage(state.memory, [reads.weights])
        memory = write(memory, d, NO_RETROACTIVE)
        features = ops.concat([h, reads.flat])
        return BaselineOutput(
            logits=self.logits(p, features),
            value=self.value(p, features)[0],
            state=BaselineState(lstm_state, memory, reads.flat),
            reads=reads,
            write_vector=d,
        )
