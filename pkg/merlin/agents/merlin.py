from dataclasses import dataclass
from typing import Any, Mapping, Optional

import numpy as np

from merlin.agents.base import Agent, LossBundle, Rollout, StepOutput, one_hot, step_stats
from merlin.autodiff import ops
from merlin.autodiff.tape import Tape, Tensor
from merlin.core.config import TrainConfig
from merlin.envs.memory_game import Observation
from merlin.models.mbp import MBP, MBPStepRecord, mbp_window_loss, return_targets, sample_z
from merlin.models.memory import MemoryState, update_usage, write
from merlin.models.nets import LSTMState
from merlin.models.policy import Policy, PolicyState, gae, policy_loss, sample_action, value_loss


@dataclass
class MerlinState:
    mbp: LSTMState
    reads: Any
    policy: PolicyState
    memory: Optional[MemoryState]

    def on(self, tape: Tape) -> "MerlinState":
        memory = self.memory.on(tape) if self.memory is not None else None
        return MerlinState(self.mbp.on(tape), tape.constant(self.reads), self.policy.on(tape), memory)

    def numpy(self) -> "MerlinState":
        memory = self.memory.numpy() if self.memory is not None else None
        reads = self.reads.numpy() if isinstance(self.reads, Tensor) else np.array(self.reads)
        return MerlinState(self.mbp.numpy(), reads, self.policy.numpy(), memory)


class MerlinAgent(Agent):
    """
    Memory-based predictor plus a read-only policy sharing one external memory.

    Per step: prior from the previous recurrent output and reads, posterior
    from the observation embedding, sample z, policy reads the memory and
    acts, the predictor recurs on [z, a, reads], reads with its own heads,
    writes z and decodes.
    """

    name = "merlin"

    def __init__(self, config: TrainConfig):
        super().__init__(config)
        self.mbp = MBP(config)
        self.policy = Policy(config)
        self.modules = {"mbp": self.mbp, "policy": self.policy}

    def initial_state(self) -> MerlinState:
        memory = None
        if self.config.use_memory:
            memory = MemoryState.blank(self.config.mem_rows, 2 * self.config.z_size, self.dtype)
        return MerlinState(self.mbp.lstm.zero_state(self.dtype), self.mbp.zero_reads(self.dtype),
                           self.policy.zero_state(self.dtype), memory)

    def step(self, tape: Tape, p: Mapping[str, Tensor], obs: Observation, state: MerlinState,
             rng: np.random.Generator, greedy: bool, index: int) -> StepOutput:
        config = self.config
        image, prev_action, prev_reward = self.observe(tape, obs, index)
        h_prev = ops.concat(list(state.mbp.h))
        e = self.mbp.encoder(p, image, prev_action, prev_reward)
        prior = self.mbp.prior_step(p, h_prev, state.reads)
        posterior = self.mbp.posterior_step(p, e, h_prev, state.reads, prior)
        xi = rng.standard_normal(config.z_size)
        z = sample_z(posterior, tape.constant(xi))

        acted = self.policy.policy_step(p, z, state.policy, state.memory)
        action = sample_action(acted.logits.value, rng, greedy)
        action_onehot = one_hot(tape, action, config.num_actions, self.dtype)

        lstm_state, h = self.mbp.recur(p, state.mbp, z, action_onehot, state.reads)
        memory, reads = state.memory, state.reads
        read_dump = {}
        if memory is not None:
            result = self.mbp.read(p, h, memory)
            heads = [w for w in (result, acted.reads) if w is not None]
            memory = update_usage(memory, [r.weights for r in heads])
            memory = write(memory, z, config.retro_gamma)
            if result is not None:
                reads = result.flat
                read_dump["mbp"] = result.weights.numpy()
            if acted.reads is not None:
                read_dump["policy"] = acted.reads.weights.numpy()

        record = MBPStepRecord(
            e=e, prior=prior, posterior=posterior, z=z, xi=xi, h=h, reads=None,
            image=np.transpose(obs.image, (2, 0, 1)), prev_reward=float(obs.prev_reward),
            prev_action=obs.action_onehot(self.dtype),
        )
        self.mbp.decode(p, record, acted.logits, action_onehot)
        value = record.prediction.value if record.prediction is not None else acted.value
        return StepOutput(
            action=action,
            logits=acted.logits,
            value=value,
            state=MerlinState(lstm_state, reads, acted.state, memory),
            image=image,
            reads=read_dump,
            extras={"record": record, "policy_value": acted.value},
        )

    def window_losses(self, rollout: Rollout, v_boot: float) -> LossBundle:
        config = self.config
        rewards = rollout.rewards
        returns = return_targets(rewards, rollout.done, v_boot, config.gamma)
        records = [s.extras["record"] for s in rollout.steps]
        mbp_loss = mbp_window_loss(records, returns, config)

        values = [s.value.item() for s in rollout.steps]
        window = gae(rewards, values, v_boot, config.gamma, config.lam, rollout.done, rollout.actions)
        pi_loss, entropy = policy_loss(window, [s.logits for s in rollout.steps], config.alpha_entropy)
        if self.policy.value is not None:
            pi_loss = pi_loss + value_loss([s.extras["policy_value"] for s in rollout.steps], returns)

        mbp_seed = {mbp_loss.total: None}
        if not config.block_policy_gradient:
            mbp_seed[pi_loss] = None
        parts = mbp_loss.values()
        stats = step_stats(
            mbp_loss=mbp_loss.total.item(),
            kl=parts["kl"],
            image_loss=parts["image"],
            return_loss=parts["return"],
            policy_entropy=entropy,
            policy_loss=pi_loss.item(),
            saturated=float(mbp_loss.saturated),
        )
        return LossBundle({"mbp": mbp_seed, "policy": {pi_loss: None}}, stats)
