from typing import Mapping

import numpy as np

from merlin.agents.base import Agent, LossBundle, Rollout, StepOutput, step_stats
from merlin.autodiff.tape import Tape, Tensor
from merlin.core.config import TrainConfig
from merlin.envs.memory_game import Observation
from merlin.models.baselines import RLLSTM, BaselineOutput, BaselineState, RLMem
from merlin.models.mbp import return_targets
from merlin.models.policy import gae, policy_loss, sample_action, value_loss


class BaselineAgent(Agent):
    """
    Shared driver for the end-to-end baselines: one parameter group trained
    by the GAE policy loss plus 1/2 (R - V)^2 on the value head.
    """

    def __init__(self, config: TrainConfig, net):
        super().__init__(config)
        self.net = net
        self.modules = {"policy": net}

    def initial_state(self) -> BaselineState:
        return self.net.zero_state(self.dtype)

    def forward(self, p: Mapping[str, Tensor], e: Tensor, state: BaselineState) -> BaselineOutput:
        raise NotImplementedError

    def step(self, tape: Tape, p: Mapping[str, Tensor], obs: Observation, state: BaselineState,
             rng: np.random.Generator, greedy: bool, index: int) -> StepOutput:
        image, prev_action, prev_reward = self.observe(tape, obs, index)
        e = self.net.encoder(p, image, prev_action, prev_reward)
        out = self.forward(p, e, state)
        action = sample_action(out.logits.value, rng, greedy)
        reads = {"policy": out.reads.weights.numpy()} if out.reads is not None else {}
        return StepOutput(action=action, logits=out.logits, value=out.value, state=out.state,
                          image=image, reads=reads)

    def window_losses(self, rollout: Rollout, v_boot: float) -> LossBundle:
        config = self.config
        rewards = rollout.rewards
        values = [s.value for s in rollout.steps]
        window = gae(rewards, [v.item() for v in values], v_boot, config.gamma, config.lam,
                     rollout.done, rollout.actions)
        pi_loss, entropy = policy_loss(window, [s.logits for s in rollout.steps], config.alpha_entropy)
        returns = return_targets(rewards, rollout.done, v_boot, config.gamma)
        v_loss = value_loss(values, returns)
        total = pi_loss + v_loss
        stats = step_stats(policy_entropy=entropy, policy_loss=pi_loss.item(), value_loss=v_loss.item())
        return LossBundle({"policy": {total: None}}, stats)


class RLLSTMAgent(BaselineAgent):
    name = "rl-lstm"

    def __init__(self, config: TrainConfig):
        super().__init__(config, RLLSTM(config))

    def forward(self, p, e, state):
        return self.net.rl_lstm_step(p, e, state)


class RLMemAgent(BaselineAgent):
    name = "rl-mem"

    def __init__(self, config: TrainConfig):
        super().__init__(config, RLMem(config))

    def forward(self, p, e, state):
        return self.net.rl_mem_step(p, e, state)
