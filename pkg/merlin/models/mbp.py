"""
Memory-based predictor: prior, posterior, latent sampling, recurrence and the
variational loss over a truncation window.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from merlin.autodiff import ops
from merlin.autodiff.tape import Tensor
from merlin.core.config import TrainConfig
from merlin.models.base import Module, Params
from merlin.models.memory import MemoryInterface, MemoryState, ReadResult, content_read, make_keys
from merlin.models.nets import (
    MLP,
    DeepLSTM,
    Encoder,
    ImageDecoder,
    LinearDecoders,
    LSTMState,
    ReturnDecoder,
    ReturnPrediction,
)

# The KL term is divided by the pixel count together with the reconstruction terms.
KL_IN_PIXEL_SCALE = True


@dataclass
class DiagGaussian:
    mu: Tensor
    log_sigma: Tensor

    @property
    def sigma(self) -> Tensor:
        return ops.exp(self.log_sigma)


def sample_z(g: DiagGaussian, xi: Tensor) -> Tensor:
    return g.mu + ops.exp(g.log_sigma) * xi


def kl_diag_gauss(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians, summed over dimensions."""
    d = q.log_sigma - p.log_sigma
    mean_term = ops.square(q.mu - p.mu) * ops.exp(p.log_sigma * -2.0)
    return ((ops.exp(d * 2.0) + mean_term) * 0.5 - d - 0.5).sum()


@dataclass
class MBPStepRecord:
    """Everything one step of the predictor leaves on the tape, plus its targets."""

    e: Tensor
    prior: DiagGaussian
    posterior: DiagGaussian
    z: Tensor
    xi: np.ndarray
    h: Tensor
    reads: Optional[ReadResult]
    image: np.ndarray
    prev_reward: float
    prev_action: np.ndarray
    image_probs: Optional[Tensor] = None
    reward_pred: Optional[Tensor] = None
    action_probs: Optional[Tensor] = None
    prediction: Optional[ReturnPrediction] = None


@dataclass
class ReconLosses:
    image: Tensor
    ret: Tensor
    reward: Tensor
    action: Tensor
    total: Tensor
    saturated: int = 0


@dataclass
class WindowLoss:
    total: Tensor
    parts: Dict[str, Tensor]
    saturated: int = 0

    def values(self) -> Dict[str, float]:
        return {name: t.item() for name, t in self.parts.items()}


class MBP(Module):
    """
    Memory-based predictor.

    Owns the observation encoder, prior and posterior MLPs, the deep LSTM,
    the memory interface and all decoders. Lesion switches in the config
    drop the corresponding components.
    """

    def __init__(self, config: TrainConfig, name: str = "mbp"):
        super().__init__(name)
        self.config = config
        z = config.z_size
        self.z_size = z
        self.word = 2 * z
        self.heads = config.mbp_read_heads if config.use_memory else 0
        self.read_size = self.heads * self.word
        self.encoder = self.add(Encoder(f"{name}/encoder", config))
        self.lstm = self.add(DeepLSTM(f"{name}/lstm", z + config.num_actions + self.read_size,
                                      config.lstm_width, config.lstm_layers))
        h = self.lstm.output_size
        self.prior = None
        if config.learned_prior:
            self.prior = self.add(MLP(f"{name}/prior", h + self.read_size, [2 * z, 2 * z], 2 * z))
        self.posterior = self.add(MLP(f"{name}/posterior", self.encoder.output_size + h + self.read_size + 2 * z,
                                      [2 * z, 2 * z], 2 * z))
        self.interface = None
        if self.heads:
            self.interface = self.add(MemoryInterface(f"{name}/interface", h, self.heads, self.word))
        self.image_decoder = self.linear_decoders = None
        if config.observation_decoders:
            self.image_decoder = self.add(ImageDecoder(f"{name}/image_decoder", config))
            self.linear_decoders = self.add(LinearDecoders(f"{name}/decoders", config))
        self.return_decoder = None
        if config.return_decoder:
            self.return_decoder = self.add(ReturnDecoder(f"{name}/return_decoder", config))

    def zero_reads(self, dtype="float32") -> np.ndarray:
        return np.zeros(self.read_size, dtype=dtype)

    def prior_step(self, p: Params, h_prev: Tensor, m_prev: Tensor) -> DiagGaussian:
        z = self.z_size
        if self.prior is None:
            # fixed unit Gaussian
            return DiagGaussian(h_prev.tape.zeros(z), h_prev.tape.zeros(z))
        out = self.prior(p, ops.concat([h_prev, m_prev]))
        return DiagGaussian(out[0:z], out[z:2 * z])

    def posterior_step(self, p: Params, e: Tensor, h_prev: Tensor, m_prev: Tensor,
                       prior: DiagGaussian) -> DiagGaussian:
        """Posterior = f_post([e, h_prev, m_prev, mu_prior, log_sigma_prior]) + prior."""
        z = self.z_size
        n = ops.concat([e, h_prev, m_prev, prior.mu, prior.log_sigma])
        out = self.posterior(p, n)
        return DiagGaussian(out[0:z] + prior.mu, out[z:2 * z] + prior.log_sigma)

    def recur(self, p: Params, state: LSTMState, z: Tensor, action: Tensor,
              m_prev: Tensor) -> Tuple[LSTMState, Tensor]:
        return self.lstm(p, state, ops.concat([z, action, m_prev]))

    def read(self, p: Params, h: Tensor, mem: MemoryState) -> Optional[ReadResult]:
        if self.interface is None:
            return None
        keys, betas = make_keys(self.interface, p, h)
        return content_read(mem, keys, betas)

    def decode(self, p: Params, record: MBPStepRecord, logits: Tensor, action: Tensor) -> MBPStepRecord:
        if self.image_decoder is not None:
            record.image_probs = self.image_decoder(p, record.z)
            record.reward_pred, record.action_probs = self.linear_decoders(p, record.z)
        if self.return_decoder is not None:
            record.prediction = self.return_decoder(p, record.z, logits, action)
        return record


def return_targets(rewards: Sequence[float], terminal: bool, v_boot: float, gamma: float) -> np.ndarray:
    """
    Discounted returns over a window, bootstrapped from `v_boot` unless the
    window ends the episode.
    """
    out = np.zeros(len(rewards))
    running = 0.0 if terminal else float(v_boot)
    for t in range(len(rewards) - 1, -1, -1):
        running = float(rewards[t]) + gamma * running
        out[t] = running
    return out


def recon_losses(record: MBPStepRecord, target_return: float, config: TrainConfig) -> ReconLosses:
    """Weighted negative log-likelihood terms of one step (unscaled by the pixel count)."""
    tape = record.z.tape
    zero = tape.zeros()
    image = reward = action = ret = zero
    saturated = 0
    if record.image_probs is not None:
        image, sat_image = ops.bernoulli_nll(record.image_probs, record.image)
        action, sat_action = ops.bernoulli_nll(record.action_probs, record.prev_action)
        saturated = sat_image + sat_action
        reward = ops.square(record.reward_pred - record.prev_reward) * 0.5
    if record.prediction is not None:
        pred = record.prediction
        ret = (ops.square(pred.value - target_return) + ops.square(pred.return_hat - target_return)) * 0.5
    total = (image * config.alpha_image + ret * config.alpha_return
             + reward * config.alpha_reward + action * config.alpha_action)
    return ReconLosses(image, ret, reward, action, total, saturated)


def loss_scale(config: TrainConfig) -> float:
    return 1.0 / float(config.image_size * config.image_size * config.image_channels)


def mbp_window_loss(records: Sequence[MBPStepRecord], returns: Sequence[float], config: TrainConfig) -> WindowLoss:
    """
    Sum over the window of the weighted reconstruction terms and the KL,
    divided by the number of pixel-channels. `parts` adds up to `total`.
    """
    if not records:
        raise ValueError("empty window")
    tape = records[0].z.tape
    scale = loss_scale(config)
    weights = {"image": config.alpha_image, "return": config.alpha_return,
               "reward": config.alpha_reward, "action": config.alpha_action}
    sums: Dict[str, List[Tensor]] = {name: [] for name in [*weights, "kl"]}
    saturated = 0
    for record, target in zip(records, returns):
        losses = recon_losses(record, float(target), config)
        saturated += losses.saturated
        sums["image"].append(losses.image)
        sums["return"].append(losses.ret)
        sums["reward"].append(losses.reward)
        sums["action"].append(losses.action)
        if config.kl_cost:
            sums["kl"].append(kl_diag_gauss(record.posterior, record.prior))
    parts: Dict[str, Tensor] = {}
    for name, terms in sums.items():
        weight = weights.get(name, 1.0)
        factor = weight * (scale if name != "kl" or KL_IN_PIXEL_SCALE else 1.0)
        parts[name] = _total(tape, terms) * factor
    total = parts["image"] + parts["return"] + parts["reward"] + parts["action"] + parts["kl"]
    return WindowLoss(total, parts, saturated)


def _total(tape, terms: List[Tensor]) -> Tensor:
    if not terms:
        return tape.zeros()
    acc = terms[0]
    for term in terms[1:]:
        acc = acc + term
    return acc
