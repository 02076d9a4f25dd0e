"""
Evaluation of trained agents: plays episodes without learning and exports
per-episode scores, read-weight traces and value saliency maps.
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from merlin.agents.base import Agent, GroupParams, flatten
from merlin.autodiff.tape import Tape
from merlin.core.config import TrainConfig
from merlin.envs.memory_game import MemoryGame
from merlin.envs.oracle import mean_stderr, reference_scores
from merlin.schemas.run import EpisodeResult, EvalSummary, ReferenceSummary
from merlin.training.trainer import restore
from merlin.training.worker import worker_seed

logger = logging.getLogger(__name__)


@dataclass
class EpisodeTrace:
    score: float
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    reads: List[Dict[str, Any]] = field(default_factory=list)
    saliency: List[np.ndarray] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.actions)


def play_episode(agent: Agent, params: GroupParams, env: MemoryGame, rng: np.random.Generator,
                 seed: int, greedy: bool = True, saliency: bool = False) -> EpisodeTrace:
    """One episode, one tape per step; the recurrent state is carried as arrays."""
    flat = flatten(params)
    obs = env.reset(seed)
    state = agent.initial_state()
    trace = EpisodeTrace(score=0.0)
    done = False
    while not done:
        tape = Tape(agent.dtype)
        p = tape.bind_params(flat)
        out = agent.step(tape, p, obs, state.on(tape), rng, greedy, 0)
        if saliency:
            trace.saliency.append(agent.saliency(tape, out))
        obs, reward, done = env.step(out.action)
        trace.score += reward
        trace.actions.append(out.action)
        trace.rewards.append(reward)
        trace.reads.append({name: w.tolist() for name, w in out.reads.items()})
        state = out.state.numpy()
    return trace


def evaluate(agent: Agent, params: GroupParams, config: TrainConfig, episodes: int, seed: int = 0,
             greedy: bool = True, saliency: bool = False, pool_seed: Optional[int] = None) -> List[EpisodeTrace]:
    # the glyph pool follows `pool_seed` when given, else the evaluation seed
    env = MemoryGame(config, seed if pool_seed is None else pool_seed)
    rng = np.random.default_rng(seed)
    return [play_episode(agent, params, env, rng, seed + i, greedy, saliency) for i in range(episodes)]


def write_episodes_csv(path: str, results: List[EpisodeResult]) -> None:
    columns = list(EpisodeResult.model_fields)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in results:
            writer.writerow([getattr(row, c) for c in columns])


def write_reads(path: str, traces: List[EpisodeTrace]) -> None:
    with open(path, "w") as f:
        for episode, trace in enumerate(traces):
            for step, reads in enumerate(trace.reads):
                f.write(json.dumps({
                    "episode": episode,
                    "step": step,
                    "action": trace.actions[step],
                    "reward": trace.rewards[step],
                    "reads": reads,
                }) + "\n")


def write_saliency(directory: str, traces: List[EpisodeTrace]) -> None:
    os.makedirs(directory, exist_ok=True)
    for episode, trace in enumerate(traces):
        np.save(os.path.join(directory, f"episode_{episode:04d}.npy"), np.stack(trace.saliency))


def evaluate_checkpoint(checkpoint: str, episodes: int = 100, seed: int = 0, greedy: bool = False,
                        episodes_csv: Optional[str] = None, dump_reads: Optional[str] = None,
                        dump_saliency: Optional[str] = None, reference_episodes: int = 0,
                        train_pool: bool = False) -> EvalSummary:
    """
    Load a checkpoint, play `episodes` evaluation episodes and summarise them.

    Args:
        checkpoint: Path to a checkpoint written by training
        episodes: Number of evaluation episodes
        seed: Seeds the boards and the action sampling
        greedy: Take the most probable action instead of sampling
        episodes_csv: Optional per-episode score CSV
        dump_reads: Optional JSON-lines file of per-step read weights
        dump_saliency: Optional directory for per-episode saliency arrays
        reference_episodes: When positive, also simulate oracle and random play
        train_pool: Deal from the first worker's glyph pool instead of the eval seed's pool

    Returns:
        EvalSummary with the mean score, its standard error and the reference scores
    """
    config, agent, params = restore(checkpoint)
    pool_seed = worker_seed(config, 0) if train_pool else None
    traces = evaluate(agent, params, config, episodes, seed, greedy, saliency=dump_saliency is not None,
                      pool_seed=pool_seed)
    results = [EpisodeResult(episode=i, seed=seed + i, score=t.score, steps=t.steps) for i, t in enumerate(traces)]
    if episodes_csv:
        write_episodes_csv(episodes_csv, results)
    if dump_reads:
        write_reads(dump_reads, traces)
    if dump_saliency:
        write_saliency(dump_saliency, traces)

    mean, stderr = mean_stderr([r.score for r in results])
    reference = None
    if reference_episodes > 0:
        reference = ReferenceSummary(**vars(reference_scores(config, reference_episodes, seed)))
    logger.info(f"Evaluated {config.agent} over {episodes} episodes: {mean:.3f} +/- {stderr:.3f}")
    return EvalSummary(checkpoint=checkpoint, agent=config.agent, episodes=episodes, greedy=greedy,
                       mean_score=mean, stderr=stderr, reference=reference)
