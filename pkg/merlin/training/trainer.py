"""
Training orchestration: parameter server, workers, metrics, checkpoints.

With `sync` the workers run round-robin on the calling thread and the wall
clock is not recorded, so two runs with the same seed produce identical
metrics. Otherwise each worker runs on its own thread and applies its
gradients without waiting for the others.
"""
import hashlib
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Tuple

import numpy as np

import merlin
from merlin.agents import Agent, make_agent
from merlin.core.config import TrainConfig
from merlin.core.errors import CheckpointError
from merlin.db import checkpoint as checkpoint_store
from merlin.db.metrics import MetricsWriter
from merlin.schemas.checkpoint import CheckpointMeta
from merlin.schemas.run import RunManifest
from merlin.training.server import ParameterServer
from merlin.training.worker import Worker, run_worker, wall_clock

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.json"
FINAL_CHECKPOINT = "final.ckpt"


def build_id() -> str:
    """SHA-1 over the package sources, stable across machines for the same tree."""
    root = os.path.dirname(merlin.__file__)
    digest = hashlib.sha1()
    for folder, dirs, files in os.walk(root):
        dirs.sort()
        for filename in sorted(files):
            if filename.endswith(".py"):
                path = os.path.join(folder, filename)
                digest.update(os.path.relpath(path, root).encode("utf-8"))
                with open(path, "rb") as f:
                    digest.update(f.read())
    return digest.hexdigest()


@dataclass
class TrainResult:
    server: ParameterServer
    agent: Agent
    output_dir: str
    episodes: int = 0
    discarded: int = 0
    checkpoints: List[str] = field(default_factory=list)


class Trainer:
    def __init__(self, config: TrainConfig, output_dir: str):
        self.config = config
        self.output_dir = output_dir
        self.agent = make_agent(config)
        rng = np.random.default_rng(config.seed)
        self.server = ParameterServer.from_config(self.agent.init_params(rng), config)
        self.checkpoints: List[str] = []
        self._next_checkpoint = config.checkpoint_interval
        self._checkpoint_lock = threading.Lock()

    def write_manifest(self) -> RunManifest:
        os.makedirs(self.output_dir, exist_ok=True)
        manifest = RunManifest(
            config=self.config.model_dump(mode="json"),
            seed=self.config.seed,
            build_id=build_id(),
            started_at=datetime.now(timezone.utc),
            output_dir=os.path.abspath(self.output_dir),
        )
        with open(os.path.join(self.output_dir, MANIFEST_FILE), "w") as f:
            f.write(manifest.model_dump_json(indent=2))
        with open(os.path.join(self.output_dir, CONFIG_FILE), "w") as f:
            f.write(self.config.model_dump_json(indent=2))
        return manifest

    def save_checkpoint(self, filename: str) -> str:
        meta = CheckpointMeta(
            agent=self.config.agent,
            precision=self.config.precision,
            config=self.config.model_dump(mode="json"),
            env_steps=self.server.env_steps,
            groups=self.server.groups(),
            group_steps=dict(self.server.steps),
        )
        path = os.path.join(self.output_dir, filename)
        checkpoint_store.save(path, meta, self.server.state_arrays())
        self.checkpoints.append(path)
        return path

    def maybe_checkpoint(self) -> None:
        with self._checkpoint_lock:
            if self.server.env_steps < self._next_checkpoint:
                return
            steps = self.server.env_steps
            while self._next_checkpoint <= steps:
                self._next_checkpoint += self.config.checkpoint_interval
            self.save_checkpoint(f"step_{steps:012d}.ckpt")

    def run(self) -> TrainResult:
        config = self.config
        self.write_manifest()
        clock = None if config.sync else wall_clock()
        metrics_path = os.path.join(self.output_dir, METRICS_FILE)
        logger.info(f"Training {config.agent} on {config.task} with {config.workers} workers "
                    f"({'sync' if config.sync else 'async'}) for {config.max_steps} env steps")
        with MetricsWriter(metrics_path) as metrics:
            workers = [Worker(i, config, self.agent, self.server, metrics.put, clock) for i in range(config.workers)]
            if config.sync:
                self._run_sync(workers)
            else:
                self._run_threads(workers)
        self.save_checkpoint(FINAL_CHECKPOINT)
        result = TrainResult(
            server=self.server,
            agent=self.agent,
            output_dir=self.output_dir,
            episodes=sum(w.episodes for w in workers),
            discarded=sum(w.discarded for w in workers),
            checkpoints=list(self.checkpoints),
        )
        logger.info(f"Finished after {self.server.env_steps} env steps and {result.episodes} episodes "
                    f"({result.discarded} windows discarded)")
        return result

    def _run_sync(self, workers: List[Worker]) -> None:
        while self.server.env_steps < self.config.max_steps:
            for worker in workers:
                worker.run_window()
                self.maybe_checkpoint()
                if self.server.env_steps >= self.config.max_steps:
                    break

    def _run_threads(self, workers: List[Worker]) -> None:
        stop = threading.Event()
        errors: List[BaseException] = []

        def body(worker: Worker) -> None:
            try:
                run_worker(worker, self.config.max_steps, stop, self.maybe_checkpoint)
            except BaseException as e:
                errors.append(e)
                stop.set()

        threads = [threading.Thread(target=body, args=(w,), name=f"worker-{w.index}") for w in workers]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        if errors:
            raise errors[0]


def train(config: TrainConfig, output_dir: str) -> TrainResult:
    return Trainer(config, output_dir).run()


def restore(path: str) -> Tuple[TrainConfig, Agent, Dict[str, Dict[str, np.ndarray]]]:
    """Rebuild the agent and its parameters from a checkpoint file."""
    ckpt = checkpoint_store.load(path)
    config = TrainConfig.model_validate(ckpt.meta.config)
    agent = make_agent(config)
    expected = agent.groups()
    if {g: sorted(n) for g, n in expected.items()} != {g: sorted(n) for g, n in ckpt.meta.groups.items()}:
        raise CheckpointError(f"Checkpoint parameters do not match a {config.agent} agent")
    return config, agent, ckpt.params()

