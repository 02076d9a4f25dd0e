from merlin.training.server import ParameterServer, adam_step
from merlin.training.trainer import Trainer, restore, train
from merlin.training.worker import Worker, run_worker

__all__ = ["ParameterServer", "Trainer", "Worker", "adam_step", "restore", "run_worker", "train"]
