import argparse
import logging
import os

from merlin.core.config import TrainConfig, lesion_names, load_config_file, preset, settings
from merlin.training.trainer import train

logger = logging.getLogger(__name__)

# flag name -> TrainConfig field
OVERRIDES = {
    "workers": "workers",
    "seed": "seed",
    "steps": "max_steps",
    "lesion": "lesion",
    "precision": "precision",
    "checkpoint_interval": "checkpoint_interval",
}


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train an agent on the memory game")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--agent", choices=["merlin", "rl-lstm", "rl-mem"], default=None)
    parser.add_argument("--task", choices=["memory", "memory-mini"], default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None, help="Environment step budget")
    parser.add_argument("--lesion", choices=lesion_names(), default=None)
    parser.add_argument("--precision", choices=["float32", "float64"], default=None)
    parser.add_argument("--checkpoint-interval", type=int, default=None)
    parser.add_argument("--sync", action="store_true", help="Serialise workers for reproducible runs")
    parser.add_argument("--output", help="Run directory (default: OUTPUT_ROOT/<agent>-<task>-seed<seed>)")
    parser.set_defaults(handler=run)


def build_config(args: argparse.Namespace) -> TrainConfig:
    overrides = {field: getattr(args, flag) for flag, field in OVERRIDES.items() if getattr(args, flag) is not None}
    if args.sync:
        overrides["sync"] = True
    if args.config:
        if args.agent:
            overrides["agent"] = args.agent
        if args.task:
            overrides["task"] = args.task
        return load_config_file(args.config, **overrides)
    overrides.setdefault("workers", settings.DEFAULT_WORKERS)
    return preset(args.agent or "merlin", args.task or "memory", **overrides)


def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    output = args.output or os.path.join(settings.OUTPUT_ROOT, f"{config.agent}-{config.task}-seed{config.seed}")
    result = train(config, output)
    print(f"{result.server.env_steps} env steps, {result.episodes} episodes, run directory {result.output_dir}")
    return 0
