import argparse
import logging

from merlin.training.evaluation import evaluate_checkpoint

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    parser.add_argument("checkpoint")
    parser.add_argument("--episodes", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--greedy", action="store_true", help="Take the most probable action instead of sampling")
    parser.add_argument("--episodes-csv", help="Write per-episode scores to this CSV")
    parser.add_argument("--dump-reads", help="Write per-step read weights to this JSON-lines file")
    parser.add_argument("--dump-saliency", help="Write per-episode value saliency arrays to this directory")
    parser.add_argument("--train-pool", action="store_true",
                        help="Deal glyphs from the first training worker's pool instead of the --seed pool")
    parser.add_argument("--reference-episodes", type=int, default=1000,
                        help="Episodes of oracle and random play to report alongside (0 disables)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    summary = evaluate_checkpoint(
        args.checkpoint,
        episodes=args.episodes,
        seed=args.seed,
        greedy=args.greedy,
        episodes_csv=args.episodes_csv,
        dump_reads=args.dump_reads,
        dump_saliency=args.dump_saliency,
        reference_episodes=args.reference_episodes,
        train_pool=args.train_pool,
    )
    print(summary.model_dump_json(indent=2))
    return 0
