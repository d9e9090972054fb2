"""
Command-line entry point for the time-reversal symmetry workbench

Subcommands:
    train   --config <file> --seed <n> [--tsda on|off] [--out <dir>]
    sweep   --config <file> --seeds <n> [--out <dir>] [--workers <n>]
    eval    --checkpoint <file> --env <name> --episodes <n>
    verify  --env velocity-chain [--breaking] [--halfwidth <n>]

Exit codes: 0 success, 1 validation error, 2 divergence.
"""

from dataclasses import replace
from typing import List, Optional
import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from src.core import RngStream
from src.envs import make_env
from src.harness import evaluate_policy, load_config, sweep_seeds, train_run
from src.learner import load_policy
from src.reversibility import format_report, verify_velocity_chain
from src.workbench_models import (
    DIVERGENCE_ERRORS, VALIDATION_ERRORS, ContractViolationError, RunStatus, WorkbenchConfig, WorkbenchError
)

load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv('TSDA_LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGED = 2


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="workbench", description="Time-reversal symmetry workbench")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train one seed")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, required=True)
    train.add_argument("--tsda", type=_on_off, default=None, help="Override tsda.enabled (on|off)")
    train.add_argument("--out", default=None, help="Output directory")

    sweep = commands.add_parser("sweep", help="Train seeds 0..n-1 with augmentation on and off")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--seeds", type=int, required=True)
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--workers", type=int, default=None)

    evaluate = commands.add_parser("eval", help="Evaluate a saved actor")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--env", required=True)
    evaluate.add_argument("--episodes", type=int, default=WorkbenchConfig.EVAL_EPISODES)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--stochastic", action="store_true")

    verify = commands.add_parser("verify", help="Run exact reversibility checks")
    verify.add_argument("--env", required=True, choices=["velocity-chain"])
    verify.add_argument("--breaking", action="store_true")
    verify.add_argument("--halfwidth", type=int, default=4)
    verify.add_argument("--tolerance", type=float, default=WorkbenchConfig.DEFAULT_TOLERANCE)
    return parser


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if args.tsda is not None:
        config = replace(config, tsda_enabled=args.tsda)
    if args.out:
        config = replace(config, output_dir=args.out)
    result = train_run(config, args.seed)
    print(result.to_json())
    return EXIT_OK if result.status == RunStatus.COMPLETED else EXIT_DIVERGED


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.seeds < 1:
        raise ContractViolationError(f"--seeds must be at least 1, got {args.seeds}")
    config = replace(config, seeds=tuple(range(args.seeds)))
    if args.out:
        config = replace(config, output_dir=args.out)
    report = sweep_seeds(config, workers=args.workers)
    with open(report.comparison_path, encoding='utf-8') as f:
        print(f.read(), end="")
    failed = sum(1 for runs in report.results.values() for r in runs if r.status == RunStatus.FAILED)
    return EXIT_OK if failed == 0 else EXIT_DIVERGED


def _cmd_eval(args) -> int:
    policy = load_policy(args.checkpoint)
    env = make_env(args.env)
    if policy.observation_dim != env.observation_dim or policy.action_dim != env.action_dim:
        raise ContractViolationError(
            f"Checkpoint expects observation/action dims ({policy.observation_dim}, {policy.action_dim}), "
            f"{env.name} provides ({env.observation_dim}, {env.action_dim})"
        )
    result = evaluate_policy(policy, env, args.episodes, RngStream(args.seed, WorkbenchConfig.EVAL_STREAM),
                             deterministic=not args.stochastic)
    print(f"EVAL {env.name} episodes={args.episodes} mean_return={result.mean_return:.6f} "
          f"std_return={result.std_return:.6f} diverged={result.diverged_episodes}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    for name, report in verify_velocity_chain(args.halfwidth, args.breaking, args.tolerance):
        print(format_report(name, report))
    return EXIT_OK


COMMANDS = {"train": _cmd_train, "sweep": _cmd_sweep, "eval": _cmd_eval, "verify": _cmd_verify}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as e:
        logger.error(f"❌ Invalid input: {e}")
        return EXIT_VALIDATION
    except DIVERGENCE_ERRORS as e:
        logger.error(f"❌ Diverged: {e}", exc_info=True)
        return EXIT_DIVERGED
    except WorkbenchError as e:
        logger.error(f"❌ {e.error_code}: {e}", exc_info=True)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
