"""Command-line entry points: ``mmh-setup``, ``mmh-train``, ``mmh-generate``.

Exit codes: 0 success, 1 input/config/validation error, 2 runtime failure.
``python -m mmh {setup,train,generate} ...`` works as well.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import InputError
from .metrics import METRICS
from .pipeline import ALL_MODALITIES, TASKS, generate, load_config, setup, train

logger = logging.getLogger("mmh")


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_dir(args) -> Path:
    """Artifacts directory from --setup_path, else <training.output_dir>/setup of --config_path."""
    if args.setup_path:
        return Path(args.setup_path)
    if not args.config_path:
        raise InputError("one of --setup_path or --config_path is required")
    return Path(load_config(args.config_path).training.output_dir) / "setup"


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """``--section.key value`` / ``--key=value`` pairs into an override mapping."""
    overrides = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) == 2:
            raise InputError(f"unexpected argument {token!r}")
        key, eq, value = token[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra) or extra[i + 1].startswith("--"):
                raise InputError(f"override --{key} needs a value")
            value = extra[i + 1]
            i += 1
        overrides[key.replace("-", "_")] = value
        i += 1
    return overrides


def setup_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmh-setup", description="Validate data, build the vocabulary and initialize a model.")
    p.add_argument("--modality", required=True, help=f"one of: {', '.join(ALL_MODALITIES)}")
    p.add_argument("--config_path", required=True)
    p.add_argument("--output_path", help="artifacts directory (default <training.output_dir>/setup)")
    return p


def train_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="mmh-train",
        description="Train from setup artifacts. Extra --training.KEY VALUE (or --KEY VALUE) "
                    "flags override the training section.",
    )
    p.add_argument("--task", required=True, help=f"one of: {', '.join(TASKS)}")
    p.add_argument("--config_path", help="config used at setup; locates the artifacts directory")
    p.add_argument("--setup_path", help="artifacts directory written by mmh-setup")
    p.add_argument("--output_path", help="run directory (default training.output_dir)")
    p.add_argument("--resume_from", help="checkpoint to resume from")
    return p


def generate_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmh-generate", description="Decode a split, write predictions and print a metric.")
    p.add_argument("--task", required=True, help=f"one of: {', '.join(TASKS)}")
    p.add_argument("--metric_name", required=True, help=f"one of: {', '.join(METRICS)}")
    p.add_argument("--config_path")
    p.add_argument("--setup_path")
    p.add_argument("--output_path", help="run directory holding checkpoints/ (default training.output_dir)")
    p.add_argument("--checkpoint", help="checkpoint file (default: best, else last)")
    p.add_argument("--split", default="test", choices=("validation", "test", "train"))
    p.add_argument("--predictions_path", help="prediction dump (default <run dir>/predictions_<split>.txt)")
    return p


def cmd_setup(argv=None) -> int:
    args = setup_parser().parse_args(argv)
    artifacts = setup(args.modality, load_config(args.config_path), args.output_path)
    print(artifacts.directory)
    return 0


def cmd_train(argv=None) -> int:
    args, extra = train_parser().parse_known_args(argv)
    overrides = parse_overrides(extra)
    result = train(_setup_dir(args), overrides, output_dir=args.output_path,
                   resume_from=args.resume_from, task=args.task)
    print(result.final_checkpoint)
    return 0


def cmd_generate(argv=None) -> int:
    args, extra = generate_parser().parse_known_args(argv)
    overrides = parse_overrides(extra)
    out = generate(_setup_dir(args), args.checkpoint, args.metric_name, args.split,
                   output_dir=args.output_path, predictions_path=args.predictions_path,
                   overrides=overrides, task=args.task)
    print(out.result.formatted())
    return 0


COMMANDS = {"setup": cmd_setup, "train": cmd_train, "generate": cmd_generate}


def run(command, argv=None) -> int:
    """Run ``command`` and map exceptions to exit codes."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return command(argv)
    except SystemExit as exc:
        # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else 1
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001
        logger.exception("runtime failure")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def setup_main() -> None:
    sys.exit(run(cmd_setup))


def train_main() -> None:
    sys.exit(run(cmd_train))


def generate_main() -> None:
    sys.exit(run(cmd_generate))


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] not in COMMANDS:
        print(f"usage: python -m mmh {{{','.join(COMMANDS)}}} [options]", file=sys.stderr)
        return 1
    return run(COMMANDS[argv[0]], argv[1:])
