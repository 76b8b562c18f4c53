"""
fragkit command line.

    python cli.py synth --kind gradient --count 200 --out data/gradient
    python cli.py train --data data/gradient --fusion kron --epochs 100 --out kron.ckpt
    python cli.py solve --ckpt kron.ckpt --image data/gradient/gradient_00000.ppm --oracle
    python cli.py solve --ckpt kron.ckpt --data data/gradient --count 50 --report puzzles.csv

Values come from the command's defaults, then the `--config` file (key=value lines),
then explicit flags. Exit codes: 0 success, 1 contract violation or usage error,
2 I/O or file format error.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import dotenv_values
from pydantic import ValidationError

from commands import COMMANDS, build_command, run_command
from errors import FragkitError, UsageError
from log_utils import get_logger, log_run_to_json

logger = get_logger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _subcommand(subparsers, name: str) -> argparse.ArgumentParser:
    sub = subparsers.add_parser(name, help=COMMANDS[name].__doc__, description=COMMANDS[name].__doc__,
                                argument_default=argparse.SUPPRESS)
    sub.add_argument("--seed", type=int, help="Random seed (default 0)")
    sub.add_argument("--config", help="key=value file with defaults for this command")
    return sub


def _geometry_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--frame-side", dest="frame_side", type=int, help="Frame side in pixels")
    sub.add_argument("--fragment-side", dest="fragment_side", type=int, help="Fragment side in pixels")
    sub.add_argument("--gap", type=int, help="Gap between grid cells in pixels")
    sub.add_argument("--jitter", type=int, help="Per-axis fragment jitter in pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fragkit", description="Relative-position learning and 3x3 puzzle solving")
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth = _subcommand(subparsers, "synth")
    synth.add_argument("--kind", choices=["gradient", "checker", "blobs"])
    synth.add_argument("--count", type=int)
    synth.add_argument("--frame-side", dest="frame_side", type=int)
    synth.add_argument("--out", help="Output folder")

    for name in ("train", "finetune"):
        sub = _subcommand(subparsers, name)
        if name == "finetune":
            sub.add_argument("--ckpt", help="Checkpoint to start from")
        else:
            sub.add_argument("--geometry", choices=["desk", "full"], help="Size preset (default full)")
        _geometry_flags(sub)
        sub.add_argument("--data", help="Image folder")
        sub.add_argument("--fusion", choices=["concat", "kron", "kronecker"])
        sub.add_argument("--lr", type=float)
        sub.add_argument("--momentum", type=float)
        sub.add_argument("--batch", type=int)
        sub.add_argument("--epochs", type=int)
        sub.add_argument("--out", help="Checkpoint to write")
        sub.add_argument("--metrics", help="Metrics CSV to append to")

    evaluate = _subcommand(subparsers, "eval")
    evaluate.add_argument("--ckpt")
    evaluate.add_argument("--data")
    evaluate.add_argument("--split", choices=["train", "validation"])
    evaluate.add_argument("--batch", type=int)

    solve = _subcommand(subparsers, "solve")
    solve.add_argument("--ckpt")
    solve.add_argument("--image", help="Single image to solve")
    solve.add_argument("--data", help="Image folder, one puzzle per image of --split")
    solve.add_argument("--split", choices=["train", "validation"])
    solve.add_argument("--count", type=int, help="Solve only the first COUNT images")
    solve.add_argument("--render", help="Reconstruction PPM to write")
    solve.add_argument("--oracle", action="store_true", help="Print greedy and optimal scores")
    solve.add_argument("--report", help="Corpus report CSV to append to")
    _geometry_flags(solve)

    render = _subcommand(subparsers, "render")
    render.add_argument("--ckpt")
    render.add_argument("--image")
    render.add_argument("--out")
    _geometry_flags(render)

    gradcheck = _subcommand(subparsers, "gradcheck")
    gradcheck.add_argument("--seeds", type=int, help="Number of consecutive seeds (default 10)")
    gradcheck.add_argument("--no-network", dest="network", action="store_false")

    compare = _subcommand(subparsers, "compare")
    compare.add_argument("--concat", help="Metrics CSV of the concat run")
    compare.add_argument("--kron", help="Metrics CSV of the Kronecker run")
    compare.add_argument("--out", help="Side-by-side CSV to write")
    return parser


def _config_values(command: str, path: str) -> Dict[str, Optional[str]]:
    fields = COMMANDS[command].model_fields
    values = {}
    for key, value in dotenv_values(path).items():
        name = key.strip().lower().replace("-", "_")
        if name not in fields:
            raise UsageError(f"{path}: unknown key {key!r} for {command}")
        values[name] = value
    return values


def parse_args(argv: Optional[List[str]] = None) -> Tuple[str, Dict[str, object]]:
    """Subcommand name and its merged arguments (config file first, flags on top)."""
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config = args.pop("config", None)
    arguments = {}
    if config is not None:
        if not Path(config).is_file():
            raise FileNotFoundError(f"config file {config} not found")
        arguments.update(_config_values(command, config))
    arguments.update(args)
    return command, arguments


def run(argv: Optional[List[str]] = None) -> int:
    try:
        name, arguments = parse_args(argv)
        command = build_command(name, arguments)
    except SystemExit as exit_request:
        return int(exit_request.code or 0)
    except UsageError as error:
        print(error, file=sys.stderr)
        return error.exit_code
    except ValidationError as error:
        print(f"invalid configuration: {error}", file=sys.stderr)
        return 1
    except OSError as error:
        print(f"error: {error}", file=sys.stderr)
        return 2

    resolved = {"command": name, **command.model_dump(mode="json")}
    print(json.dumps(resolved, indent=2, sort_keys=True))
    log_run_to_json(name, resolved)

    try:
        print(run_command(command))
    except FragkitError as error:
        logger.error(f"{name} failed: {error}")
        print(f"error: {error}", file=sys.stderr)
        return error.exit_code
    except ValidationError as error:
        logger.error(f"{name} failed: {error}")
        print(f"invalid configuration: {error}", file=sys.stderr)
        return 1
    except OSError as error:
        logger.error(f"{name} failed: {error}")
        print(f"error: {error}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(run())
