"""Command-line driver.

Exit codes: 0 success, 1 run failure (partial outputs flushed), 2 config
error. Progress goes to stderr; stdout only ever prints the paths of the
emitted files, which hold all numeric results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import (
    CommandFailure,
    ConfigError,
    ExperimentSpec,
    run_experiment,
)
from .training import DivergenceError

COMMAND_KINDS = {
    "train": "train-curve",
    "sweep": "sweep",
    "particles2d": "particles-2d",
    "ensemble": "ensemble",
    "oracle-check": "oracle-check",
}


def _set_by_path(cfg: dict, dotted: str, value):
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {dotted}: '{part}' is not a section")
    node[parts[-1]] = value


def _parse_override(item: str):
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are allowed unquoted
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgdbound",
        description=(
            "Train with SGD while tracking the entropy of the implicit "
            "parameter distribution, yielding an online lower bound on the "
            "log marginal likelihood. All numeric output goes to curve files "
            "in the output directory."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "train": "run one training curve and report the best-bound iteration",
        "sweep": "grid sweep over one hyperparameter with matched seeds",
        "particles2d": "evolve a 2-D particle cloud, plain and warped variants",
        "ensemble": "independent restarts sharing the batch sequence",
        "oracle-check": "run the analytic/Monte-Carlo oracle battery",
    }
    for name, help_text in descriptions.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument(
            "--config",
            help="JSON experiment config (see README for the schema)",
            default=None,
        )
        cmd.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry with a dotted path, "
            "e.g. --set run.step_size=0.01 (values parse as JSON)",
        )
        cmd.add_argument("--out", help="output directory", default=None)
        cmd.add_argument(
            "--seed",
            type=int,
            default=None,
            help="master seed: sets run.seed_init / seed_batch / seed_probe "
            "to seed, seed+1, seed+2",
        )
    return parser


def load_spec(args) -> ExperimentSpec:
    if args.config is not None:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    else:
        if args.command != "oracle-check":
            raise ConfigError("--config is required for this command")
        raw = {"run": {"step_size": 0.1}}
    raw.setdefault("kind", COMMAND_KINDS[args.command])
    if raw["kind"] != COMMAND_KINDS[args.command]:
        raise ConfigError(
            f"config kind {raw['kind']!r} does not match command {args.command!r}"
        )
    for item in args.set:
        key, value = _parse_override(item)
        _set_by_path(raw, key, value)
    if args.seed is not None:
        run = raw.setdefault("run", {})
        run["seed_init"] = args.seed
        run["seed_batch"] = args.seed + 1
        run["seed_probe"] = args.seed + 2
    if args.out is not None:
        raw["out"] = args.out
    return ExperimentSpec.from_dict(raw)


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        paths = run_experiment(spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CommandFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        for path in exc.paths:
            print(path)
        return 1
    except DivergenceError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
