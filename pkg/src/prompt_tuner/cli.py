"""Command-line entry point.

Subcommands: train, eval, gen-data, ablate, probe-oracle. stdout carries only
machine-readable JSON; human-oriented logging goes to stderr. Exit codes:
0 success, 1 configuration/usage error, 2 runtime failure. The environment
variable PROMPT_TUNER_SEED overrides the config seed (CI hook); everything
else is configured through the JSON config file and --set overrides.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import apply_overrides, config_from_dict
from .datagen import ShiftSpec, biased_dataset, loc_dataset, save_dataset
from .errors import ConfigurationError, PromptTunerError
from .oracle import RemoteOracle, export_weights
from .trainer import ablation_matrix, build_fixture, evaluate, train

SEED_ENV = "PROMPT_TUNER_SEED"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def build_parser():
    parser = _Parser(prog="prompt-tuner",
                     description="Black-box visual prompt tuning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="run a training loop")
    p_train.add_argument("--config", help="JSON run config")
    p_train.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE", help="dotted config override")
    p_train.add_argument("--resume", help="checkpoint to resume from")
    p_train.add_argument("--out", help="output directory (overrides config)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", default="val", choices=["train", "val", "test"])
    p_eval.add_argument("--mode", default="refined", choices=["raw", "refined", "posthoc"])

    p_gen = sub.add_parser("gen-data", help="materialize a synthetic dataset")
    p_gen.add_argument("--kind", required=True, choices=["biased", "loc"])
    p_gen.add_argument("--rho", type=float, default=0.9)
    p_gen.add_argument("--ratio", default="1:1", choices=["1:1", "1:4"])
    p_gen.add_argument("--split", default="train", choices=["train", "test"])
    p_gen.add_argument("--n", type=int, default=32, help="examples per class")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)

    p_abl = sub.add_parser("ablate", help="run the five-variant ablation matrix")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE")

    p_probe = sub.add_parser("probe-oracle", help="probe an endpoint or export weights")
    p_probe.add_argument("--endpoint", help="remote oracle base URL")
    p_probe.add_argument("--export-weights", dest="export_weights",
                         help="write builtin-oracle weights JSON here")
    p_probe.add_argument("--config", help="run config (for --export-weights)")
    return parser


def _load_config(path, overrides):
    if path is None:
        data = {}
    else:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    apply_overrides(data, overrides)
    if os.environ.get(SEED_ENV):
        try:
            data["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV} must be an integer") from exc
    return config_from_dict(data)


def _emit(payload):
    json.dump(payload, sys.stdout)
    sys.stdout.write("\n")


def cmd_train(args):
    config = _load_config(args.config, args.overrides) if (args.config or not args.resume) else None
    if config is not None:
        out = args.out or config.output_dir or "run_output"
        config = replace(config, output_dir=out)
    checkpoint, metrics = train(config, resume_from=args.resume)
    print(f"trained to iteration {checkpoint.iteration}", file=sys.stderr)
    _emit({
        "checkpoint": str(Path(checkpoint.config.output_dir) / "checkpoint.json"),
        "iterations": checkpoint.iteration,
        "metrics_rows": len(metrics) - 1,
    })
    return 0


def cmd_eval(args):
    _emit(evaluate(args.checkpoint, split=args.split, mode=args.mode))
    return 0


def cmd_gen_data(args):
    spec = ShiftSpec(kind=args.kind, rho=args.rho, ratio=args.ratio,
                     split=args.split, n_per_class=args.n, seed=args.seed)
    dataset = biased_dataset(spec) if args.kind == "biased" else loc_dataset(spec)
    manifest = save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} images to {args.out}", file=sys.stderr)
    _emit({"manifest": str(manifest), "n": len(dataset),
           "shape": list(dataset.shape)})
    return 0


def cmd_ablate(args):
    config = _load_config(args.config, args.overrides)
    _emit(ablation_matrix(config))
    return 0


def cmd_probe_oracle(args):
    if args.export_weights:
        if not args.config:
            raise ConfigurationError("--export-weights needs --config")
        config = _load_config(args.config, [])
        fixture = build_fixture(config)
        weights = export_weights(fixture.oracle)
        Path(args.export_weights).write_text(json.dumps(weights))
        _emit({"weights": args.export_weights,
               "num_classes": len(weights["b"]),
               "shape": weights["shape"]})
        return 0
    if not args.endpoint:
        raise ConfigurationError("probe-oracle needs --endpoint or --export-weights")
    oracle = RemoteOracle(args.endpoint)
    zero = np.zeros((1,) + oracle.input_geometry)
    probs = oracle.predict_batch(zero)
    _emit({
        "meta": {"num_classes": oracle.num_classes,
                 "shape": list(oracle.input_geometry)},
        "probe": {"ok": True, "row_sum": float(probs.sum()),
                  "argmax": int(probs.argmax())},
    })
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gen-data": cmd_gen_data,
    "ablate": cmd_ablate,
    "probe-oracle": cmd_probe_oracle,
}


def run(argv):
    """Dispatch a CLI invocation; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PromptTunerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
