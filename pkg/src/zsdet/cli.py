"""Command-line entry point: ``zsdet {gen-data,train,eval,sweep,inspect-sim}``.

Every config key has a mirroring flag ``--section.key`` (e.g. ``--model.lam 0.4``);
flags override the ``--config`` file, which overrides built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .experiment import (ConfigError, EvalConfig, ExperimentConfig, TrainerConfig,
                         VocabularyMismatch, build_world, eval_run, gen_data, load_world,
                         sweep, train_run)
from .model import ModelConfig
from .numerics import CheckpointError
from .semantics import EmbeddingFileError, similarity_to_json
from .synthdata import SynthConfig
from .trainer import TrainingDiverged

SECTIONS = {"data": SynthConfig, "model": ModelConfig, "trainer": TrainerConfig, "eval": EvalConfig}
EXPECTED_ERRORS = (ConfigError, VocabularyMismatch, EmbeddingFileError, CheckpointError,
                   TrainingDiverged, FileNotFoundError, FileExistsError, ValueError, OSError)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="generic override, e.g. --set model.beta=0.3 (repeatable)")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--run-dir", dest="run_dir")
    g = p.add_argument_group("config keys")
    for section, kind in SECTIONS.items():
        for f in fields(kind):
            g.add_argument(f"--{section}.{f.name}", dest=f"cfg:{section}.{f.name}", metavar="V")


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for k, v in vars(args).items():
        if k.startswith("cfg:") and v is not None:
            overrides[k[4:]] = v
    for k in ("data_dir", "run_dir"):
        if getattr(args, k, None):
            overrides[k] = getattr(args, k)
    return cfg.with_overrides(overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsdet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic benchmark to data_dir")
    _add_config_flags(p)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty data_dir")

    p = sub.add_parser("train", help="train on data_dir/train.jsonl, checkpoint into run_dir")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="detect and score one test split")
    _add_config_flags(p)
    p.add_argument("--mode", choices=("seen", "zsd", "gzsd"), default="gzsd")
    p.add_argument("--checkpoint", help="defaults to run_dir/checkpoint.json")

    p = sub.add_parser("sweep", help="train one model per lambda or beta value")
    _add_config_flags(p)
    p.add_argument("--parameter", choices=("lambda", "beta"), required=True)
    p.add_argument("--values", required=True, help="comma-separated, e.g. 0,0.2,0.4")
    p.add_argument("--out", help="CSV path (default run_dir/sweep_<parameter>.csv)")
    p.add_argument("--jobs", type=int, default=1, help="train arms in parallel processes")

    p = sub.add_parser("inspect-sim", help="print the class similarity matrix as JSON")
    _add_config_flags(p)
    p.add_argument("--out", help="write to a file instead of stdout")
    return parser


def _parse_values(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values: {exc}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = resolve_config(args)
        if args.command == "gen-data":
            paths = gen_data(cfg, force=args.force)
            for p in paths.values():
                print(p)
        elif args.command == "train":
            _, history = train_run(cfg)
            last = history[-1] if history else {}
            print(json.dumps({"steps": len(history), "final_loss": last.get("total")}))
        elif args.command == "eval":
            report = eval_run(cfg, args.mode, args.checkpoint)
            print(report.to_json())
        elif args.command == "sweep":
            values = _parse_values(args.values)
            out = args.out or str(Path(cfg.run_dir) / f"sweep_{args.parameter}.csv")
            rows = sweep(cfg, args.parameter, values, out, jobs=args.jobs)
            print(out)
            for r in rows:
                print(json.dumps(r))
        elif args.command == "inspect-sim":
            world = _sim_world(cfg)
            text = similarity_to_json(world.S, world.vocab)
            if args.out:
                Path(args.out).write_text(text + "\n")
            else:
                print(text)
    except EXPECTED_ERRORS as exc:
        print(f"zsdet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def _sim_world(cfg):
    # prefer the generated dataset's embeddings; fall back to regenerating them
    if (Path(cfg.data_dir) / "vocabulary.json").exists():
        return load_world(cfg, ())
    return build_world(cfg, ())


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
