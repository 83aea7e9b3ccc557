"""Command-line entry point: datasets, training, sweeps, evaluation.

One binary with subcommands; every run derives all randomness from one
master ``--seed`` and writes its fully-resolved configuration next to
its outputs, so any artifact on disk can be regenerated from that file.

Exit codes: 0 success, 2 usage or configuration errors, 3 data or
checkpoint errors, 4 training divergence, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import training as training_module
from .evaluation import (
    SOURCES,
    EvalReport,
    EvalSplit,
    combine_reports,
    emit_report,
    evaluate,
)
from .graphs import (
    FAMILIES,
    TEST_NODE_COUNTS,
    TEST_COUNT,
    TRAIN_COUNT,
    TRAIN_NODE_COUNT,
    VAL_COUNT,
    DatasetError,
    DistributionConfig,
    build_dataset,
    density_for,
    load_dataset,
    save_dataset,
    split_seed,
)
from .model import ModelConfig, load_model, save_model
from .optim import CheckpointError
from .training import DivergenceDetected, TrainSettings, parameter_digest

DATA_DIR_ENV = "PATHFIELD_DATA_DIR"

MODEL_FIELDS = {field.name for field in dataclasses.fields(ModelConfig)}
LOOP_FIELDS = {field.name for field in dataclasses.fields(TrainSettings)}


class ConfigError(Exception):
    """A malformed or contradictory run configuration."""


# ============================================================
# Shared helpers
# ============================================================


def default_data_dir() -> str:
    return os.environ.get(DATA_DIR_ENV, "data")


def dataset_path(data_dir: str, family: str, split: str) -> str:
    return os.path.join(data_dir, f"{family}-{split}.pfds")


def _load_split(data_dir: str, family: str, split: str):
    path = dataset_path(data_dir, family, split)
    if not os.path.exists(path):
        raise DatasetError(
            f"dataset {path} not found; run `pathfield generate-data` first"
        )
    instances, _ = load_dataset(path)
    return instances


def _write_resolved(out_dir: str, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_config_file(path: str) -> dict:
    """A flat JSON object of ModelConfig and/or loop-setting keys."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - MODEL_FIELDS - LOOP_FIELDS)
    if unknown:
        raise ConfigError(
            f"config file {path} has unknown keys: {', '.join(unknown)}"
        )
    return data


def resolve_training_config(args) -> tuple[ModelConfig, TrainSettings]:
    """Merge defaults, config file, and command-line overrides (in that order)."""
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    overrides = {
        "hidden_dim": args.hidden_dim,
        "mlp_hidden": args.mlp_hidden,
        "norm_weight": args.norm_weight,
        "learning_rate": args.learning_rate,
        "weight_decay": args.weight_decay,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "hinge_penalty": True if args.hinge_penalty else None,
    }
    merged.update({k: v for k, v in overrides.items() if v is not None})
    model_kwargs = {k: v for k, v in merged.items() if k in MODEL_FIELDS}
    loop_kwargs = {k: v for k, v in merged.items() if k in LOOP_FIELDS}
    try:
        return ModelConfig(**model_kwargs), TrainSettings(**loop_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _parse_families(text: str) -> list[str]:
    families = [part.strip() for part in text.split(",") if part.strip()]
    for family in families:
        if family not in FAMILIES:
            raise ConfigError(
                f"unknown family {family!r}, expected one of {', '.join(FAMILIES)}"
            )
    if not families:
        raise ConfigError("no families requested")
    return families


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"sizes must be integers: {exc}") from exc
    for size in sizes:
        if size not in TEST_NODE_COUNTS:
            raise ConfigError(
                f"size {size} is not generated; available: "
                f"{', '.join(str(n) for n in TEST_NODE_COUNTS)}"
            )
    if not sizes:
        raise ConfigError("no sizes requested")
    return sizes


# ============================================================
# generate-data
# ============================================================


def cmd_generate_data(args) -> int:
    families = _parse_families(args.families)
    sizes = _parse_sizes(args.sizes)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for family in families:
        jobs = [
            ("train", TRAIN_NODE_COUNT, args.train_count),
            ("val", TRAIN_NODE_COUNT, args.val_count),
        ] + [(f"test-{size}", size, args.test_count) for size in sizes]
        for split, node_count, count in jobs:
            config = DistributionConfig(
                node_count=node_count,
                edge_probability=density_for(family, node_count),
                seed=split_seed(args.seed, family, split),
            )
            instances = build_dataset([config], count)
            path = dataset_path(args.out, family, split)
            save_dataset(
                path,
                instances,
                config,
                extra={"family": family, "split": split, "master_seed": args.seed},
            )
            written.append(path)
            print(f"wrote {path} ({count} instances, {node_count} nodes)")
    _write_resolved(
        args.out,
        {
            "command": "generate-data",
            "families": families,
            "sizes": sizes,
            "train_count": args.train_count,
            "val_count": args.val_count,
            "test_count": args.test_count,
            "seed": args.seed,
            "files": [os.path.basename(path) for path in written],
        },
    )
    return 0


# ============================================================
# train
# ============================================================


def _epoch_printer(record) -> None:
    print(
        f"epoch {record.epoch:3d}  train {record.train_total:9.4f}  "
        f"val {record.val_total:9.4f}  constraints {record.val_constraint_fraction:6.4f}  "
        f"pointer acc {record.val_pointer_accuracy:6.4f}  score {record.val_score:7.4f}",
        flush=True,
    )


def cmd_train(args) -> int:
    config, settings = resolve_training_config(args)
    data_dir = args.data_dir
    train_set = _load_split(data_dir, args.family, "train")
    val_set = _load_split(data_dir, args.family, "val")
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(
        args.out,
        {
            "command": "train",
            "data_dir": data_dir,
            "family": args.family,
            "model": config.to_dict(),
            "settings": dataclasses.asdict(settings),
        },
    )
    log_path = os.path.join(args.out, "training_log.jsonl")
    try:
        params, report = training_module.train(
            config, train_set, val_set, settings, log=_epoch_printer
        )
    except DivergenceDetected as exc:
        if exc.report is not None:
            exc.report.write_jsonl(log_path)
        raise
    checkpoint_path = os.path.join(args.out, "checkpoint.pfck")
    save_model(checkpoint_path, params)
    report.write_jsonl(log_path)
    print(
        f"best epoch {report.best_epoch} (score {report.best_score:.4f}); "
        f"checkpoint {checkpoint_path} [{report.checkpoint_id}]"
    )
    return 0


# ============================================================
# sweep
# ============================================================


def _sweep_trial(payload) -> dict:
    level, seed, index, train_set, val_set, settings_kwargs = payload
    config = training_module.sample_search_config(level, seed, index)
    settings = TrainSettings(**settings_kwargs)
    try:
        _, report = training_module.train(config, train_set, val_set, settings)
        return {
            "index": index,
            "config": config.to_dict(),
            "score": report.best_score,
            "best_epoch": report.best_epoch,
            "diverged": False,
        }
    except DivergenceDetected:
        return {
            "index": index,
            "config": config.to_dict(),
            "score": float("-inf"),
            "best_epoch": -1,
            "diverged": True,
        }


def cmd_sweep(args) -> int:
    if args.level not in (1, 2):
        raise ConfigError(f"sweep level must be 1 or 2, got {args.level}")
    if args.budget < 1:
        raise ConfigError("sweep budget must be positive")
    train_set = _load_split(args.data_dir, args.family, "train")
    val_set = _load_split(args.data_dir, args.family, "val")
    try:
        settings = TrainSettings(
            batch_size=32 if args.batch_size is None else args.batch_size,
            max_epochs=12 if args.max_epochs is None else args.max_epochs,
            patience=4 if args.patience is None else args.patience,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid sweep settings: {exc}") from exc
    os.makedirs(args.out, exist_ok=True)
    _write_resolved(
        args.out,
        {
            "command": "sweep",
            "data_dir": args.data_dir,
            "family": args.family,
            "level": args.level,
            "budget": args.budget,
            "seed": args.seed,
            "threads": args.threads,
            "settings": dataclasses.asdict(settings),
        },
    )
    settings_kwargs = dataclasses.asdict(settings)
    if args.threads > 1:
        payloads = [
            (args.level, args.seed, index, train_set, val_set, settings_kwargs)
            for index in range(args.budget)
        ]
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_sweep_trial, payloads))
    else:
        results = [
            _sweep_trial((args.level, args.seed, index, train_set, val_set, settings_kwargs))
            for index in range(args.budget)
        ]
    results.sort(key=lambda r: (-r["score"], r["index"]))
    sweep_path = os.path.join(args.out, "sweep.jsonl")
    with open(sweep_path, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result, sort_keys=True) + "\n")
    best = results[0]
    best_path = os.path.join(args.out, "best_config.json")
    with open(best_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(best["config"], sort_keys=True, indent=2) + "\n")
    for result in results:
        marker = " (diverged)" if result["diverged"] else ""
        print(
            f"trial {result['index']}: score {result['score']:.4f} "
            f"hidden {result['config']['hidden_dim']}{marker}"
        )
    print(f"best config written to {best_path}")
    return 0


# ============================================================
# evaluate / report
# ============================================================


def _load_eval_splits(data_dir: str, families, sizes) -> list[EvalSplit]:
    splits = []
    for family in families:
        for size in sizes:
            instances = _load_split(data_dir, family, f"test-{size}")
            splits.append(EvalSplit(family, size, tuple(instances)))
    return splits


def cmd_evaluate(args) -> int:
    sources = tuple(part.strip() for part in args.heuristic.split(",") if part.strip())
    for source in sources:
        if source not in SOURCES:
            raise ConfigError(
                f"unknown heuristic source {source!r}, expected subset of {', '.join(SOURCES)}"
            )
    if not sources:
        raise ConfigError("no heuristic sources requested")
    families = _parse_families(args.families)
    sizes = _parse_sizes(args.sizes)
    needs_model = "learnt" in sources
    retrain = args.retrain_per_trial
    if retrain is None:
        retrain = needs_model and args.checkpoint is None
    if retrain and args.checkpoint is not None:
        raise ConfigError(
            "--retrain-per-trial trains fresh models; drop --checkpoint or "
            "pass --no-retrain-per-trial"
        )
    if needs_model and not retrain and args.checkpoint is None:
        raise ConfigError(
            "the learnt source needs --checkpoint (or --retrain-per-trial)"
        )
    splits = _load_eval_splits(args.data_dir, families, sizes)
    os.makedirs(args.out, exist_ok=True)
    resolved = {
        "command": "evaluate",
        "data_dir": args.data_dir,
        "families": families,
        "sizes": sizes,
        "sources": list(sources),
        "trials": args.trials,
        "seed": args.seed,
        "checkpoint": args.checkpoint,
        "retrain_per_trial": retrain,
        "timing_repetitions": args.timing_repetitions,
    }
    if retrain and needs_model:
        report = _evaluate_with_retraining(args, sources, splits, resolved)
    else:
        params = None
        checkpoint_id = ""
        if needs_model:
            params = load_model(args.checkpoint)
            checkpoint_id = parameter_digest(params)
        report = evaluate(
            params,
            splits,
            trials=args.trials,
            seed=args.seed,
            sources=sources,
            timing_repetitions=args.timing_repetitions,
            checkpoint_id=checkpoint_id,
        )
    _write_resolved(args.out, resolved)
    paths = emit_report(report, args.out)
    for path in paths:
        print(f"wrote {path}")
    return 0


def _evaluate_with_retraining(args, sources, splits, resolved) -> EvalReport:
    """One fresh model per trial (seeded independently), then averaged rows."""
    config, settings = resolve_training_config(args)
    train_set = _load_split(args.data_dir, args.train_family, "train")
    val_set = _load_split(args.data_dir, args.train_family, "val")
    resolved["model"] = config.to_dict()
    resolved["settings"] = dataclasses.asdict(settings)
    resolved["train_family"] = args.train_family
    reports = []
    for trial in range(args.trials):
        trial_seed = int(
            np.random.SeedSequence(args.seed, spawn_key=(trial,)).generate_state(1)[0]
        )
        trial_config = dataclasses.replace(config, seed=trial_seed)
        params, train_report = training_module.train(
            trial_config, train_set, val_set, settings
        )
        save_model(
            os.path.join(args.out, f"checkpoint-trial-{trial}.pfck"), params
        )
        print(
            f"trial {trial}: trained to score {train_report.best_score:.4f} "
            f"[{train_report.checkpoint_id}]"
        )
        reports.append(
            evaluate(
                params,
                splits,
                trials=1,
                seed=trial_seed,
                sources=sources,
                timing_repetitions=args.timing_repetitions,
                checkpoint_id=train_report.checkpoint_id,
            )
        )
    return combine_reports(reports)


def cmd_report(args) -> int:
    try:
        with open(args.report, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read report {args.report}: {exc}") from exc
    try:
        report = EvalReport.from_json(text)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"report {args.report} is malformed: {exc}") from exc
    paths = emit_report(report, args.out)
    for path in paths:
        print(f"wrote {path}")
    return 0


# ============================================================
# Parser and dispatch
# ============================================================


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of model/loop settings")
    parser.add_argument("--hidden-dim", type=int, default=None)
    parser.add_argument("--mlp-hidden", type=int, default=None)
    parser.add_argument("--norm-weight", type=float, default=None)
    parser.add_argument("--learning-rate", type=float, default=None)
    parser.add_argument("--weight-decay", type=float, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--max-epochs", type=int, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument(
        "--hinge-penalty",
        action="store_true",
        help="penalize the excess over the weight instead of the full difference",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathfield",
        description="Learn consistent A* heuristics from Dijkstra traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-data", help="write train/val/test dataset files")
    gen.add_argument("--out", default=None, help=f"output directory (default ${DATA_DIR_ENV} or ./data)")
    gen.add_argument("--families", default=",".join(FAMILIES))
    gen.add_argument(
        "--sizes", default=",".join(str(n) for n in TEST_NODE_COUNTS),
        help="test split node counts",
    )
    gen.add_argument("--train-count", type=int, default=TRAIN_COUNT)
    gen.add_argument("--val-count", type=int, default=VAL_COUNT)
    gen.add_argument("--test-count", type=int, default=TEST_COUNT)
    gen.add_argument("--seed", type=int, default=0, help="master seed")
    gen.set_defaults(handler=cmd_generate_data)

    tr = sub.add_parser("train", help="train one model on a family's train split")
    tr.add_argument("--data-dir", default=None)
    tr.add_argument("--family", default="dense", choices=FAMILIES)
    tr.add_argument("--out", default="runs/train")
    tr.add_argument("--seed", type=int, default=None, help="master seed (model init and shuffling)")
    _add_training_flags(tr)
    tr.set_defaults(handler=cmd_train)

    sw = sub.add_parser("sweep", help="random hyperparameter search")
    sw.add_argument("--data-dir", default=None)
    sw.add_argument("--family", default="dense", choices=FAMILIES)
    sw.add_argument("--out", default="runs/sweep")
    sw.add_argument("--level", type=int, required=True, help="1 (broad) or 2 (narrowed)")
    sw.add_argument("--budget", type=int, required=True, help="number of trials")
    sw.add_argument("--seed", type=int, default=0, help="master seed")
    sw.add_argument("--threads", type=int, default=1, help="parallel trial workers")
    sw.add_argument("--batch-size", type=int, default=None)
    sw.add_argument("--max-epochs", type=int, default=None)
    sw.add_argument("--patience", type=int, default=None)
    sw.set_defaults(handler=cmd_sweep)

    ev = sub.add_parser("evaluate", help="measure heuristics on the test splits")
    ev.add_argument("--data-dir", default=None)
    ev.add_argument("--out", default="runs/evaluate")
    ev.add_argument("--checkpoint", default=None, help="trained model file")
    ev.add_argument(
        "--heuristic", default=",".join(SOURCES),
        help="comma list from learnt, zero, random",
    )
    ev.add_argument("--families", default=",".join(FAMILIES))
    ev.add_argument(
        "--sizes", default=",".join(str(n) for n in TEST_NODE_COUNTS)
    )
    ev.add_argument("--trials", type=int, default=1)
    ev.add_argument("--timing-repetitions", type=int, default=5)
    ev.add_argument("--seed", type=int, default=0, help="master seed")
    ev.add_argument(
        "--retrain-per-trial",
        dest="retrain_per_trial",
        action="store_true",
        default=None,
        help="train a fresh model per trial (default when learnt is "
        "requested without --checkpoint)",
    )
    ev.add_argument(
        "--no-retrain-per-trial",
        dest="retrain_per_trial",
        action="store_false",
        help="always reuse the given checkpoint across trials",
    )
    ev.add_argument(
        "--train-family", default="dense", choices=FAMILIES,
        help="family whose train/val splits feed --retrain-per-trial",
    )
    _add_training_flags(ev)
    ev.set_defaults(handler=cmd_evaluate)

    rep = sub.add_parser("report", help="re-emit tables from a stored report")
    rep.add_argument("--report", required=True, help="path to report.json")
    rep.add_argument("--out", default="runs/report")
    rep.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "data_dir", None) is None and hasattr(args, "data_dir"):
        args.data_dir = default_data_dir()
    if getattr(args, "out", None) is None and args.command == "generate-data":
        args.out = default_data_dir()
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DivergenceDetected as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except (DatasetError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except Exception:  # pragma: no cover - safety net
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
