"""Command-line interface for ICAD."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .common import ConfigError, DataError, file_digest_ref
from .config import RunConfig, load_config
from .errors import (
    EXIT_OK,
    EXIT_USAGE,
    INTERNAL_ERROR,
    IcadCliError,
    from_exception,
    invalid_argument,
    print_error,
)
from .events import EventLog
from .ingest import DatasetHandle, Modality, load_dataset
from .log_miner import LogMiner, load_inventory, save_inventory
from .paths import resolve_under
from .sample_cache import build_prepared, try_load_prepared
from .ui.format import ColorMode, Column, format_metric, render_json, render_jsonl, render_table

logger = logging.getLogger("icad")

INVENTORY_NAME = "templates.json"
CHECKPOINT_NAME = "checkpoint.ckpt"

# Reference-size grid used when --k-list is not given
DEFAULT_K_LIST = (1, 2, 3, 5, 7, 10)


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the usage code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("expected positive integers")
    return values


# =============================================================================
# Shared helpers
# =============================================================================


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _new_miner(config: RunConfig) -> LogMiner:
    return LogMiner(
        depth=config.miner.depth,
        similarity_threshold=config.miner.similarity_threshold,
        extra_patterns=config.miner.extra_patterns,
    )


def _run_miner(config: RunConfig, inventory: Optional[str] = None) -> LogMiner:
    """The run's template miner: the saved inventory if present, else a fresh one."""
    path = Path(inventory) if inventory else _out_dir(config) / INVENTORY_NAME
    if path.exists():
        return load_inventory(path)
    if inventory:
        raise DataError("template inventory does not exist", path)
    return _new_miner(config)


def _manifests(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    given = getattr(args, "manifest", None) or getattr(args, "manifests", None)
    manifests = [Path(m) for m in (given or config.manifests)]
    if not manifests:
        raise ConfigError("manifests", "no manifest given on the command line or in the config")
    return manifests


def _load_datasets(
    manifests: Sequence[Path], config: RunConfig, miner: LogMiner
) -> list[DatasetHandle]:
    """Prepared datasets from a valid cache, otherwise ingested directly.

    A cache built from the config's manifest list serves any subset of it.
    """
    out = _out_dir(config)
    cached = try_load_prepared(out, manifests, miner)
    if cached is not None:
        return cached
    config_manifests = [Path(m).resolve() for m in config.manifests]
    requested = [Path(m).resolve() for m in manifests]
    if config_manifests and all(m in config_manifests for m in requested):
        cached = try_load_prepared(out, config_manifests, miner)
        if cached is not None:
            by_path = dict(zip(config_manifests, cached))
            logger.debug("using prepared cache for %d dataset(s)", len(requested))
            return [by_path[m] for m in requested]
    return [load_dataset(m, miner) for m in manifests]


def _load_model(args: argparse.Namespace, config: RunConfig):
    from .checkpoint import build_model, load_checkpoint

    path = Path(args.checkpoint) if args.checkpoint else _out_dir(config) / CHECKPOINT_NAME
    checkpoint = load_checkpoint(path)
    inventory = Path(args.inventory) if getattr(args, "inventory", None) else _out_dir(config) / INVENTORY_NAME
    if checkpoint.inventory_ref and inventory.exists():
        if file_digest_ref(inventory) != checkpoint.inventory_ref:
            logger.warning(
                "template inventory %s differs from the one the checkpoint was trained with",
                inventory,
            )
    return build_model(checkpoint), checkpoint


def _emit(args: argparse.Namespace, data, table: Optional[str] = None) -> None:
    if args.json:
        print(render_json(data))
    elif table:
        print(table)


def _color(args: argparse.Namespace) -> ColorMode:
    return ColorMode.NEVER if args.no_color else ColorMode.AUTO


# =============================================================================
# Commands
# =============================================================================


def cmd_synth(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the synth command: write synthetic tasks as manifest + files."""
    from .synthgen import SynthSpec, suite_specs, write_task

    overrides = {}
    if args.anomaly_rate is not None:
        overrides["anomaly_rate"] = args.anomaly_rate
    if args.no_train_anomalies:
        overrides["train_anomalies"] = False

    if args.suite:
        specs = suite_specs(config.seed, args.tasks, **overrides)
    else:
        if not args.modality:
            raise ConfigError("modality", "synth needs --modality or --suite")
        specs = [
            SynthSpec(
                modality=Modality(args.modality),
                task_id=args.task_id,
                seed=config.seed,
                anomaly_kind=args.anomaly_kind,
                **overrides,
            )
        ]

    data_dir = resolve_under(_out_dir(config), args.data_dir)
    paths = [write_task(spec, data_dir) for spec in specs]
    rows = [
        {"dataset_id": spec.dataset_id, "modality": spec.modality.value, "manifest": str(path)}
        for spec, path in zip(specs, paths)
    ]
    _emit(args, rows, render_table(rows, ["dataset_id", "modality", "manifest"], color_mode=_color(args)))
    return EXIT_OK


def cmd_prep(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the prep command: ingest manifests into the prepared cache."""
    manifests = _manifests(args, config)
    out = _out_dir(config)
    miner = _new_miner(config)
    datasets, rebuilt = build_prepared(out, manifests, miner)
    if rebuilt and miner.templates:
        save_inventory(miner, out / INVENTORY_NAME)

    rows = [ds.summary() for ds in datasets]
    events.append("prep_completed", datasets=[r["dataset_id"] for r in rows], rebuilt=rebuilt)
    if not args.json:
        print(f"Prepared {len(rows)} dataset(s) in {out / 'prepared'}" + ("" if rebuilt else " (cache reused)"))
    _emit(
        args,
        {"rebuilt": rebuilt, "datasets": rows},
        render_table(
            rows,
            ["dataset_id", "modality", "train_normals", "train_anomalies", "test", "size_points"],
            color_mode=_color(args),
        ),
    )
    return EXIT_OK


def cmd_prep_logs(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the prep-logs command: mine templates and write id sequences."""
    from .ingest import read_log_lines

    out = _out_dir(config)
    miner = _run_miner(config, args.inventory)
    rows = []
    for log_path in args.logs:
        log_path = Path(log_path)
        if not log_path.exists():
            raise DataError("log file does not exist", log_path)
        ids, _ = miner.parse_corpus(read_log_lines(log_path))
        ids_path = resolve_under(out, f"{log_path.stem}.ids")
        with open(ids_path, "w", encoding="utf-8") as f:
            f.write("".join(f"{i}\n" for i in ids))
        rows.append({"log": str(log_path), "lines": len(ids), "ids": str(ids_path)})

    inventory_path = out / INVENTORY_NAME
    save_inventory(miner, inventory_path)
    if args.json:
        print(render_json({"inventory": str(inventory_path), "templates": len(miner.templates), "logs": rows}))
    else:
        print(render_table(rows, ["log", "lines", "ids"], color_mode=_color(args)))
        print(f"{len(miner.templates)} template(s) in {inventory_path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the train command."""
    from .checkpoint import load_checkpoint
    from .trainer import fit

    manifests = _manifests(args, config)
    out = _out_dir(config)
    miner = _run_miner(config)
    datasets = _load_datasets(manifests, config, miner)
    inventory_path = out / INVENTORY_NAME
    if miner.templates:
        save_inventory(miner, inventory_path)

    resume = load_checkpoint(Path(args.resume)) if args.resume else None
    result = fit(
        datasets,
        config,
        out_dir=out,
        events=events,
        resume=resume,
        inventory_path=inventory_path if inventory_path.exists() else None,
    )

    rows = [e.to_dict() for e in result.epochs]
    summary = {
        "checkpoint": str(result.checkpoint_path),
        "step": result.checkpoint.step,
        "epochs": rows,
        "excluded": result.excluded,
    }
    if args.json:
        print(render_json(summary))
    else:
        if rows:
            print(render_table(rows, ["epoch", "steps", "loss_mean", "loss_std"], color_mode=_color(args)))
        for dataset_id in result.excluded:
            print(f"Excluded: {dataset_id}")
        print(f"Checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the eval command."""
    from .evaluation import evaluate_dataset

    model, _ = _load_model(args, config)
    datasets = _load_datasets(_manifests(args, config), config, _run_miner(config, args.inventory))
    K = args.K or config.train.K
    seed = config.seed if args.ref_seed is None else args.ref_seed

    out = _out_dir(config)
    reports = []
    for ds in datasets:
        report, _ = evaluate_dataset(model, ds, K=K, seed=seed, metric=args.metric, histogram_bins=args.histogram)
        path = resolve_under(out, f"eval/{ds.dataset_id}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_json(report.to_dict()) + "\n", encoding="utf-8")
        events.append("eval_completed", dataset_id=ds.dataset_id, metric=report.metric, value=report.value, K=K)
        reports.append(report)

    if args.json:
        print(render_json([r.to_dict() for r in reports]))
        return EXIT_OK
    rows = [
        {"dataset_id": r.dataset_id, "metric": r.metric, "value": r.value, "n": r.n_samples, "threshold": r.threshold}
        for r in reports
    ]
    print(
        render_table(
            rows,
            ["dataset_id", "metric", Column("value", "VALUE", align="right"), "n", "threshold"],
            color_mode=_color(args),
        )
    )
    for r in reports:
        if r.histogram:
            print(f"\n{r.dataset_id} score histogram")
            print(render_table(r.histogram, ["bin_lo", "bin_hi", "normal", "anomalous"], digits=2, color_mode=_color(args)))
    return EXIT_OK


def cmd_score(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the score command: one JSON line per sample."""
    from .scorer import draw_reference_set, score_batch

    model, _ = _load_model(args, config)
    [dataset] = _load_datasets([Path(args.manifest)], config, _run_miner(config, args.inventory))
    K = args.K or config.train.K
    seed = config.seed if args.ref_seed is None else args.ref_seed

    refs = draw_reference_set(dataset, K, seed)
    samples = dataset.test if args.split == "test" else dataset.train_normals + dataset.train_anomalies
    scores = score_batch(refs, samples, model)
    records = [s.to_record(args.threshold) for s in scores]

    path = resolve_under(_out_dir(config), f"scores/{dataset.dataset_id}.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    text = render_jsonl(records)
    path.write_text(text + "\n" if text else "", encoding="utf-8")
    if text:
        print(text)
    return EXIT_OK


def cmd_sweep_k(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the sweep-k command."""
    from .evaluation import sweep_k

    model, _ = _load_model(args, config)
    datasets = _load_datasets(_manifests(args, config), config, _run_miner(config, args.inventory))
    seed = config.seed if args.ref_seed is None else args.ref_seed
    rows = sweep_k(model, datasets, args.k_list, seed=seed, metric=args.metric, events=events)

    path = resolve_under(_out_dir(config), "sweep_k.jsonl")
    path.write_text(render_jsonl(rows) + "\n", encoding="utf-8")
    _emit(args, rows, render_table(rows, ["K", "dataset_id", "metric", "value"], color_mode=_color(args)))
    if not args.json:
        for row in rows:
            if row["dataset_id"] == "*mean*":
                print(format_metric(f"K={row['K']}", row["value"], _color(args)))
    return EXIT_OK


def cmd_sweep_volume(args: argparse.Namespace, config: RunConfig, events: EventLog) -> int:
    """Handle the sweep-volume command: one training run per volume."""
    from .evaluation import sweep_volume

    manifests = _manifests(args, config)
    out = _out_dir(config)
    miner = _run_miner(config)
    datasets = _load_datasets(manifests, config, miner)
    if miner.templates:
        save_inventory(miner, out / INVENTORY_NAME)

    holdout = set(config.holdout)
    eval_datasets = [ds for ds in datasets if ds.dataset_id in holdout] or datasets
    rows = sweep_volume(
        datasets,
        config,
        args.volumes,
        eval_datasets=eval_datasets,
        metric=args.metric,
        out_dir=out,
        events=events,
    )

    path = resolve_under(out, "sweep_volume.jsonl")
    path.write_text(render_jsonl(rows) + "\n", encoding="utf-8")
    _emit(
        args,
        rows,
        render_table(rows, ["volume", "steps_per_epoch", "dataset_id", "metric", "value"], color_mode=_color(args)),
    )
    return EXIT_OK


# =============================================================================
# Entry point
# =============================================================================


def _common_parser() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config JSON")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", help="Override the output directory")
    common.add_argument("--json", action="store_true", help="Output as JSON")
    common.add_argument("--no-color", action="store_true", help="Disable colored output")
    common.add_argument("-v", "--verbose", action="store_true", help="Verbose logging")
    return common


def _model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", help=f"Checkpoint path (default: <out>/{CHECKPOINT_NAME})")
    parser.add_argument("--inventory", help=f"Template inventory (default: <out>/{INVENTORY_NAME})")
    parser.add_argument("--ref-seed", type=int, help="Reference-set seed (default: run seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="icad",
        description="In-context anomaly detection across time series, tabular and log data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser, help="Commands")
    common = _common_parser()

    # synth command
    synth_parser = subparsers.add_parser("synth", parents=[common], help="Write synthetic tasks")
    synth_parser.add_argument("--modality", choices=[m.value for m in Modality])
    synth_parser.add_argument("--task-id", type=int, default=0)
    synth_parser.add_argument("--anomaly-kind", help="Anomaly kind for the modality")
    synth_parser.add_argument("--anomaly-rate", type=float)
    synth_parser.add_argument("--no-train-anomalies", action="store_true", help="Leave the train split clean")
    synth_parser.add_argument("--suite", action="store_true", help="Write tasks for every modality")
    synth_parser.add_argument("--tasks", type=int, default=3, help="Tasks per modality with --suite")
    synth_parser.add_argument("--data-dir", default="data", help="Directory under <out>")
    synth_parser.set_defaults(func=cmd_synth)

    # prep command
    prep_parser = subparsers.add_parser("prep", parents=[common], help="Ingest manifests into the prepared cache")
    prep_parser.add_argument("manifests", nargs="*", help="Manifests (default: config manifests)")
    prep_parser.set_defaults(func=cmd_prep)

    # prep-logs command
    prep_logs_parser = subparsers.add_parser("prep-logs", parents=[common], help="Mine log templates")
    prep_logs_parser.add_argument("logs", nargs="+", help="Raw log files, one message per line")
    prep_logs_parser.add_argument("--inventory", help="Existing inventory to extend")
    prep_logs_parser.set_defaults(func=cmd_prep_logs)

    # train command
    train_parser = subparsers.add_parser("train", parents=[common], help="Train a model")
    train_parser.add_argument("--manifest", action="append", help="Manifest (repeatable; default: config)")
    train_parser.add_argument("--resume", help="Checkpoint to resume from")
    train_parser.set_defaults(func=cmd_train)

    # eval command
    eval_parser = subparsers.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    eval_parser.add_argument("--manifest", action="append", help="Manifest (repeatable; default: config)")
    eval_parser.add_argument("--metric", choices=["auroc", "f1_pa"], help="Override the modality default")
    eval_parser.add_argument("-K", type=int, help="Reference-set size (default: train.K)")
    eval_parser.add_argument("--histogram", type=int, default=0, help="Histogram bins (0 = none)")
    _model_args(eval_parser)
    eval_parser.set_defaults(func=cmd_eval)

    # score command
    score_parser = subparsers.add_parser("score", parents=[common], help="Score the samples of a dataset")
    score_parser.add_argument("--manifest", required=True, help="Dataset manifest")
    score_parser.add_argument("-K", type=int, help="Reference-set size (default: train.K)")
    score_parser.add_argument("--threshold", type=float, help="Add decision = score >= threshold")
    score_parser.add_argument("--split", choices=["test", "train"], default="test")
    _model_args(score_parser)
    score_parser.set_defaults(func=cmd_score)

    # sweep-k command
    sweep_k_parser = subparsers.add_parser("sweep-k", parents=[common], help="Metric versus reference-set size")
    sweep_k_parser.add_argument("--manifest", action="append", help="Manifest (repeatable; default: config)")
    sweep_k_parser.add_argument("--k-list", type=_int_list, default=list(DEFAULT_K_LIST))
    sweep_k_parser.add_argument("--metric", choices=["auroc", "f1_pa"])
    _model_args(sweep_k_parser)
    sweep_k_parser.set_defaults(func=cmd_sweep_k)

    # sweep-volume command
    sweep_volume_parser = subparsers.add_parser(
        "sweep-volume", parents=[common], help="Metric versus training volume"
    )
    sweep_volume_parser.add_argument("--manifest", action="append", help="Manifest (repeatable; default: config)")
    sweep_volume_parser.add_argument("--volumes", type=_int_list, required=True, help="Triplets per epoch, e.g. 64,256,1024")
    sweep_volume_parser.add_argument("--metric", choices=["auroc", "f1_pa"])
    sweep_volume_parser.set_defaults(func=cmd_sweep_volume)

    return parser


def _configure_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING)
    logger.propagate = False


def _check_args(args: argparse.Namespace) -> Optional[IcadCliError]:
    """Return the first out-of-range flag value, if any."""
    if args.seed is not None and args.seed < 0:
        return invalid_argument("--seed", str(args.seed), "must be >= 0")
    if getattr(args, "ref_seed", None) is not None and args.ref_seed < 0:
        return invalid_argument("--ref-seed", str(args.ref_seed), "must be >= 0")
    if getattr(args, "K", None) is not None and args.K < 1:
        return invalid_argument("-K", str(args.K), "must be >= 1")
    if getattr(args, "histogram", 0) < 0:
        return invalid_argument("--histogram", str(args.histogram), "must be >= 0")
    if getattr(args, "tasks", 1) < 1:
        return invalid_argument("--tasks", str(args.tasks), "must be >= 1")
    threshold = getattr(args, "threshold", None)
    if threshold is not None and not 0.0 <= threshold <= 1.0:
        return invalid_argument("--threshold", str(threshold), "scores lie in [0, 1]")
    return None


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(Path(args.config)) if args.config else RunConfig().validate()
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.output_dir = args.out
    return config


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    _configure_logging(args.verbose)
    bad_arg = _check_args(args)
    if bad_arg is not None:
        print_error(bad_arg, json_mode=args.json)
        return bad_arg.exit_code

    events = EventLog()
    try:
        config = _resolve_config(args)
        events = EventLog(_out_dir(config) / "events.jsonl")
        events.append("run_started", command=args.command, seed=config.seed)
        code = args.func(args, config, events)
        events.append("run_completed", command=args.command, exit_code=code)
        return code
    except Exception as e:
        error = from_exception(e)
        if error.code == INTERNAL_ERROR:
            logger.debug("unhandled error", exc_info=True)
        events.append("run_failed", command=args.command, code=error.code, error=error.message)
        print_error(error, json_mode=args.json)
        return error.exit_code
