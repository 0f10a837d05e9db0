# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Command-line interface

Subcommands: simulate, import, fit, predict, eval, intensity, kernel,
ablate-quad. Data goes to stdout (JSON lines); logs go to stderr. Any failure
prints a single JSON line ``{"error": <code>, "message": <text>}`` to stderr
and exits with status 1.
"""

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO

import numpy as np
import pandas as pd
import torch

from core.checkpoint import load_checkpoint, save_checkpoint
from core.config import MODEL_KINDS, RunConfig, load_run_config
from core.dataset_io import DatasetManifest, import_splits, load_dataset, save_dataset
from core.errors import CheckpointError, ConfigError, KstppError, MetricError, TrainingAborted
from core.events import Domain, EventSequence, PointProcessModel
from core.metrics import (
    DEFAULT_GRID,
    DEFAULT_INTERIOR,
    aggregate_runs,
    build_probe_set,
    grid_intensity,
    influence_sign_summary,
    prediction_errors,
    probe_times,
    quadrature_ablation,
    spatiotemporal_intensity_error,
    temporal_intensity_error,
)
from core.model import KstppModel, influence_slice, offset_grid
from core.plugin_manager import get_plugin_manager
from core.predict import marginal_on_times, predict_dataset
from core.quadrature import DEFAULT_IMPROPER_ORDER, grid_cell_centers
from core.simulate import SynthConfig, load_synth_preset, make_dataset
from core.tensor_kron import DTYPE
from core.train import write_training_log
from utils.config_manager import ConfigurationManager
from utils.logger import cleanup_old_logs, logger, set_log_level

PROG = "kstpp"


def _emit(record: Dict[str, Any], out: Optional[TextIO] = None) -> None:
    (out or sys.stdout).write(json.dumps(record) + "\n")


def _emit_all(records: Iterable[Dict[str, Any]], path: Optional[str]) -> None:
    if path is None:
        for record in records:
            _emit(record)
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        for record in records:
            _emit(record, f)
    logger.info(f"[CLI] Wrote {target}")


def _parse_orders(text: str) -> List[int]:
    try:
        orders = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got '{text}'")
    if len(orders) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got '{text}'")
    return orders


def _limit(sequences: List[EventSequence], limit: Optional[int]) -> List[EventSequence]:
    return sequences if limit is None else sequences[:limit]


# ---------------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.config:
        data = ConfigurationManager.load_required_json(args.config)
        try:
            cfg = SynthConfig.model_validate(data)
        except Exception as e:
            raise ConfigError(f"invalid synthetic config {args.config}: {e}") from e
    else:
        cfg = load_synth_preset(args.preset)
    splits = make_dataset(cfg, args.train, args.val, args.test, args.seed, output_dir=args.output)
    _emit(
        {
            "output": str(args.output),
            "seed": args.seed,
            "splits": {name: {"sequences": len(seqs), "events": sum(len(s) for s in seqs)} for name, seqs in splits.items()},
        }
    )
    return 0


# ---------------------------------------------------------------------- import


def cmd_import(args: argparse.Namespace) -> int:
    files = {split: path for split, path in (("train", args.train), ("validation", args.val), ("test", args.test)) if path}
    if not files:
        raise ConfigError("import needs at least one of --train, --val, --test")
    domain = None
    if args.t_max is not None and args.x_range and args.y_range:
        domain = Domain(t_max=args.t_max, x_range=tuple(args.x_range), y_range=tuple(args.y_range))
    imported, domain = import_splits(files, domain=domain, columns=tuple(args.columns), t_max=args.t_max)
    for split, sequences in imported.items():
        manifest = DatasetManifest(
            domain=domain,
            generator={"source": str(files[split])},
            split=split,
            count=len(sequences),
        )
        save_dataset(args.output, split, sequences, manifest)
    _emit(
        {
            "output": str(args.output),
            "domain": domain.model_dump(mode="json"),
            "splits": {split: len(seqs) for split, seqs in imported.items()},
        }
    )
    return 0


# ---------------------------------------------------------------------- fit


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config, kind=args.kind)
    paths = {}
    if args.train:
        paths["train"] = args.train
    if args.val:
        paths["validation"] = args.val
    if args.output:
        paths["output_dir"] = args.output
    if paths:
        config = config.model_copy(update={"paths": config.paths.model_copy(update=paths)})
    if args.seed is not None:
        config = config.model_copy(update={"optimizer": config.optimizer.model_copy(update={"seed": args.seed})})
    if config.paths.train is None:
        raise ConfigError("invalid config field 'paths.train': no training dataset given (--train or KSTPP_TRAIN_PATH)")
    return config


def cmd_fit(args: argparse.Namespace) -> int:
    if args.repeats < 1:
        raise ConfigError(f"--repeats must be >= 1, got {args.repeats}")
    config = _resolve_run_config(args)
    train, manifest = load_dataset(config.paths.train, split="train")
    validation = None
    if config.paths.validation:
        validation, _ = load_dataset(config.paths.validation, split="validation")
    domain = manifest.domain
    plugin = get_plugin_manager().get_plugin(config.model_kind)
    output_dir = Path(config.paths.output_dir)
    base_seed = config.optimizer.seed

    for r in range(args.repeats):
        seed = base_seed + r
        run_config = config.model_copy(update={"optimizer": config.optimizer.model_copy(update={"seed": seed})})
        run_dir = output_dir / f"run_{r}" if args.repeats > 1 else output_dir
        logger.info(f"[CLI] 🚀 Fit {r + 1}/{args.repeats}: kind={config.model_kind} seed={seed} -> {run_dir}")
        try:
            result = plugin.fit(train, validation, run_config, domain)
        except TrainingAborted as e:
            write_training_log(e.log, run_dir / "train_log.jsonl")
            if e.checkpoint is not None:
                last_good = plugin.load(e.checkpoint, domain)
                save_checkpoint(last_good, run_dir / "checkpoint.aborted.json", {"seed": seed, "aborted": str(e)})
            raise
        metadata = {
            "run_config": run_config.model_dump(mode="json"),
            "seed": seed,
            "train": str(config.paths.train),
            "validation": config.paths.validation,
            "best_epoch": result.best_epoch,
            "best_validation": result.best_validation,
            "stopped_early": result.stopped_early,
        }
        checkpoint_path = save_checkpoint(result.model, run_dir / "checkpoint.json", metadata)
        write_training_log(result.log, run_dir / "train_log.jsonl")
        _emit(
            {
                "run": r,
                "seed": seed,
                "checkpoint": str(checkpoint_path),
                "steps": len(result.log),
                "best_validation": result.best_validation,
            }
        )
    return 0


# ---------------------------------------------------------------------- predict


def cmd_predict(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    sequences, _ = load_dataset(args.data, split=args.split)
    records = predict_dataset(model, _limit(sequences, args.limit), n=args.order)
    _emit_all(records, args.output)
    return 0


# ---------------------------------------------------------------------- eval


def _resolve_truth(source: Optional[str], manifest: DatasetManifest) -> Optional[Any]:
    """A preset name, a checkpoint path, or the generator echoed in the manifest"""
    if source is None:
        if manifest.generator and "c_rule" in manifest.generator:
            return SynthConfig.model_validate(manifest.generator)
        return None
    if Path(source).exists():
        truth, _ = load_checkpoint(source)
        return truth
    return load_synth_preset(source)


def _read_predictions(path: str) -> pd.DataFrame:
    if not Path(path).exists():
        raise MetricError(f"predictions file not found: {path}")
    return pd.read_json(path, orient="records", lines=True)


def _eval_checkpoint(args: argparse.Namespace, model: PointProcessModel, sequences, truth) -> Dict[str, Any]:
    row: Dict[str, Any] = {}
    if truth is not None:
        probes = build_probe_set(sequences, model.domain.t_max, args.interior, args.grid_size)
        row["temporal_error"], row["temporal_error_std"] = temporal_intensity_error(model, truth, sequences, probes)
        row["spatiotemporal_error"], row["spatiotemporal_error_std"] = spatiotemporal_intensity_error(
            model, truth, sequences, probes
        )
    if args.predict:
        row["time_rmse"], row["euclid_mean"] = prediction_errors(predict_dataset(model, sequences, n=args.order))
    return row


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.predictions and not args.checkpoint:
        raise ConfigError("eval needs --predictions or --checkpoint")
    rows: List[Dict[str, Any]] = []

    for path in args.predictions or []:
        rmse, euclid = prediction_errors(_read_predictions(path))
        rows.append({"source": path, "time_rmse": rmse, "euclid_mean": euclid})

    if args.checkpoint:
        if not args.data:
            raise ConfigError("eval --checkpoint needs --data")
        sequences, manifest = load_dataset(args.data, split=args.split)
        sequences = _limit(sequences, args.limit)
        truth = _resolve_truth(args.truth, manifest)
        if truth is None and not args.predict:
            raise MetricError("no ground truth: pass --truth, use a simulated dataset, or add --predict")
        for path in args.checkpoint:
            model, _ = load_checkpoint(path)
            rows.append({"source": path, "model_kind": model.KIND, **_eval_checkpoint(args, model, sequences, truth)})

    for row in rows:
        _emit(row)
    if len(rows) > 1:
        _emit({"aggregate": aggregate_runs(rows)})
    if args.xlsx:
        target = Path(args.xlsx)
        target.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_excel(target, index=False, engine="openpyxl")
        logger.info(f"[EVAL] ✅ Metric table written to {target}")
    for row in rows:
        summary = ", ".join(f"{k}={v:.4g}" for k, v in row.items() if isinstance(v, float))
        logger.info(f"[EVAL] {row['source']}: {summary}")
    return 0


# ---------------------------------------------------------------------- intensity / kernel


def cmd_intensity(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    sequences, _ = load_dataset(args.data, split=args.split)
    if not 0 <= args.sequence < len(sequences):
        raise ConfigError(f"sequence index {args.sequence} out of range (dataset holds {len(sequences)})")
    seq = sequences[args.sequence]
    if args.times:
        ts_np = np.sort(np.asarray(args.times, dtype=np.float64))
    else:
        ts_np = probe_times(seq, model.domain.t_max, args.interior)
    ts = torch.as_tensor(ts_np, dtype=DTYPE)
    xs = grid_cell_centers(*model.domain.x_range, args.grid_size)
    ys = grid_cell_centers(*model.domain.y_range, args.grid_size)
    grid = grid_intensity(model, ts, xs, ys, seq)
    marginal = marginal_on_times(model, ts, seq)
    _emit(
        {
            "sequence": args.sequence,
            "t": ts_np.tolist(),
            "x": xs.tolist(),
            "y": ys.tolist(),
            "intensity": grid.tolist(),
            "marginal": marginal.tolist(),
        }
    )
    return 0


def _kstpp_checkpoint(path: str) -> KstppModel:
    model, _ = load_checkpoint(path)
    if not isinstance(model, KstppModel):
        raise CheckpointError(f"{path} holds a {model.KIND} model; this command needs a kstpp checkpoint")
    return model


def cmd_kernel(args: argparse.Namespace) -> int:
    model = _kstpp_checkpoint(args.checkpoint)
    dx, dy = offset_grid(model, args.size)
    for lag in args.lags:
        record = {"lag": lag, "dx": dx.tolist(), "dy": dy.tolist(), "values": influence_slice(model, lag, dx, dy).tolist()}
        if args.threshold is not None:
            record["near_mean"], record["far_mean"] = influence_sign_summary(model, lag, args.threshold, args.size)
        _emit(record)
    return 0


def cmd_ablate_quad(args: argparse.Namespace) -> int:
    model = _kstpp_checkpoint(args.checkpoint)
    sequences, _ = load_dataset(args.data, split=args.split)
    for row in quadrature_ablation(model, _limit(sequences, args.limit), args.orders):
        _emit(row)
    return 0


# ---------------------------------------------------------------------- parser


def _run_defaults() -> Dict[str, int]:
    """Subcommand defaults from ``run_defaults`` in config/app_config.json"""
    configured = ConfigurationManager.load_run_defaults()
    return {
        "improper_order": int(configured.get("improper_order", DEFAULT_IMPROPER_ORDER)),
        "probe_interior": int(configured.get("probe_interior", DEFAULT_INTERIOR)),
        "probe_grid": int(configured.get("probe_grid", DEFAULT_GRID)),
    }


def build_parser() -> argparse.ArgumentParser:
    defaults = _run_defaults()
    parser = argparse.ArgumentParser(prog=PROG, description="Kronecker-structured spatiotemporal point processes")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset by thinning")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--preset", default="syn1", help="preset name under config/presets (default: syn1)")
    source.add_argument("--config", help="JSON file holding a synthetic process config")
    p.add_argument("--train", type=int, default=0, help="number of training sequences")
    p.add_argument("--val", type=int, default=0, help="number of validation sequences")
    p.add_argument("--test", type=int, default=0, help="number of test sequences")
    p.add_argument("--seed", type=int, default=0, help="root seed of all splits")
    p.add_argument("--output", default="data", help="dataset directory")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("import", help="convert external benchmark files to the dataset layout")
    p.add_argument("--train", help="external training file (JSON or pickle)")
    p.add_argument("--val", help="external validation file")
    p.add_argument("--test", help="external test file")
    p.add_argument("--output", required=True, help="dataset directory")
    p.add_argument("--columns", type=int, nargs=3, default=[0, 1, 2], metavar=("T", "X", "Y"), help="column indices of t, x, y")
    p.add_argument("--t-max", type=float, help="observation window end (default: latest event)")
    p.add_argument("--x-range", type=float, nargs=2, metavar=("LO", "HI"), help="spatial x range (default: inferred)")
    p.add_argument("--y-range", type=float, nargs=2, metavar=("LO", "HI"), help="spatial y range (default: inferred)")
    p.set_defaults(handler=cmd_import)

    p = sub.add_parser("fit", help="fit a model and write its checkpoint and training log")
    p.add_argument("--config", help="run config JSON (merged over the model kind's defaults)")
    p.add_argument("--kind", choices=MODEL_KINDS, help="model kind (default: from the config, else kstpp)")
    p.add_argument("--train", help="training split (file or dataset directory)")
    p.add_argument("--val", help="validation split for early stopping")
    p.add_argument("--output", help="output directory")
    p.add_argument("--seed", type=int, help="optimizer seed (overrides the config)")
    p.add_argument("--repeats", type=int, default=1, help="fit R times with seeds seed..seed+R-1")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("predict", help="one-step-ahead next-event predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset file or directory")
    p.add_argument("--split", default="test")
    p.add_argument("--order", type=int, default=defaults["improper_order"], help="outer Gauss-Legendre order")
    p.add_argument("--limit", type=int, help="use only the first N sequences")
    p.add_argument("--output", help="JSON-lines file (default: stdout)")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", help="metric tables from predictions or checkpoints")
    p.add_argument("--predictions", nargs="+", help="prediction JSON-lines files (one per run)")
    p.add_argument("--checkpoint", nargs="+", help="checkpoints (one per run)")
    p.add_argument("--data", help="dataset file or directory for checkpoint evaluation")
    p.add_argument("--split", default="test")
    p.add_argument("--truth", help="preset name or checkpoint of the true process (default: dataset generator)")
    p.add_argument("--predict", action="store_true", help="also run next-event prediction metrics")
    p.add_argument("--order", type=int, default=defaults["improper_order"])
    p.add_argument("--interior", type=int, default=defaults["probe_interior"], help="probe points per inter-event gap")
    p.add_argument("--grid-size", type=int, default=defaults["probe_grid"], help="spatial probe grid side")
    p.add_argument("--limit", type=int, help="use only the first N sequences")
    p.add_argument("--xlsx", help="also write the table to an Excel workbook")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("intensity", help="intensity grids of one sequence for external plotting")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--sequence", type=int, default=0, help="sequence index")
    p.add_argument("--times", type=float, nargs="+", help="probe times (default: the probe set)")
    p.add_argument("--interior", type=int, default=defaults["probe_interior"])
    p.add_argument("--grid-size", type=int, default=defaults["probe_grid"])
    p.set_defaults(handler=cmd_intensity)

    p = sub.add_parser("kernel", help="learned influence kernel slices f(lag, dx, dy)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lags", type=float, nargs="+", default=[0.5])
    p.add_argument("--size", type=int, default=32, help="offset grid side")
    p.add_argument("--threshold", type=float, help="also report mean f nearer/farther than this distance")
    p.set_defaults(handler=cmd_kernel)

    p = sub.add_parser("ablate-quad", help="mean log-likelihood under several quadrature orders")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--orders", type=_parse_orders, nargs="+", default=[[4, 4, 4], [8, 8, 8], [12, 12, 12]])
    p.add_argument("--limit", type=int)
    p.set_defaults(handler=cmd_ablate_quad)

    return parser


def _report_error(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.verbose:
        set_log_level(logging.DEBUG)
    cleanup_old_logs()
    logger.info(f"[CLI] {PROG} {args.command}")

    try:
        return args.handler(args)
    except KstppError as e:
        logger.error(f"[CLI] ❌ {args.command} failed: {e}")
        return _report_error(e.code, str(e))
    except Exception as e:
        logger.error(f"[CLI] ❌ {args.command} failed with error : {e} - {traceback.format_exc()}")
        return _report_error("internal_error", str(e))
