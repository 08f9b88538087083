#!/usr/bin/env python3
"""
calibforge command-line interface

Trains small stochastic classifiers, evaluates their calibration, fits temperature
scaling and runs the comparison harnesses. Every command writes the resolved
configuration to ``config.json`` in its output directory before doing any work.

Usage:
    calibforge <command> [options]

Examples:
    calibforge train --loss vwci --samples 5 --epochs 100 --seed 7 --out run1/
    calibforge eval --config run1/config.json --stochastic 5
    calibforge temp --config run1/config.json --holdout holdout
    calibforge ablate-t --t-list 1,2,5,10,30 --seeds 0,1,2,3,4 --out ablation/
    calibforge compare --betas 1,0.1,0.01 --out compare/
    calibforge compare-ts --out ts/
    calibforge report run1/report.json
    calibforge presets desk

Exit codes: 0 ok, 2 configuration or data error, 3 numeric failure.
"""

import argparse
import csv
import json
import logging
import statistics
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .calib import (
    BIN_KEYS,
    CalibrationReport,
    PredictionRecord,
    apply_temperature,
    evaluate_records,
    fit_temperature,
    read_report_json,
    read_score_csv,
    records_from_probs,
    temperature_nll,
    variance_histogram,
    variance_reliability_correlation,
    write_report_json,
    write_score_csv,
)
from .config import DataSource, RunConfig, Splits, load_splits, resolve_threads
from .data import BlobsSpec, Dataset, SplitSpec, carve, load_csv
from .errors import ConfigError, DataFormatError, NumericError, ShapeError
from .loss import KL_ORIENTATIONS, LossConfig, LossKind
from .model import ModelSpec, ParameterSet, forward_logits, load_checkpoint, save_checkpoint
from .presets import get_preset, print_preset_info
from .stochastic import ALPHA_MODES, StochasticConfig, mc_predict
from .trainer import TrainConfig, TrainLog, predict_probs, train

logger = logging.getLogger("calibforge")

ANALYSIS_FORMAT_VERSION = 1
METRIC_COLUMNS = ("acc", "ece", "mce", "nll", "brier")
DEFAULT_BETAS = (1.0, 0.1, 0.01, 0.001, 0.0001)
DEFAULT_T_LIST = (1, 2, 5, 10, 30)

# Color codes for output
GREEN = "\033[92m"
RED = "\033[91m"
YELLOW = "\033[93m"
BLUE = "\033[94m"
RESET = "\033[0m"


def print_success(msg):
    print(f"{GREEN}✓ {msg}{RESET}")


def print_error(msg):
    print(f"{RED}✗ {msg}{RESET}", file=sys.stderr)


def print_warning(msg):
    print(f"{YELLOW}⚠ {msg}{RESET}")


def print_info(msg):
    print(f"{BLUE}ℹ {msg}{RESET}")


def print_header(msg):
    print(f"\n{'=' * 70}")
    print(f"  {msg}")
    print(f"{'=' * 70}\n")


# --- Argument parsing -------------------------------------------------------


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _run_options() -> argparse.ArgumentParser:
    """Flags shared by every command that builds a run; None means "from the preset"."""
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run")
    g.add_argument("--preset", help="Run preset (default: desk)")
    g.add_argument("--config", help="Replay a config.json written by an earlier command")
    g.add_argument("--out", help="Output directory (default: run/)")
    g.add_argument("--seed", type=int, help="Seed for init, batches, masks and inference")
    g.add_argument("--data-seed", type=int, help="Seed for data, label noise and split (default: --seed)")
    g.add_argument("--threads", type=int, help="Worker threads, 0 = physical cores "
                                               "(default: $CALIBFORGE_THREADS or 1)")

    g = p.add_argument_group("data")
    g.add_argument("--data", help="'blobs' or a CSV file with header f0..f{d-1},label")
    g.add_argument("--classes", type=int, help="Blobs class count C")
    g.add_argument("--per-class", type=int, help="Blobs examples per class")
    g.add_argument("--dim", type=int, help="Blobs feature dimension d")
    g.add_argument("--spread", type=float, help="Blobs centre box half-width")
    g.add_argument("--sigma", type=float, help="Blobs cluster standard deviation")
    g.add_argument("--label-noise", type=float, help="Fraction of labels flipped")
    g.add_argument("--split", type=_float_list, help="Train,holdout,test fractions")
    g.add_argument("--standardize", action="store_true", help="z-score with train statistics")

    g = p.add_argument_group("model")
    g.add_argument("--hidden", type=_int_list, help="Hidden widths, e.g. 64,64")
    g.add_argument("--keep", type=float, help="Dropout keep probability")
    g.add_argument("--blocks", type=int, help="Stochastic-depth residual blocks")
    g.add_argument("--survival", type=float, help="Residual block survival probability")

    g = p.add_argument_group("loss")
    g.add_argument("--loss", choices=[k.value for k in LossKind], help="Objective (default: baseline)")
    g.add_argument("--beta", type=float, help="CI coefficient β")
    g.add_argument("--gamma", type=float, help="Entropy-CI coefficient γ")
    g.add_argument("--weight-decay", type=float, help="L2 coefficient λ")
    g.add_argument("--samples", type=int, help="Stochastic passes T")
    g.add_argument("--alpha-mode", choices=ALPHA_MODES, help="Normalised variance form")
    g.add_argument("--alpha-grad", action="store_true", help="Differentiate through α")
    g.add_argument("--fixed-alpha", type=float, help="Use this α for every example instead of measuring it")
    g.add_argument("--grad-samples", choices=("all", "first"), help="VWCI passes carrying gradient")
    g.add_argument("--kl", choices=KL_ORIENTATIONS, help="CI KL orientation")

    g = p.add_argument_group("schedule")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--decay", type=float)
    g.add_argument("--milestones", type=_int_list)
    g.add_argument("--checkpoint-every", type=int, help="Checkpoint every k epochs")

    g = p.add_argument_group("calibration")
    g.add_argument("--bins", type=int, help="Confidence bins M (default: 20)")
    g.add_argument("--bin-key", choices=BIN_KEYS, help="Bin on max confidence or true-label score")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calibforge",
        description="Variance-weighted confidence calibration for small stochastic classifiers",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    sub = parser.add_subparsers(dest="command", required=True)
    run = _run_options()

    p = sub.add_parser("train", parents=[run], help="Train a model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[run], help="Evaluate calibration of a checkpoint")
    p.add_argument("--checkpoint", help="Model checkpoint (default: <out>/model.json)")
    p.add_argument("--on", choices=("test", "holdout", "train"), default="test", help="Split to evaluate")
    p.add_argument("--stochastic", type=int, metavar="T", help="Use the mean of T stochastic passes")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("temp", parents=[run], help="Fit temperature scaling")
    p.add_argument("--checkpoint", help="Model checkpoint (default: <out>/model.json)")
    p.add_argument("--holdout", choices=("holdout", "train"), default="holdout",
                   help="Calibration set: the holdout split, or the training split itself")
    p.add_argument("--logits", help="Fit on a logits.csv dump instead of a checkpoint")
    p.add_argument("--apply-to", help="Logits dump to evaluate after fitting (with --logits)")
    p.set_defaults(func=cmd_temp)

    p = sub.add_parser("ablate-t", parents=[run], help="VWCI calibration against the sample count T")
    p.add_argument("--t-list", type=_int_list, default=DEFAULT_T_LIST, help="Sample counts (default: 1,2,5,10,30)")
    p.add_argument("--seeds", type=_int_list, default=(0, 1, 2, 3, 4), help="Training seeds (default: 0..4)")
    p.set_defaults(func=cmd_ablate_t)

    p = sub.add_parser("compare", parents=[run], help="Baseline, CI over a β grid, and VWCI")
    p.add_argument("--betas", type=_float_list, default=DEFAULT_BETAS, help="CI β grid")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("compare-ts", parents=[run], help="Temperature scaling scenarios against VWCI")
    p.add_argument("--calib-fraction", type=float, default=0.1,
                   help="Share of the training split held out for calibration in case 2")
    p.set_defaults(func=cmd_compare_ts)

    p = sub.add_parser("report", help="Print a calibration report JSON")
    p.add_argument("path", help="report.json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("presets", help="List run presets")
    p.add_argument("name", nargs="?", help="Show a single preset")
    p.set_defaults(func=cmd_presets)
    return parser


def _pick(value, default):
    return default if value is None else value


def loss_config_from_args(args, samples: int, weight_decay: float) -> LossConfig:
    kind = args.loss or LossKind.BASELINE.value
    if kind == LossKind.CI.value and args.beta is None:
        raise ConfigError("--loss ci requires --beta")
    if kind == LossKind.ENTROPY_CI.value and args.gamma is None:
        raise ConfigError("--loss entropy-ci requires --gamma")
    return LossConfig(
        kind=kind,
        beta=_pick(args.beta, 0.0),
        gamma=_pick(args.gamma, 0.0),
        weight_decay=_pick(args.weight_decay, weight_decay),
        samples=_pick(args.samples, samples),
        alpha_mode=args.alpha_mode or ALPHA_MODES[0],
        detach_alpha=not args.alpha_grad,
        grad_all_samples=args.grad_samples != "first",
        alpha_override=args.fixed_alpha,
        kl_orientation=args.kl or KL_ORIENTATIONS[0],
    )


# Flags that still apply on top of a replayed config.json
REPLAY_FLAGS = ("config", "out", "threads")


def _replay_conflicts(args) -> List[str]:
    """Run flags given alongside --config; the replayed config would silently ignore them."""
    dests = [a.dest for a in _run_options()._actions if a.dest not in REPLAY_FLAGS]
    return ["--" + d.replace("_", "-") for d in dests if getattr(args, d, None) not in (None, False)]


def resolve_run_config(args) -> RunConfig:
    """Merge the preset, then flags, into a fully resolved RunConfig (or replay --config)."""
    threads = resolve_threads(args.threads)
    if args.config:
        conflicts = _replay_conflicts(args)
        if conflicts:
            raise ConfigError(f"--config replays a run exactly; drop {', '.join(conflicts)}")
        run = RunConfig.read_json(args.config)
        overrides = {}
        if args.out:
            overrides["out_dir"] = args.out
        if args.threads is not None:
            overrides["threads"] = threads
            overrides["train"] = replace(run.train, stochastic=replace(run.stochastic, threads=threads))
        return replace(run, **overrides) if overrides else run

    p = get_preset(args.preset or "desk")
    seed = _pick(args.seed, 0)
    data_seed = _pick(args.data_seed, seed)
    loss = loss_config_from_args(args, p.samples, p.weight_decay)

    if args.data in (None, "blobs"):
        blobs = BlobsSpec(
            num_classes=_pick(args.classes, p.blobs.num_classes),
            per_class=_pick(args.per_class, p.blobs.per_class),
            dim=_pick(args.dim, p.blobs.dim),
            spread=_pick(args.spread, p.blobs.spread),
            sigma=_pick(args.sigma, p.blobs.sigma),
        )
        source = DataSource("blobs", blobs=blobs, label_noise=_pick(args.label_noise, p.label_noise),
                            standardize=args.standardize)
        input_dim, num_classes = blobs.dim, blobs.num_classes
    else:
        source = DataSource("csv", path=args.data, label_noise=_pick(args.label_noise, 0.0),
                            standardize=args.standardize)
        ds = load_csv(args.data)
        input_dim, num_classes = ds.dim, ds.num_classes

    if args.split:
        if len(args.split) != 3:
            raise ConfigError("--split needs three fractions: train,holdout,test")
        split_spec = SplitSpec(*args.split, seed=data_seed)
    elif source.kind == "csv":
        split_spec = SplitSpec(0.8, 0.1, 0.1, seed=data_seed)
    else:
        split_spec = SplitSpec.from_sizes(*p.split_sizes, seed=data_seed)

    return RunConfig(
        model=ModelSpec(
            input_dim=input_dim,
            num_classes=num_classes,
            hidden=_pick(args.hidden, p.hidden),
            keep_prob=_pick(args.keep, p.keep_prob),
            residual_blocks=_pick(args.blocks, p.residual_blocks),
            survival_prob=_pick(args.survival, p.survival_prob),
        ),
        train=TrainConfig(
            epochs=_pick(args.epochs, p.epochs),
            batch_size=_pick(args.batch_size, p.batch_size),
            lr=_pick(args.lr, p.lr),
            momentum=_pick(args.momentum, p.momentum),
            decay=_pick(args.decay, p.decay),
            milestones=_pick(args.milestones, p.milestones),
            loss=loss,
            stochastic=StochasticConfig(samples=loss.samples, seed=seed, threads=threads),
            seed=seed,
            checkpoint_every=_pick(args.checkpoint_every, 0),
        ),
        split=split_spec,
        source=source,
        data_seed=data_seed,
        out_dir=args.out or "run",
        threads=threads,
        bins=_pick(args.bins, 20),
        bin_key=args.bin_key or "max",
    )


# --- Shared steps -----------------------------------------------------------


def _prepare(args) -> Tuple[RunConfig, Path]:
    run = resolve_run_config(args)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.write_json(out / "config.json")
    return run, out


def _records(probs: np.ndarray, ds: Dataset) -> List[PredictionRecord]:
    return records_from_probs(probs, ds.y, ds.ids)


def _evaluate(run: RunConfig, probs: np.ndarray, ds: Dataset) -> CalibrationReport:
    return evaluate_records(_records(probs, ds), run.bins, run.bin_key)


def _logits(params: ParameterSet, ds: Dataset) -> np.ndarray:
    return forward_logits(ds.x, params).data


def fit_and_evaluate(run: RunConfig, train_set: Dataset, test_set: Dataset
                     ) -> Tuple[ParameterSet, TrainLog, CalibrationReport]:
    """Train under ``run`` and evaluate the deterministic predictions on ``test_set``."""
    params, log = train(run.model, train_set, run.train)
    report = _evaluate(run, predict_probs(params, test_set.x), test_set)
    return params, log, report


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _write_json(path: Path, doc: Dict) -> Path:
    doc = {"format_version": ANALYSIS_FORMAT_VERSION, **doc}
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def _metric_row(report: CalibrationReport) -> List[float]:
    m = report.metrics()
    return [m[c] for c in METRIC_COLUMNS]


def _split_of(splits: Splits, name: str) -> Dataset:
    return {"train": splits.train, "holdout": splits.holdout, "test": splits.test}[name]


def _load_params(args, run: RunConfig) -> ParameterSet:
    path = Path(args.checkpoint) if args.checkpoint else Path(run.out_dir) / "model.json"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params = load_checkpoint(path)
    if params.spec.input_dim != run.model.input_dim or params.spec.num_classes != run.model.num_classes:
        raise ConfigError(f"{path} does not match the configured data dimensions")
    return params


def _print_metrics(label: str, report: CalibrationReport) -> None:
    m = report.metrics()
    print_info(f"{label:<14} acc {m['acc']:.4f}  ece {m['ece']:.4f}  mce {m['mce']:.4f}  "
               f"nll {m['nll']:.4f}  brier {m['brier']:.4f}")


# --- Commands ---------------------------------------------------------------


def cmd_train(args) -> int:
    run, out = _prepare(args)
    splits = load_splits(run)
    print_header(f"Training {run.loss.kind.value} on {len(splits.train)} examples")
    params, log = train(run.model, splits.train, run.train,
                        checkpoint_dir=out if run.train.checkpoint_every else None)
    save_checkpoint(out / "model.json", params, epoch=run.train.epochs, loss=run.loss.kind.value)
    log.write_csv(out / "trainlog.csv")
    if log.entries:
        last = log.entries[-1]
        print_success(f"final epoch: loss {last.loss:.4f}, train acc {last.acc:.4f}")
    print_success(f"wrote {out / 'model.json'}, {out / 'trainlog.csv'}, {out / 'config.json'}")
    return 0


def cmd_eval(args) -> int:
    run, out = _prepare(args)
    params = _load_params(args, run)
    ds = _split_of(load_splits(run), args.on)
    logits = _logits(params, ds)

    extra: Dict = {"split": args.on, "mode": "deterministic"}
    if args.stochastic is not None:
        cfg = StochasticConfig(samples=args.stochastic, seed=run.seed, threads=run.threads)
        preds = mc_predict(ds.x, params, cfg, example_ids=ds.ids)
        probs = preds.mean()
        extra.update(mode="stochastic", samples=args.stochastic)
    else:
        probs = predict_probs(params, ds.x)

    report = _evaluate(run, probs, ds)
    write_score_csv(out / "predictions.csv", ds.ids, ds.y, probs, column="score")
    write_score_csv(out / "logits.csv", ds.ids, ds.y, logits, column="logit")
    write_report_json(out / "report.json", report, **extra)

    if args.stochastic is not None:
        records = _records(probs, ds)
        alphas = preds.alpha(run.loss.alpha_mode)
        _write_rows(out / "alphas.csv", ("id", "alpha", "correct", "confidence"),
                    [(r.example_id, float(a), int(r.correct), r.confidence) for r, a in zip(records, alphas)])
        rho = variance_reliability_correlation(alphas, records)
        hist = variance_histogram(alphas, records, n_bins=10)
        _write_json(out / "variance_histogram.json", {
            "samples": args.stochastic,
            "alpha_mode": run.loss.alpha_mode,
            "spearman": None if np.isnan(rho) else rho,
            "bins": [asdict(b) for b in hist],
        })
        print_info(f"spearman(alpha, correct) = {rho:.4f}")

    _print_metrics(f"{args.on} ({extra['mode']})", report)
    print_success(f"wrote {out / 'report.json'}")
    return 0


def cmd_temp(args) -> int:
    run, out = _prepare(args)
    if args.logits:
        _, y_cal, z_cal = read_score_csv(args.logits)
        cal_ids = np.arange(len(y_cal))
        test = read_score_csv(args.apply_to) if args.apply_to else None
    else:
        params = _load_params(args, run)
        splits = load_splits(run)
        cal = _split_of(splits, args.holdout)
        z_cal, y_cal, cal_ids = _logits(params, cal), cal.y, cal.ids
        test = (splits.test.ids, splits.test.y, _logits(params, splits.test))
    if len(y_cal) == 0:
        raise ConfigError("the calibration set is empty")

    tau = fit_temperature(z_cal, y_cal)
    before, after = temperature_nll(z_cal, y_cal, 1.0), temperature_nll(z_cal, y_cal, tau.tau)
    doc: Dict = {"tau": tau.tau, "n_holdout": int(len(y_cal)), "holdout_nll_before": before,
                 "holdout_nll_after": after}

    reports = {
        "holdout_before": evaluate_records(records_from_probs(apply_temperature(z_cal, 1.0), y_cal, cal_ids),
                                           run.bins, run.bin_key),
        "holdout_after": evaluate_records(records_from_probs(apply_temperature(z_cal, tau), y_cal, cal_ids),
                                          run.bins, run.bin_key),
    }
    if test is not None:
        ids, y, z = test
        reports["test_before"] = evaluate_records(records_from_probs(apply_temperature(z, 1.0), y, ids),
                                                  run.bins, run.bin_key)
        reports["test_after"] = evaluate_records(records_from_probs(apply_temperature(z, tau), y, ids),
                                                 run.bins, run.bin_key)
        write_score_csv(out / "predictions_ts.csv", ids, y, apply_temperature(z, tau))
    for name, report in reports.items():
        write_report_json(out / f"report_{name}.json", report)
    _write_json(out / "temperature.json", doc)

    print_info(f"tau = {tau.tau:.4f}  holdout nll {before:.4f} -> {after:.4f}")
    for name, report in reports.items():
        _print_metrics(name, report)
    print_success(f"wrote {out / 'temperature.json'}")
    return 0


def cmd_ablate_t(args) -> int:
    run, out = _prepare(args)
    if not args.t_list or not args.seeds:
        raise ConfigError("--t-list and --seeds must name at least one value")
    splits = load_splits(run)
    base = replace(run.loss, kind=LossKind.VWCI)
    per_run, summary = [], []
    for T in args.t_list:
        print_header(f"T = {T}")
        reports = []
        for seed in args.seeds:
            cfg = run.with_seed(seed).with_loss(replace(base, samples=T))
            _, _, report = fit_and_evaluate(cfg, splits.train, splits.test)
            reports.append(report)
            per_run.append([T, seed] + _metric_row(report))
            _print_metrics(f"seed {seed}", report)
        medians = {c: statistics.median(r.metrics()[c] for r in reports) for c in METRIC_COLUMNS}
        summary.append([T, medians["ece"], medians["mce"], medians["nll"], medians["brier"], medians["acc"]])

    _write_rows(out / "ablation.csv", ("T", "ece", "mce", "nll", "brier", "acc"), summary)
    _write_rows(out / "ablation_runs.csv", ("T", "seed") + METRIC_COLUMNS, per_run)
    print_success(f"wrote {out / 'ablation.csv'} ({len(summary)} rows)")
    return 0


def oracle_row(rows: Sequence[Sequence[float]]) -> List[float]:
    """Most favourable value per column: highest accuracy, lowest of every error metric."""
    cols = list(zip(*rows))
    return [max(cols[0])] + [min(c) for c in cols[1:]]


def cmd_compare(args) -> int:
    run, out = _prepare(args)
    if not args.betas:
        raise ConfigError("--betas must name at least one value")
    splits = load_splits(run)
    rows: List[list] = []

    def record(method: str, beta, loss: LossConfig) -> List[float]:
        _, _, report = fit_and_evaluate(run.with_loss(loss), splits.train, splits.test)
        _print_metrics(method if beta is None else f"{method}[{beta:g}]", report)
        rows.append([method, "" if beta is None else beta] + _metric_row(report))
        return _metric_row(report)

    print_header("Baseline, CI and VWCI on one split")
    record("baseline", None, replace(run.loss, kind=LossKind.BASELINE))
    ci_rows = [record("ci", b, replace(run.loss, kind=LossKind.CI, beta=b)) for b in args.betas]
    record("vwci", None, replace(run.loss, kind=LossKind.VWCI))

    cols = list(zip(*ci_rows))
    summary = {
        "ci_mean": dict(zip(METRIC_COLUMNS, (float(np.mean(c)) for c in cols))),
        "ci_std": dict(zip(METRIC_COLUMNS, (float(np.std(c)) for c in cols))),
        "ci_oracle": dict(zip(METRIC_COLUMNS, oracle_row(ci_rows))),
        "betas": list(args.betas),
    }
    _write_rows(out / "compare.csv", ("method", "beta") + METRIC_COLUMNS, rows)
    _write_json(out / "compare_summary.json", summary)
    for name in ("ci_mean", "ci_std", "ci_oracle"):
        print_info(name + "  " + "  ".join(f"{c} {summary[name][c]:.4f}" for c in METRIC_COLUMNS))
    print_success(f"wrote {out / 'compare.csv'}")
    return 0


def cmd_compare_ts(args) -> int:
    run, out = _prepare(args)
    splits = load_splits(run)
    test = splits.test
    baseline = run.with_loss(replace(run.loss, kind=LossKind.BASELINE))
    rows = []

    def scaled(params: ParameterSet, cal: Dataset):
        tau = fit_temperature(_logits(params, cal), cal.y)
        report = _evaluate(run, apply_temperature(_logits(params, test), tau), test)
        return report, tau.tau

    print_header("Case 1: calibrate on the training split")
    params, _, report = fit_and_evaluate(baseline, splits.train, test)
    rows.append(["baseline"] + _metric_row(report) + [1.0])
    report, tau = scaled(params, splits.train)
    rows.append(["ts-case1"] + _metric_row(report) + [tau])

    print_header("Case 2: calibrate on a held-out share of the training split")
    rest, cal = carve(splits.train, args.calib_fraction, run.data_seed)
    params, _, _ = fit_and_evaluate(baseline, rest, test)
    report, tau = scaled(params, cal)
    rows.append(["ts-case2"] + _metric_row(report) + [tau])

    print_header("VWCI without post-processing")
    _, _, report = fit_and_evaluate(run.with_loss(replace(run.loss, kind=LossKind.VWCI)), splits.train, test)
    rows.append(["vwci"] + _metric_row(report) + [1.0])

    _write_rows(out / "compare_ts.csv", ("method",) + METRIC_COLUMNS + ("tau",), rows)
    for row in rows:
        print_info(f"{row[0]:<10} " + "  ".join(f"{c} {v:.4f}" for c, v in zip(METRIC_COLUMNS + ("tau",), row[1:])))
    print_success(f"wrote {out / 'compare_ts.csv'}")
    return 0


def format_reliability_table(report: CalibrationReport, width: int = 30) -> List[str]:
    """ASCII reliability diagram: one line per nonempty bin, bar length = accuracy."""
    lines = [f"  {'bin':<13} {'count':>7} {'acc':>7} {'conf':>7} {'gap':>7}"]
    for b in report.bins:
        if not b.count:
            continue
        bar = "#" * int(round(b.acc * width))
        lines.append(f"  ({b.lo:.2f}, {b.hi:.2f}] {b.count:>7d} {b.acc:>7.3f} {b.conf:>7.3f} "
                     f"{b.gap:>7.3f} |{bar:<{width}}|")
    return lines


def cmd_report(args) -> int:
    report = read_report_json(args.path)
    print_header(f"Calibration report: {args.path}")
    print(f"  examples      {report.n}")
    print(f"  bin key       {report.bin_key}")
    for name, value in report.metrics().items():
        print(f"  {name:<13} {value:.4f}")
    print(f"  nll (sum)     {report.nll_sum:.4f}")
    print(f"  brier (sum)   {report.brier_sum:.4f}\n")
    for line in format_reliability_table(report):
        print(line)
    print("\n  coverage: " + "  ".join(f"{t:.2f}:{f:.3f}" for t, f in report.coverage[::4]))
    if report.ece > 0.1:
        print_warning(f"ECE {report.ece:.3f} is above 0.1")
    return 0


def cmd_presets(args) -> int:
    print_preset_info(args.name)
    return 0


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    logger.debug("running %s", args.command)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, ShapeError, FileNotFoundError) as e:
        print_error(str(e))
        return 2
    except NumericError as e:
        print_error(str(e))
        return 3


if __name__ == "__main__":
    sys.exit(main())
