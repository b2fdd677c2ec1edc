"""Command-line entry point.

Subcommands: ``synth`` (write a synthetic dataset), ``inject`` (write a
noise-corrupted label file), ``train`` (multi-seed protocol with ablation
flags), ``sweep`` (gamma/omega grid, one CSV row per cell), ``eval``
(checkpoint accuracy). Exit codes: 0 success, 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .encoder import ModelParams
from .errors import CgnnError, ConfigError
from .graph import load_dataset, write_dataset, write_label_file
from .noise import gen_synthetic, inject
from .tensor import load_params
from .trainer import evaluate, prepare_run, run_protocol

logger = logging.getLogger("cgnn")

DEFAULT_GRID = (0.6, 0.7, 0.8, 0.9, 0.95)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=str, default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override every *.seed key")
    p.add_argument("--out", type=str, default=None, help="output directory (out_dir)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgnn",
                                 description="Noise-robust graph node classification")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)

    p = sub.add_parser("inject", help="corrupt a label file with synthetic noise")
    _add_common(p)
    p.add_argument("--data", type=str, default=None, help="dataset directory (default: out)")

    p = sub.add_parser("train", help="run the multi-seed training protocol")
    _add_common(p)
    p.add_argument("--data", type=str, default=None,
                   help="dataset directory; omitted: synthesize from synth.* keys")
    p.add_argument("--no-contr", action="store_true", help="disable the contrastive term")
    p.add_argument("--no-corr", action="store_true", help="disable label correction")

    p = sub.add_parser("sweep", help="gamma/omega sensitivity grid")
    _add_common(p)
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--gammas", type=str, default=",".join(str(v) for v in DEFAULT_GRID))
    p.add_argument("--omegas", type=str, default=",".join(str(v) for v in DEFAULT_GRID))

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--checkpoint", type=str, required=True)
    return ap


def _config_from_args(args) -> ExperimentConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        for key in ("synth.seed", "noise.seed", "aug.seed", "train.seed"):
            overrides.setdefault(key, str(args.seed))
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _load_base_dataset(cfg: ExperimentConfig, data_dir):
    if data_dir is None:
        return gen_synthetic(cfg.synth_spec())
    d = Path(data_dir)
    split = d / "split.txt"
    spec = str(split) if split.exists() else f"rate={cfg['train.label_rate']},seed={cfg['train.seed']}"
    return load_dataset(d / "graph.txt", d / "attrs.bin", d / "labels.txt", spec)


def cmd_synth(cfg: ExperimentConfig) -> int:
    ds = gen_synthetic(cfg.synth_spec())
    paths = write_dataset(cfg["out_dir"], ds, write_split=False)
    logger.info("wrote %d nodes, %d edges, %d classes to %s", ds.graph.num_nodes,
                ds.graph.num_undirected_edges, ds.labels.num_classes, cfg["out_dir"])
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    return 0


def cmd_inject(cfg: ExperimentConfig, data_dir) -> int:
    data_dir = data_dir or cfg["out_dir"]
    ds = _load_base_dataset(cfg, data_dir)
    base = prepare_run(ds, cfg["train.label_rate"], None, cfg["noise.seed"])
    noise = cfg.noise_spec()
    labels = inject(base.labels, noise) if noise is not None else base.labels
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_label_file(out / "labels.txt", np.where(labels.train_mask, labels.observed, -1))
    with open(out / "split.txt", "w", encoding="utf-8") as fh:
        for node in np.flatnonzero(labels.train_mask):
            fh.write(f"{node} train\n")
        for node in np.flatnonzero(labels.test_mask):
            fh.write(f"{node} test\n")
    if labels.clean is not None:
        write_label_file(out / "labels.txt.clean", labels.clean)
    flipped = int(np.count_nonzero(
        labels.observed[labels.train_mask] != labels.clean[labels.train_mask]))
    logger.info("injected %s noise at rate %s: %d/%d train labels corrupted",
                cfg["noise.kind"], cfg["noise.rate"], flipped, int(labels.train_mask.sum()))
    return 0


def _ablation_label(no_contr: bool, no_corr: bool) -> str:
    if no_contr and no_corr:
        return "baseline"
    if no_contr:
        return "wo_contr"
    if no_corr:
        return "wo_corr"
    return "full"


def run_train(cfg: ExperimentConfig, data_dir=None, no_contr=False, no_corr=False,
              out_dir=None) -> dict:
    """The train subcommand as a library call; returns the summary dict."""
    base = _load_base_dataset(cfg, data_dir)
    train_cfg = cfg.train_config()
    if no_contr:
        train_cfg = replace(train_cfg, use_contrastive=False)
    if no_corr:
        train_cfg = replace(train_cfg, use_correction=False)
    label = _ablation_label(not train_cfg.use_contrastive, not train_cfg.use_correction)
    summary = run_protocol(base, cfg.noise_spec(), train_cfg,
                           num_runs=cfg["train.runs"], label_rate=cfg["train.label_rate"],
                           label=label, out_dir=out_dir)
    summary["config"] = cfg.echo()
    return summary


def cmd_train(cfg: ExperimentConfig, data_dir, no_contr, no_corr) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    summary = run_train(cfg, data_dir, no_contr, no_corr, out_dir=out)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps({k: summary[k] for k in ("label", "mean_acc", "std_acc")},
                     sort_keys=True))
    return 0


def cmd_sweep(cfg: ExperimentConfig, data_dir, gammas, omegas) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for gamma in gammas:
        for omega in omegas:
            cell = cfg.apply({"corr.gamma": str(gamma), "corr.omega": str(omega)})
            summary = run_train(cell, data_dir)
            rows.append((gamma, omega, summary["mean_acc"], summary["std_acc"]))
            logger.info("sweep cell gamma=%s omega=%s: %.4f +- %.4f", gamma, omega,
                        summary["mean_acc"], summary["std_acc"])
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma", "omega", "mean_acc", "std_acc"])
        writer.writerows(rows)
    means = [r[2] for r in rows]
    spread = max(means) - min(means)
    diag = {"cells": len(rows), "max_mean_acc": max(means), "min_mean_acc": min(means),
            "spread": spread}
    with open(out / "sweep_summary.json", "w", encoding="utf-8") as fh:
        json.dump(diag, fh, sort_keys=True, indent=2)
        fh.write("\n")
    logger.info("sweep spread (max - min mean accuracy): %.4f", spread)
    print(json.dumps(diag, sort_keys=True))
    return 0


def cmd_eval(cfg: ExperimentConfig, data_dir, checkpoint) -> int:
    ds = _load_base_dataset(cfg, data_dir or cfg["out_dir"])
    params = ModelParams.from_named(load_params(checkpoint))
    acc = evaluate(params, ds, ds.labels.test_mask)
    print(json.dumps({"test_acc": acc}))
    return 0


def _parse_grid(raw: str):
    try:
        values = [float(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad grid '{raw}': {e}") from e
    if not values:
        raise ConfigError(f"empty grid '{raw}'")
    return values


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "inject":
            return cmd_inject(cfg, args.data)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.no_contr, args.no_corr)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.data, _parse_grid(args.gammas), _parse_grid(args.omegas))
        if args.command == "eval":
            return cmd_eval(cfg, args.data, args.checkpoint)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return 2
    except (CgnnError, OSError) as e:
        logger.error("%s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
