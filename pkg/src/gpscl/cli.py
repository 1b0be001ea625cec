"""Command-line driver: ``gpscl {pretrain,embed,probe,cluster,sweep}``.

Option precedence is command-line flag > ``--config`` file entry > default.
The config file is flat ``key=value`` text using the flag names
(``rho-weak=0.9`` or ``rho_weak=0.9``); ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import ConfigError, FormatError, GpsError
from .evaluation import EmbeddingTable, cluster_eval, read_embeddings, repeated_probe, write_embeddings
from .graphs import DEFAULT_MAX_DEGREE, load_dataset
from .trainer import ABLATIONS, POOLERS, TrainConfig, embed_dataset, load_checkpoint, pretrain

DEFAULTS = {
    "dataset": None,
    "name": None,
    "synth": None,
    "per_class": 40,
    "min_nodes": 6,
    "max_nodes": 12,
    "max_degree": DEFAULT_MAX_DEGREE,
    "data_seed": 0,
    "epochs": 50,
    "batch": 128,
    "lr": 0.01,
    "lr_pool": None,
    "gamma": 0.99,
    "tau": 0.5,
    "rho_weak": 0.9,
    "rho_strong": 0.4,
    "pooler": "topk",
    "pooler_strong": None,
    "ablation": "none",
    "ablation_check": False,
    "no_sl": False,
    "no_cl": False,
    "hidden": 512,
    "layers": 2,
    "seed": 0,
    "checkpoint_every": 0,
    "record_time": False,
    "out": None,
    "checkpoint": None,
    "embeddings": None,
    "folds": 10,
    "runs": 5,
    "k": None,
    "grid": "rho",
    "rho_weak_values": "0.5,0.6,0.7,0.8,0.9",
    "rho_strong_values": "0.1,0.2,0.3,0.4,0.5",
    "batch_values": "16,32,64,128,256,512",
}

CASTS = {
    "per_class": int,
    "min_nodes": int,
    "max_nodes": int,
    "max_degree": int,
    "data_seed": int,
    "epochs": int,
    "batch": int,
    "lr": float,
    "lr_pool": float,
    "gamma": float,
    "tau": float,
    "rho_weak": float,
    "rho_strong": float,
    "hidden": int,
    "layers": int,
    "seed": int,
    "checkpoint_every": int,
    "folds": int,
    "runs": int,
    "k": int,
}
FLAGS = {"ablation_check", "no_sl", "no_cl", "record_time"}
DEFAULT_RUN_DIR = "gpscl_run"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_dataset_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", help="TUDataset directory")
    g.add_argument("--name", help="TUDataset name (file prefix); defaults to the directory name")
    g.add_argument("--synth", choices=["cycles_vs_cliques", "two_community"])
    g.add_argument("--per-class", type=int)
    g.add_argument("--min-nodes", type=int)
    g.add_argument("--max-nodes", type=int)
    g.add_argument("--max-degree", type=int)
    g.add_argument("--data-seed", type=int)


def _add_train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--lr-pool", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--rho-weak", type=float)
    g.add_argument("--rho-strong", type=float)
    g.add_argument("--pooler", choices=POOLERS)
    g.add_argument("--pooler-strong", choices=POOLERS)
    g.add_argument("--ablation", choices=ABLATIONS)
    g.add_argument("--ablation-check", action="store_true", help="reject ablations that contradict enabled losses")
    g.add_argument("--no-sl", action="store_true", help="disable similarity learning")
    g.add_argument("--no-cl", action="store_true", help="disable consistency learning")
    g.add_argument("--hidden", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--checkpoint-every", type=int)
    g.add_argument("--record-time", action="store_true", help="store wall-clock ms in metrics (breaks byte determinism)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpscl", description=__doc__.splitlines()[0], argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="train and write checkpoint + metrics", argument_default=argparse.SUPPRESS)
    p.add_argument("--config")
    _add_dataset_args(p)
    _add_train_args(p)
    p.add_argument("--out", help=f"output directory (default ./{DEFAULT_RUN_DIR})")

    p = sub.add_parser("embed", help="export momentum-encoder embeddings", argument_default=argparse.SUPPRESS)
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    _add_dataset_args(p)
    p.add_argument("--out", help="embeddings TSV path")

    p = sub.add_parser("probe", help="k-fold linear probe", argument_default=argparse.SUPPRESS)
    p.add_argument("--config")
    p.add_argument("--embeddings")
    p.add_argument("--folds", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("cluster", help="k-means clustering metrics", argument_default=argparse.SUPPRESS)
    p.add_argument("--config")
    p.add_argument("--embeddings")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="sensitivity grid over pooling ratios or batch size", argument_default=argparse.SUPPRESS)
    p.add_argument("--config")
    _add_dataset_args(p)
    _add_train_args(p)
    p.add_argument("--grid", choices=["rho", "batch"])
    p.add_argument("--rho-weak-values")
    p.add_argument("--rho-strong-values")
    p.add_argument("--batch-values")
    p.add_argument("--folds", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out", help="output directory")
    return parser


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        if key in FLAGS:
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif key in CASTS:
            try:
                out[key] = CASTS[key](value)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
        else:
            out[key] = value
    return out


def resolve(argv) -> tuple[str, dict]:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    opts = dict(DEFAULTS)
    config = ns.pop("config", None)
    if config:
        opts.update(read_config_file(config))
    opts.update(ns)
    return command, opts


def dataset_from(opts):
    if opts["synth"] is None and opts["dataset"] is None:
        raise ConfigError("one of --dataset or --synth is required")
    if opts["synth"] is not None:
        return load_dataset(
            synth=opts["synth"],
            per_class=opts["per_class"],
            size_range=(opts["min_nodes"], opts["max_nodes"]),
            seed=opts["data_seed"],
            max_degree=opts["max_degree"],
        )
    return load_dataset(opts["dataset"], opts["name"], max_degree=opts["max_degree"])


def config_from(opts, **override) -> TrainConfig:
    values = dict(
        epochs=opts["epochs"],
        batch_size=opts["batch"],
        lr=opts["lr"],
        lr_pool=opts["lr_pool"],
        gamma=opts["gamma"],
        tau=opts["tau"],
        rho_weak=opts["rho_weak"],
        rho_strong=opts["rho_strong"],
        pooler=opts["pooler"],
        pooler_strong=opts["pooler_strong"],
        ablation=opts["ablation"],
        seed=opts["seed"],
        hidden=opts["hidden"],
        num_layers=opts["layers"],
        use_sl=False if opts["no_sl"] else None,
        use_cl=False if opts["no_cl"] else None,
        strict_ablation=opts["ablation_check"],
        checkpoint_every=opts["checkpoint_every"],
        record_time=opts["record_time"],
    )
    values.update(override)
    return TrainConfig(**values)


def _require(opts, key, flag):
    if opts.get(key) is None:
        raise ConfigError(f"{flag} is required")
    return opts[key]


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def cmd_pretrain(opts) -> int:
    out = Path(opts["out"] or DEFAULT_RUN_DIR)
    config = config_from(opts)
    dataset = dataset_from(opts)
    ckpt = pretrain(config, dataset, out)
    _emit({"checkpoint": str(ckpt), "metrics": str(out / "metrics.jsonl"), "epochs": config.epochs})
    return 0


def cmd_embed(opts) -> int:
    state = load_checkpoint(_require(opts, "checkpoint", "--checkpoint"))
    out = _require(opts, "out", "--out")
    dataset = dataset_from(opts)
    Z = embed_dataset(state, dataset)
    write_embeddings(EmbeddingTable(Z, dataset.labels), out)
    _emit({"embeddings": str(out), "rows": int(Z.shape[0]), "dim": int(Z.shape[1])})
    return 0


def cmd_probe(opts) -> int:
    table = read_embeddings(_require(opts, "embeddings", "--embeddings"))
    seeds = range(opts["seed"], opts["seed"] + opts["runs"])
    report = repeated_probe(table, opts["folds"], seeds)
    _emit({"mean": report.mean, "std": report.std, "folds": report.folds, "runs": len(report.accuracies)})
    return 0


def cmd_cluster(opts) -> int:
    table = read_embeddings(_require(opts, "embeddings", "--embeddings"))
    _emit(cluster_eval(table, opts["k"], opts["seed"]))
    return 0


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad value list {text!r}") from None


def sweep_cells(opts) -> list[dict]:
    if opts["grid"] == "rho":
        return [
            {"rho_weak": rw, "rho_strong": rs, "batch_size": opts["batch"]}
            for rw in _floats(opts["rho_weak_values"])
            for rs in _floats(opts["rho_strong_values"])
        ]
    return [
        {"rho_weak": opts["rho_weak"], "rho_strong": opts["rho_strong"], "batch_size": int(b)}
        for b in _floats(opts["batch_values"])
    ]


def cmd_sweep(opts) -> int:
    out = Path(_require(opts, "out", "--out"))
    out.mkdir(parents=True, exist_ok=True)
    dataset = dataset_from(opts)
    rows = []
    for i, cell in enumerate(sweep_cells(opts)):
        if not cell["rho_weak"] > cell["rho_strong"]:
            sys.stderr.write(
                f"warning: skipping cell rho_weak={cell['rho_weak']} rho_strong={cell['rho_strong']} "
                "(rho_weak must exceed rho_strong)\n"
            )
            continue
        config = config_from(opts, **cell)
        ckpt = pretrain(config, dataset, out / f"cell_{i:03d}")
        Z = embed_dataset(load_checkpoint(ckpt), dataset)
        seeds = range(opts["seed"], opts["seed"] + opts["runs"])
        report = repeated_probe(EmbeddingTable(Z, dataset.labels), opts["folds"], seeds)
        rows.append({**cell, "probe_mean": report.mean, "probe_std": report.std})
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["rho_weak", "rho_strong", "batch_size", "probe_mean", "probe_std"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _emit({"csv": str(csv_path), "cells": len(rows)})
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "probe": cmd_probe,
    "cluster": cmd_cluster,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    try:
        command, opts = resolve(sys.argv[1:] if argv is None else argv)
        return COMMANDS[command](opts)
    except (GpsError, OSError, ValueError) as exc:
        message = " ".join(str(exc).split())
        sys.stderr.write(f"error: {type(exc).__name__}: {message}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
