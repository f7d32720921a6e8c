"""``hagcl`` command line: pretrain, evaluate, ablation, stats.

Every command resolves a :class:`RunConfig` from an optional YAML/JSON file
plus flag overrides, writes the fully materialized config next to its
outputs, and maps failures to exit codes (1 config, 2 data, 3 numerical).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .encoder import EncoderParams
from .errors import ConfigError, ContractError, DataError, DimensionError, NumericalError
from .graphdata import DatasetStats, Graph, parse_tu_dataset
from .probe import EvalResult, evaluate
from .trainer import EpochMetrics, Model, pretrain

log = logging.getLogger("hagcl")

MODES = ("edge_only", "feature_only", "all")
SNAPSHOT = "config.yaml"
METRICS = "metrics.jsonl"
TIMING = "timing.jsonl"
FINAL_CKPT = "checkpoint.npz"
RESULTS = "results.json"


# -------------------------------------------------------------------- helpers

def _overrides(args) -> dict:
    out: dict = {}
    if getattr(args, "dataset", None):
        out.setdefault("dataset", {})["path"] = args.dataset
    if getattr(args, "name", None):
        out.setdefault("dataset", {})["name"] = args.name
    if getattr(args, "seed", None) is not None:
        out.setdefault("train", {})["seed"] = args.seed
    if getattr(args, "mode", None):
        out.setdefault("train", {})["mode"] = args.mode
    if getattr(args, "epochs", None) is not None:
        out.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "out", None):
        out["output_dir"] = args.out
    return out


def resolve_config(args) -> RunConfig:
    if args.config is None and not getattr(args, "dataset", None):
        raise ConfigError("dataset.path: give --config or --dataset")
    cfg = load_run_config(args.config, _overrides(args))
    cfg.check_paths()
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_dataset(cfg: RunConfig) -> tuple[list[Graph], DatasetStats]:
    return parse_tu_dataset(cfg.dataset.path, cfg.dataset.resolved_name)


def _checkpoint_meta(cfg: RunConfig, in_dim: int, epoch: int) -> dict:
    return {"config_digest": cfg.digest(), "in_dim": in_dim, "mode": cfg.train.mode,
            "epoch": epoch, "version": __version__}


# ------------------------------------------------------------------- commands

def run_pretrain(cfg: RunConfig, graphs: Sequence[Graph] | None = None) -> tuple[Model, list[EpochMetrics]]:
    """Train and write snapshot, metrics, timing and checkpoints under ``cfg.output_dir``."""
    if graphs is None:
        graphs, _ = load_dataset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out / SNAPSHOT)
    in_dim = graphs[0].node_features.shape[1]
    metrics_fh = (out / METRICS).open("w")
    timing_fh = (out / TIMING).open("w")

    def on_epoch(m: EpochMetrics, model: Model) -> None:
        rec = m.to_record()
        # Wall time goes to its own file so the metrics stay reproducible.
        timing_fh.write(json.dumps({"epoch": rec["epoch"], "wall_time": rec.pop("wall_time")}) + "\n")
        metrics_fh.write(json.dumps(rec, sort_keys=True) + "\n")
        metrics_fh.flush()
        done = m.epoch + 1
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.train.epochs:
            save_checkpoint(out / "checkpoints" / f"epoch_{done:04d}.npz", model.state_arrays(),
                            _checkpoint_meta(cfg, in_dim, done))

    try:
        result = pretrain(graphs, cfg.encoder, cfg.train, on_epoch=on_epoch)
    finally:
        metrics_fh.close()
        timing_fh.close()
    save_checkpoint(out / FINAL_CKPT, result.model.state_arrays(),
                    _checkpoint_meta(cfg, in_dim, cfg.train.epochs))
    return result.model, result.metrics


def load_encoder(cfg: RunConfig, checkpoint: Path, in_dim: int) -> EncoderParams:
    arrays, meta = load_checkpoint(checkpoint)
    ck_dim = meta.get("in_dim")
    if ck_dim is not None and ck_dim != in_dim:
        raise DimensionError(f"checkpoint {checkpoint} expects {ck_dim} input features, "
                             f"dataset has {in_dim}")
    f = EncoderParams.init(np.random.default_rng(0), in_dim, cfg.encoder)
    f.load_state_arrays(arrays, "f.")
    return f


def run_evaluate(cfg: RunConfig, checkpoint: Path, graphs: Sequence[Graph] | None = None,
                 out_dir: Path | None = None) -> tuple[dict, EvalResult]:
    if graphs is None:
        graphs, _ = load_dataset(cfg)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out / SNAPSHOT)
    in_dim = graphs[0].node_features.shape[1]
    f = load_encoder(cfg, Path(checkpoint), in_dim)
    res = evaluate(graphs, f, cfg.probe, seed=cfg.train.seed)
    record = {
        "dataset": cfg.dataset.resolved_name,
        "config_digest": cfg.digest(),
        "checkpoint_sha256": _file_digest(Path(checkpoint)),
        "mode": cfg.train.mode,
        "seed": cfg.train.seed,
        "mean": res.mean,
        "std": res.std,
        "seed_means": res.seed_means,
        "fold_accuracies": res.fold_accuracies,
        "chosen_l2": res.chosen_l2,
        "fold_digest": hashlib.sha256(json.dumps(res.fold_splits).encode()).hexdigest(),
    }
    _write_json(out / RESULTS, record)
    return record, res


def _format_score(record: dict) -> str:
    return f"{record['dataset']} [{record['mode']}]: accuracy {record['mean']!r} ± {record['std']!r}"


def run_ablation(cfg: RunConfig) -> dict:
    graphs, _ = load_dataset(cfg)
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(root / SNAPSHOT)
    rows, curves = [], []
    for mode in MODES:
        sub = cfg.model_copy(update={
            "train": cfg.train.model_copy(update={"mode": mode}),
            "output_dir": str(root / mode),
        })
        log.info("ablation: mode %s", mode)
        _, metrics = run_pretrain(sub, graphs)
        record, _ = run_evaluate(sub, root / mode / FINAL_CKPT, graphs)
        rows.append(record)
        for m in metrics:
            rec = m.to_record()
            rec.pop("wall_time")
            curves.append({"mode": mode, **rec})
    with (root / "curves.jsonl").open("w") as fh:
        for rec in curves:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = {
        "dataset": cfg.dataset.resolved_name,
        "config_digest": cfg.digest(),
        "rows": [{k: r[k] for k in ("mode", "mean", "std", "seed_means", "fold_digest")} for r in rows],
    }
    _write_json(root / "ablation.json", summary)
    (root / "ablation_table.txt").write_text(ablation_table(summary["rows"]))
    return summary


def ablation_table(rows: list[dict]) -> str:
    lines = [f"{'mode':<14} {'accuracy':>18}"]
    for r in rows:
        lines.append(f"{r['mode']:<14} {100 * r['mean']:>9.2f} ± {100 * r['std']:<6.2f}")
    return "\n".join(lines) + "\n"


def stats_text(name: str, stats: DatasetStats) -> str:
    return DatasetStats.table_header() + "\n" + stats.table_row(name) + "\n"


# ------------------------------------------------------------------------ CLI

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hagcl", description="Graph contrastive pretraining with learned views.")
    p.add_argument("--version", action="version", version=f"hagcl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mode=True):
        sp.add_argument("--config", help="YAML or JSON run config")
        sp.add_argument("--dataset", help="TU dataset directory (overrides dataset.path)")
        sp.add_argument("--name", help="TU file prefix (defaults to the directory name)")
        sp.add_argument("--seed", type=int, help="master seed (overrides train.seed)")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--epochs", type=int, help="overrides train.epochs")
        if mode:
            sp.add_argument("--mode", choices=MODES, help="overrides train.mode")

    common(sub.add_parser("pretrain", help="unsupervised pretraining"))
    ev = sub.add_parser("evaluate", help="linear-probe a checkpoint")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    common(sub.add_parser("ablation", help="pretrain + evaluate every view mode"), mode=False)
    st = sub.add_parser("stats", help="print dataset summary statistics")
    st.add_argument("--config")
    st.add_argument("--dataset")
    st.add_argument("--name")
    return p


def _dispatch(args) -> None:
    if args.command == "stats":
        if args.config is None and args.dataset is None:
            raise ConfigError("dataset.path: give --config or --dataset")
        cfg = load_run_config(args.config, _overrides(args))
        # Parse errors (not config errors) for a bad directory are data errors.
        _, stats = load_dataset(cfg)
        print(stats_text(cfg.dataset.resolved_name, stats), end="")
        return
    cfg = resolve_config(args)
    if args.command == "pretrain":
        _, metrics = run_pretrain(cfg)
        last = metrics[-1]
        print(f"trained {len(metrics)} epochs; final L_max {last.loss_max:.4f}; "
              f"checkpoint {Path(cfg.output_dir) / FINAL_CKPT}")
    elif args.command == "evaluate":
        record, _ = run_evaluate(cfg, Path(args.checkpoint))
        print(_format_score(record))
    elif args.command == "ablation":
        summary = run_ablation(cfg)
        print(ablation_table(summary["rows"]), end="")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except (ConfigError, ContractError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3
    return 0


def entry() -> None:
    sys.exit(main())
