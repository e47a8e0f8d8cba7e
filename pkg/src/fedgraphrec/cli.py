"""Command-line experiment runner.

Subcommands: ``ingest``, ``train``, ``evaluate``, ``sweep-privacy`` and
``ablate``. Each writes into ``--out`` (or the config's ``out``): the
resolved config, a JSON summary and the CSV/JSON reports of the command.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import (
    ConfigurationError,
    DatasetError,
    filter_min_interactions,
    load_interactions,
    split,
    write_id_map,
    write_interactions,
)
from .evaluation import STANDARD_VARIANTS, write_ablation, write_metrics, write_sweep
from .experiment import (
    RunConfig,
    build_contexts,
    held_out_metrics,
    initial_params,
    module_seed,
    prepare,
    privacy_sweep,
    train_run,
)
from .federation import write_history
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("fedgraphrec")


class IncompatibleCheckpoint(ValueError):
    """Checkpoint tensors do not match the model the config describes."""


def version_string() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Run directory bookkeeping
# ---------------------------------------------------------------------------


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        doc = {**cfg.to_dict(), **overrides}
        for section in ("train", "fed"):
            doc[section] = {k: v for k, v in doc[section].items() if k != "seed"}
        cfg = RunConfig.from_dict(doc)
    return cfg


def _run_dir(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    (out / "config.json").write_text(resolved.to_json())
    (out / "seed.txt").write_text(f"{cfg.seed}\n")
    log.info("%s: writing to %s", command, out)
    return out


def _write_summary(out: Path, cfg: RunConfig, command: str, extra: dict) -> None:
    doc = {
        "command": command,
        "version": version_string(),
        "seed": cfg.seed,
        "config_hash": cfg.resolved().config_hash(),
        "module_seeds": {m: module_seed(cfg.seed, m)
                         for m in ("data", "split", "partition", "public", "init", "train", "fed", "eval")},
        "outputs": sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "summary.json"),
        **extra,
    }
    (out / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _check_compatible(params, template) -> None:
    if params.names != template.names:
        missing = sorted(set(template.names) - set(params.names))
        extra = sorted(set(params.names) - set(template.names))
        raise IncompatibleCheckpoint(f"checkpoint tensors differ: missing {missing}, unexpected {extra}")
    for name in template.names:
        if params[name].shape != template[name].shape:
            raise IncompatibleCheckpoint(
                f"tensor {name}: checkpoint shape {params[name].shape}, model expects {template[name].shape}")


def _report_k(cfg: RunConfig) -> list[int]:
    return sorted(set(cfg.eval.report_k) | {cfg.eval.k})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    if not args.input:
        raise ConfigurationError("ingest needs --input")
    cfg = _load_config(args)
    out = Path(args.out or cfg.out)
    raw = load_interactions(args.input)
    data = filter_min_interactions(raw, cfg.dataset.min_interactions, cfg.dataset.item_min_count)
    bundle = split(data, module_seed(cfg.seed, "split"), cfg.dataset.split_mode)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(data, out / "interactions.tsv")
    write_id_map(data.user_ids, out / "user_ids.tsv")
    write_id_map(data.item_ids, out / "item_ids.tsv")
    for name in ("train", "validation", "test"):
        write_interactions(getattr(bundle, name), out / f"{name}.tsv")
    manifest = {
        "source": str(Path(args.input).name),
        "source_sha256": _sha256(Path(args.input)),
        "raw": {"users": raw.n_users, "items": raw.n_items, "interactions": len(raw)},
        "users": data.n_users,
        "items": data.n_items,
        "interactions": len(data),
        "density": data.density,
        "min_interactions": cfg.dataset.min_interactions,
        "item_min_count": cfg.dataset.item_min_count,
        "split_mode": cfg.dataset.split_mode,
        "seed": cfg.seed,
        "splits": {n: len(getattr(bundle, n)) for n in ("train", "validation", "test", "tuning_subset")},
        "files": {p.name: _sha256(p) for p in sorted(out.glob("*.tsv"))},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"users={data.n_users} items={data.n_items} interactions={len(data)} density={data.density:.6g}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(cfg, "train")
    start = time.perf_counter()
    prep = prepare(cfg)
    spec = cfg.ablation
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint"
    if cfg.fed.rounds == 0:
        params = initial_params(cfg.resolved(), prep, spec)
        save_checkpoint(params, ckpt, dtype=args.checkpoint_dtype)
        write_history([], out / "history.csv", cfg.fed.eval_k)
        _write_summary(out, cfg, "train", {"rounds_completed": 0, "stopped_early": False,
                                           "checkpoint": str(ckpt), "seconds": time.perf_counter() - start})
        return 0

    def progress(state):
        r = state.history[-1]
        log.info("round %d loss %.5f (%.2fs)", r.round, r.mean_loss, r.seconds)

    result, contexts = train_run(cfg, prep, spec, args.threads, on_round=progress)
    write_history(result.state.history, out / "history.csv", cfg.fed.eval_k)
    with open(out / "loss_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "client", "epoch", "loss"])
        for rnd, cid, epoch, loss in result.loss_trace:
            w.writerow([rnd + 1, cid, epoch, repr(loss)])
    save_checkpoint(result.best_params, ckpt, dtype=args.checkpoint_dtype)
    metrics = {}
    for k in _report_k(cfg):
        rep = held_out_metrics(cfg, prep, result.best_params, contexts, k)
        write_metrics(rep, out / f"test_metrics@{k}.csv")
        metrics[f"@{k}"] = rep.as_dict()
    _write_summary(out, cfg, "train", {
        "rounds_completed": result.state.round,
        "stopped_early": result.stopped_early,
        "final_loss": result.state.history[-1].mean_loss if result.state.history else None,
        "test": metrics,
        "checkpoint": str(ckpt),
        "seconds": time.perf_counter() - start,
    })
    print(json.dumps({"rounds": result.state.round, "test": metrics}, sort_keys=True))
    return 0


def _checkpoint_params(args, cfg, prep, spec):
    if not args.checkpoint:
        raise ConfigurationError("--checkpoint is required")
    try:
        params = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"no checkpoint at {args.checkpoint}: {exc.strerror}") from exc
    _check_compatible(params, initial_params(cfg.resolved(), prep, spec))
    return params


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(cfg, "evaluate")
    prep = prepare(cfg)
    spec = cfg.ablation
    params = _checkpoint_params(args, cfg, prep, spec)
    contexts = build_contexts(cfg.resolved(), prep, spec)
    rep = held_out_metrics(cfg, prep, params, contexts)
    write_metrics(rep, out / "metrics.csv", out / "metrics.json")
    _write_summary(out, cfg, "evaluate", {"checkpoint": str(args.checkpoint), "metrics": rep.as_dict()})
    print(json.dumps(rep.as_dict(), sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if args.checkpoint:
        log.warning("sweep-privacy trains every configuration itself; --checkpoint is ignored")
    out = _run_dir(cfg, "sweep-privacy")
    ratios = args.ratios if args.ratios else list(cfg.eval.sweep_ratios)
    rows = privacy_sweep(cfg, ratios, threads=args.threads)
    write_sweep(rows, out / "privacy_sweep.csv", out / "privacy_sweep.json")
    _write_summary(out, cfg, "sweep-privacy", {"ratios": ratios, "rows": len(rows)})
    for p, mode, rep in rows:
        print(f"p={p:g} {mode}: recall@{rep.k}={rep.recall_at_k:.4f} ndcg@{rep.k}={rep.ndcg_at_k:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _run_dir(cfg, "ablate")
    prep = prepare(cfg)
    names = args.variants if args.variants else list(STANDARD_VARIANTS)
    unknown = [n for n in names if n not in STANDARD_VARIANTS]
    if unknown:
        raise ConfigurationError(f"unknown variant(s) {unknown}; choose from {list(STANDARD_VARIANTS)}")
    rows = []
    for name in names:
        spec = STANDARD_VARIANTS[name]
        if args.checkpoint and spec == cfg.ablation:
            params = _checkpoint_params(args, cfg, prep, spec)
            contexts = build_contexts(cfg.resolved(), prep, spec)
        else:
            result, contexts = train_run(cfg, prep, spec, args.threads)
            params = result.best_params
        rows.append((name, held_out_metrics(cfg, prep, params, contexts)))
        log.info("%s: recall %.4f", name, rows[-1][1].recall_at_k)
    write_ablation(rows, out / "ablation.csv", out / "ablation.json")
    _write_summary(out, cfg, "ablate", {"variants": names})
    for name, rep in rows:
        print(f"{name}: recall@{rep.k}={rep.recall_at_k:.4f} ndcg@{rep.k}={rep.ndcg_at_k:.4f}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-privacy": cmd_sweep,
    "ablate": cmd_ablate,
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=_positive, default=1, help="cap on concurrently trained clients")
    common.add_argument("--checkpoint", help="checkpoint directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fedgraphrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="load, filter and split an interaction file")
    p.add_argument("--input", help="tab-separated user, item, rating, timestamp file")
    p = sub.add_parser("train", parents=[common], help="federated training")
    p.add_argument("--checkpoint-dtype", choices=("float32", "float64"), default="float32",
                   help="tensor precision on disk (float64 keeps the trained values exactly)")
    sub.add_parser("evaluate", parents=[common], help="test metrics of a checkpoint")
    p = sub.add_parser("sweep-privacy", parents=[common], help="public-ratio sweep")
    p.add_argument("--ratios", type=float, nargs="+", help="public ratios (default: config eval.sweep_ratios)")
    p = sub.add_parser("ablate", parents=[common], help="train and evaluate model variants")
    p.add_argument("--variants", nargs="+", help=f"subset of {list(STANDARD_VARIANTS)}")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DatasetError, IncompatibleCheckpoint) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
