"""Ranking and rating metrics and the rank-all-unseen-items protocol."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset import Dataset
from .model import Batch, Context, ModelParams, SubgraphSampler, predict_batch
from .seeding import make_rng

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MetricsReport:
    recall_at_k: float
    ndcg_at_k: float
    rmse: float
    mae: float
    k: int
    n_users_evaluated: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AblationSpec:
    """Switches for the model variants; everything on is the full model."""

    item_graph: bool = True
    neighbor_public_interactions: bool = True
    attention: bool = True
    implicit_user: bool = True
    implicit_item: bool = True

    @property
    def all_on(self) -> bool:
        return all(getattr(self, f.name) for f in fields(self))

    @property
    def name(self) -> str:
        off = [f.name for f in fields(self) if not getattr(self, f.name)]
        return "full" if not off else "w/o " + "+".join(off)

    @classmethod
    def without(cls, *flags: str) -> "AblationSpec":
        return cls(**{f: False for f in flags})


STANDARD_VARIANTS = {
    "full": AblationSpec(),
    "w/o item graph": AblationSpec.without("item_graph"),
    "w/o neighbor public": AblationSpec.without("neighbor_public_interactions"),
    "w/o attention": AblationSpec.without("attention"),
    "w/o implicit user": AblationSpec.without("implicit_user"),
    "w/o implicit item": AblationSpec.without("implicit_item"),
}


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def rank_scores(scores: np.ndarray, exclude: Iterable[int] = ()) -> np.ndarray:
    """Item indices by descending score, ties by ascending index, ``exclude`` removed."""
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(len(scores), dtype=bool)
    ex = np.fromiter(exclude, dtype=np.int64)
    keep[ex] = False
    cand = np.flatnonzero(keep)
    return cand[np.argsort(-scores[cand], kind="stable")]


def rank_items(u: int, params: ModelParams, ctx: Context, exclude: Iterable[int] = (), t: int | None = None) -> np.ndarray:
    """Every item not in ``exclude`` ranked for user ``u`` at time ``t``."""
    return rank_scores(score_matrix(params, ctx, np.array([u]), t)[0], exclude)


def _key(x):
    return x.item() if isinstance(x, np.generic) else x


def recall_at_k(ranked: Sequence[int], truth: Iterable[int], k: int) -> float:
    truth = {_key(x) for x in truth}
    if k < 1:
        raise ValueError("k must be at least 1")
    if not truth:
        raise ValueError("empty truth set")
    hits = sum(1 for x in list(ranked)[:k] if _key(x) in truth)
    return hits / len(truth)


def ndcg_at_k(ranked: Sequence[int], truth: Iterable[int], k: int) -> float:
    truth = {_key(x) for x in truth}
    if k < 1:
        raise ValueError("k must be at least 1")
    if not truth:
        raise ValueError("empty truth set")
    dcg = sum(1.0 / math.log2(p + 2) for p, x in enumerate(list(ranked)[:k]) if _key(x) in truth)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(truth))))
    return dcg / idcg


def rating_errors(predictions, truths=None) -> tuple[float, float]:
    """(RMSE, MAE). Accepts two arrays or one sequence of (prediction, truth) pairs."""
    if truths is None:
        pairs = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
        pred, true = pairs[:, 0], pairs[:, 1]
    else:
        pred = np.asarray(predictions, dtype=np.float64)
        true = np.asarray(truths, dtype=np.float64)
    if not len(pred):
        raise ValueError("no pairs to score")
    r = pred - true
    rmse = math.sqrt(float(np.mean(r * r)))
    mae = float(np.mean(np.abs(r)))
    # the power-mean inequality can fail by an ulp in floating point
    return max(rmse, mae), mae


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------


def evaluation_time(ctx: Context) -> int:
    """Predictions are made at the end of the training window."""
    return int(ctx.graph.graph.boundaries[-1])


def score_matrix(params: ModelParams, ctx: Context, users: np.ndarray, t: int | None = None,
                 chunk: int = 8192, seed: int = 0) -> np.ndarray:
    """Predicted interaction probability for every (user, item) pair at time ``t``."""
    users = np.asarray(users, dtype=np.int64)
    n_items = ctx.n_items
    t = evaluation_time(ctx) if t is None else int(t)
    sampler = SubgraphSampler(ctx, seed, train=False)
    u = np.repeat(users, n_items)
    i = np.tile(np.arange(n_items, dtype=np.int64), len(users))
    out = np.empty(len(u))
    for s in range(0, len(u), chunk):
        sl = slice(s, s + chunk)
        n = len(u[sl])
        out[sl] = predict_batch(Batch(u[sl], i[sl], np.full(n, t, np.int64), np.zeros(n)), ctx, params, sampler)
    return out.reshape(len(users), n_items)


def _user_items(ds: Dataset | None) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {}
    if ds is None:
        return out
    for u, i in zip(ds.users.tolist(), ds.items.tolist()):
        out.setdefault(u, set()).add(i)
    return out


def evaluate_scores(score_fn: ScoreFn, split: Dataset, n_items: int, k: int = 20,
                    exclude: Dataset | Sequence[Dataset] | None = None, seed: int = 0) -> MetricsReport:
    """Protocol core with an arbitrary scorer.

    ``score_fn(users)`` returns a ``(len(users), n_items)`` score matrix. For
    every user with held-out items, items the user met in ``exclude`` are
    removed and the rest ranked. Rating errors use the held-out positives
    (target 1) plus one seeded unseen item per positive (target 0).
    """
    truth = _user_items(split)
    seen: dict[int, set[int]] = {}
    for ds in ([exclude] if isinstance(exclude, Dataset) else list(exclude or [])):
        for u, items in _user_items(ds).items():
            seen.setdefault(u, set()).update(items)
    users = np.array(sorted(truth), dtype=np.int64)
    if not len(users):
        raise ValueError("split has no interactions")
    scores = np.asarray(score_fn(users), dtype=np.float64)
    rng = make_rng(seed, "eval-negatives")
    recalls, ndcgs, preds, targets = [], [], [], []
    for row, u in enumerate(users.tolist()):
        ex = seen.get(u, set())
        pos = sorted(truth[u] - ex)
        if not pos:
            continue
        ranked = rank_scores(scores[row], ex)
        recalls.append(recall_at_k(ranked, pos, k))
        ndcgs.append(ndcg_at_k(ranked, pos, k))
        pool = np.setdiff1d(np.arange(n_items), np.fromiter(ex | truth[u], dtype=np.int64))
        preds.extend(scores[row, pos])
        targets.extend([1.0] * len(pos))
        if len(pool):
            neg = rng.choice(pool, size=len(pos), replace=len(pool) < len(pos))
            preds.extend(scores[row, neg])
            targets.extend([0.0] * len(neg))
    if not recalls:
        raise ValueError("no user has held-out items outside the excluded set")
    rmse, mae = rating_errors(preds, targets)
    return MetricsReport(float(np.mean(recalls)), float(np.mean(ndcgs)), rmse, mae, k, len(recalls))


def evaluate(params: ModelParams, ctx: Context | Sequence[tuple[np.ndarray, Context]], split: Dataset,
             k: int = 20, exclude: Dataset | Sequence[Dataset] | None = None, seed: int = 0,
             t: int | None = None) -> MetricsReport:
    """Metrics of the model ``(params, ctx)`` on ``split``.

    ``ctx`` may also be a list of ``(users, context)`` groups, so users can
    be scored in the graph view of the client that owns them.
    """
    if isinstance(ctx, Context):
        groups = [(None, ctx)]
    else:
        groups = list(ctx)

    def score_fn(users: np.ndarray) -> np.ndarray:
        out = np.zeros((len(users), groups[0][1].n_items))
        done = np.zeros(len(users), dtype=bool)
        for members, c in groups:
            sel = ~done if members is None else np.isin(users, members) & ~done
            if sel.any():
                out[sel] = score_matrix(params, c, users[sel], t, seed=seed)
                done |= sel
        if not done.all():
            raise ValueError(f"no context covers users {users[~done].tolist()}")
        return out

    return evaluate_scores(score_fn, split, groups[0][1].n_items, k, exclude, seed)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def write_sweep(rows: Sequence[tuple[float, str, MetricsReport]], csv_path: str | Path,
                json_path: str | Path | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "mode", "recall", "ndcg", "rmse", "mae"])
        for p, mode, rep in rows:
            w.writerow([_num(p), mode, _num(rep.recall_at_k), _num(rep.ndcg_at_k), _num(rep.rmse), _num(rep.mae)])
    if json_path is not None:
        doc = [{"p": p, "mode": mode, **rep.as_dict()} for p, mode, rep in rows]
        Path(json_path).write_text(json.dumps({"rows": doc}, indent=2, sort_keys=True) + "\n")


def write_ablation(rows: Sequence[tuple[str, MetricsReport]], csv_path: str | Path,
                   json_path: str | Path | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "recall", "ndcg"])
        for name, rep in rows:
            w.writerow([name, _num(rep.recall_at_k), _num(rep.ndcg_at_k)])
    if json_path is not None:
        doc = [{"variant": name, **rep.as_dict()} for name, rep in rows]
        Path(json_path).write_text(json.dumps({"rows": doc}, indent=2, sort_keys=True) + "\n")


def write_metrics(rep: MetricsReport, csv_path: str | Path, json_path: str | Path | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "recall", "ndcg", "rmse", "mae", "n_users"])
        w.writerow([rep.k, _num(rep.recall_at_k), _num(rep.ndcg_at_k), _num(rep.rmse), _num(rep.mae),
                    rep.n_users_evaluated])
    if json_path is not None:
        Path(json_path).write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")


def privacy_sweep(base, ratios: Sequence[float], **kw):
    """Federated vs centralised-public-only metrics for each public ratio."""
    from .experiment import privacy_sweep as run
    return run(base, ratios, **kw)


def run_ablation(spec: AblationSpec, config, **kw) -> MetricsReport:
    """Train and evaluate one model variant."""
    from .experiment import run_ablation as run
    return run(spec, config, **kw)
