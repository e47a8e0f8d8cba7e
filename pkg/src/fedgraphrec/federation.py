"""Simulated server/client rounds: broadcast, local training, masking, weighted averaging."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .dataset import ClientShard, ConfigurationError
from .model import Context, ModelParams
from .seeding import derive_seed, make_rng
from .training import ClientUpdate, TrainConfig, early_stop, local_train

SCALE_BITS = 20
SCALE = float(1 << SCALE_BITS)

WeightFn = Callable[[Sequence[ClientUpdate]], np.ndarray]


class ProtocolError(ValueError):
    """Updates that cannot be combined (shape mismatch, wrong participant set)."""


class RoundFailure(RuntimeError):
    """A round was abandoned; the server state was left untouched."""


# ---------------------------------------------------------------------------
# Weighted averaging
# ---------------------------------------------------------------------------


def sample_weights(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """Default aggregation weights: proportional to each client's sample count."""
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    return counts / counts.sum()


def _ordered(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise ProtocolError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate client ids {ids}")
    ref = ordered[0].params
    for u in ordered[1:]:
        if not u.params.congruent(ref):
            raise ProtocolError(f"client {u.client_id} sent parameters of a different shape")
    return ordered


def aggregate(updates: Sequence[ClientUpdate], weight_fn: WeightFn = sample_weights) -> ModelParams:
    """Weighted mean of client parameters, accumulated in client-id order.

    The result is clipped to the per-coordinate range of the inputs, which
    only ever moves a coordinate by a rounding error but makes the convexity
    bound exact.
    """
    ordered = _ordered(updates)
    w = np.asarray(weight_fn(ordered), dtype=np.float64)
    if w.shape != (len(ordered),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ProtocolError(f"aggregation weights must be non-negative and sum to 1, got {w}")
    out = {}
    for name in ordered[0].params:
        acc = np.zeros_like(ordered[0].params[name])
        lo = hi = ordered[0].params[name]
        for wk, u in zip(w, ordered):
            x = u.params[name]
            acc += wk * x
            lo, hi = np.minimum(lo, x), np.maximum(hi, x)
        out[name] = np.clip(acc, lo, hi)
    return ModelParams(out)


# ---------------------------------------------------------------------------
# Secure aggregation by pairwise additive masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MaskedUpdate:
    vector: np.ndarray  # uint64, fixed point at 2**SCALE_BITS, modulo 2**64
    sample_count: int
    client_id: int
    peers: tuple[int, ...]
    train_loss: float = math.nan
    template: ModelParams | None = field(default=None, repr=False)


def quantize(x: np.ndarray) -> np.ndarray:
    """Round to fixed point and reinterpret two's complement as uint64."""
    return np.rint(np.asarray(x, np.float64) * SCALE).astype(np.int64).view(np.uint64)


def dequantize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, np.uint64).view(np.int64).astype(np.float64) / SCALE


def pair_mask(round_seed: int, a: int, b: int, n: int) -> np.ndarray:
    """The mask shared by clients ``a`` and ``b``; identical whichever side asks."""
    lo, hi = min(a, b), max(a, b)
    return make_rng(round_seed, "mask", lo, hi).bit_generator.random_raw(n).astype(np.uint64)


def mask_update(update: ClientUpdate, round_peers: Sequence[int], round_seed: int,
                weight: float = 1.0) -> MaskedUpdate:
    """Pre-scale by ``weight``, quantise and add every pairwise mask.

    For each peer the lower id adds the shared mask and the higher id
    subtracts it, so the masks vanish from the modular sum over all peers.
    """
    peers = tuple(sorted(set(int(p) for p in round_peers)))
    if len(peers) < 2:
        raise ConfigurationError("masking needs at least two clients per round")
    me = update.client_id
    if me not in peers:
        raise ProtocolError(f"client {me} is not among the round peers {peers}")
    vec = quantize(weight * update.params.flatten())
    with np.errstate(over="ignore"):
        for other in peers:
            if other == me:
                continue
            m = pair_mask(round_seed, me, other, len(vec))
            vec = vec + m if me < other else vec - m
    return MaskedUpdate(vec, update.sample_count, me, peers, update.train_loss, update.params.zeros_like())


def modular_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    acc = np.zeros_like(vectors[0], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for v in vectors:
            acc = acc + np.asarray(v, np.uint64)
    return acc


def unmask_aggregate(masked: Sequence[MaskedUpdate], template: ModelParams | None = None) -> ModelParams:
    """Sum the masked vectors modulo 2**64 and convert back to floats.

    Aborts unless exactly the announced participant set is present.
    """
    if not masked:
        raise ProtocolError("no masked updates")
    ordered = sorted(masked, key=lambda m: m.client_id)
    peers = ordered[0].peers
    ids = tuple(m.client_id for m in ordered)
    if any(m.peers != peers for m in ordered) or ids != peers:
        raise ProtocolError(f"participant set {ids} does not match announced peers {peers}; round aborted")
    n = len(ordered[0].vector)
    if any(len(m.vector) != n for m in ordered):
        raise ProtocolError("masked vectors differ in length")
    template = template if template is not None else ordered[0].template
    if template is None or template.size != n:
        raise ProtocolError("no parameter layout matching the masked vectors")
    return template.unflatten(dequantize(modular_sum([m.vector for m in ordered])))


# ---------------------------------------------------------------------------
# Rounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 200
    clients_per_round: int | None = None  # None: every client
    masking: bool = False
    seed: int = 0
    eval_every: int = 1
    eval_k: int = 20

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ConfigurationError("rounds must be non-negative")
        if self.clients_per_round is not None and self.clients_per_round < 1:
            raise ConfigurationError("clients_per_round must be at least 1")
        if self.eval_every < 0:
            raise ConfigurationError("eval_every must be non-negative")

    def participants(self, n_clients: int) -> int:
        m = n_clients if self.clients_per_round is None else self.clients_per_round
        if not 1 <= m <= n_clients:
            raise ConfigurationError(f"clients_per_round={m} but only {n_clients} clients")
        return m


class RoundRecord(NamedTuple):
    round: int
    mean_loss: float
    val_recall: float
    val_ndcg: float
    val_rmse: float
    val_mae: float
    seconds: float
    clients: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class ServerState:
    global_params: ModelParams
    round: int = 0
    history: tuple[RoundRecord, ...] = ()


def _context_for(contexts: Context | Sequence[Context] | Mapping[int, Context], client_id: int) -> Context:
    if isinstance(contexts, Context):
        return contexts
    return contexts[client_id]


def select_clients(n_clients: int, cfg: FedConfig, round_index: int) -> list[int]:
    m = cfg.participants(n_clients)
    if m == n_clients:
        return list(range(n_clients))
    picked = make_rng(cfg.seed, "clients", round_index).choice(n_clients, size=m, replace=False)
    return sorted(int(c) for c in picked)


def run_round(
    state: ServerState,
    shards: Sequence[ClientShard],
    cfg: FedConfig,
    train_cfg: TrainConfig,
    contexts: Context | Sequence[Context] | Mapping[int, Context],
    threads: int = 1,
    weight_fn: WeightFn = sample_weights,
    loss_trace: list | None = None,
) -> ServerState:
    """One broadcast / local-train / aggregate cycle. Returns a new state."""
    start = time.perf_counter()
    by_id = {s.client_id: s for s in shards}
    chosen = [sorted(by_id)[c] for c in select_clients(len(by_id), cfg, state.round)]
    broadcast = state.global_params

    def work(cid: int) -> ClientUpdate:
        trace = [] if loss_trace is not None else None
        upd = local_train(by_id[cid], broadcast, train_cfg, _context_for(contexts, cid), state.round, trace)
        return upd, trace

    try:
        if threads > 1 and len(chosen) > 1:
            with ThreadPoolExecutor(max_workers=min(threads, len(chosen))) as pool:
                results = list(pool.map(work, chosen))
        else:
            results = [work(c) for c in chosen]
        updates = [r[0] for r in results]
        ordered = _ordered(updates)
        w = np.asarray(weight_fn(ordered), dtype=np.float64)
        if cfg.masking:
            round_seed = derive_seed(cfg.seed, "secagg", state.round)
            peers = [u.client_id for u in ordered]
            masked = [mask_update(u, peers, round_seed, wk) for u, wk in zip(ordered, w)]
            new_params = unmask_aggregate(masked, broadcast)
        else:
            new_params = aggregate(ordered, weight_fn)
    except Exception as exc:
        raise RoundFailure(f"round {state.round} failed: {exc}") from exc
    if loss_trace is not None:
        for _, trace in sorted(results, key=lambda r: r[0].client_id):
            loss_trace.extend(trace)
    mean_loss = float(sum(wk * u.train_loss for wk, u in zip(w, ordered)))
    nan = math.nan
    record = RoundRecord(state.round + 1, mean_loss, nan, nan, nan, nan,
                         time.perf_counter() - start, tuple(u.client_id for u in ordered))
    return ServerState(new_params, state.round + 1, state.history + (record,))


HISTORY_HEADER = ("round", "mean_loss", "val_recall@20", "val_ndcg@20", "val_rmse", "val_mae", "seconds")


def write_history(history: Sequence[RoundRecord], path: str | Path, k: int = 20) -> None:
    header = [h.replace("@20", f"@{k}") for h in HISTORY_HEADER]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in history:
            w.writerow([r.round, repr(r.mean_loss), repr(r.val_recall), repr(r.val_ndcg),
                        repr(r.val_rmse), repr(r.val_mae), f"{r.seconds:.3f}"])


@dataclass
class RunResult:
    state: ServerState
    stopped_early: bool
    best_params: ModelParams
    loss_trace: list = field(default_factory=list)


def orchestrate(
    shards: Sequence[ClientShard],
    initial_params: ModelParams,
    cfg: FedConfig,
    train_cfg: TrainConfig,
    contexts: Context | Sequence[Context] | Mapping[int, Context],
    validate: Callable[[ModelParams], "object"] | None = None,
    threads: int = 1,
    weight_fn: WeightFn = sample_weights,
    on_round: Callable[[ServerState], None] | None = None,
) -> RunResult:
    """Run ``cfg.rounds`` rounds with optional validation and early stopping.

    ``validate(params)`` must return an object with ``recall_at_k``,
    ``ndcg_at_k``, ``rmse`` and ``mae`` attributes; early stopping watches
    the validation recall. ``best_params`` are the parameters with the best
    validation recall (the last ones when nothing is validated).
    """
    state = ServerState(initial_params)
    trace: list = []
    scores: list[float] = []
    best = initial_params
    best_score = -math.inf
    stopped = False
    for _ in range(cfg.rounds):
        state = run_round(state, shards, cfg, train_cfg, contexts, threads, weight_fn, trace)
        if validate is not None and cfg.eval_every and state.round % cfg.eval_every == 0:
            rep = validate(state.global_params)
            rec = state.history[-1]._replace(val_recall=rep.recall_at_k, val_ndcg=rep.ndcg_at_k,
                                             val_rmse=rep.rmse, val_mae=rep.mae)
            state = replace(state, history=state.history[:-1] + (rec,))
            scores.append(rep.recall_at_k)
            if rep.recall_at_k > best_score:
                best_score, best = rep.recall_at_k, state.global_params
        if on_round is not None:
            on_round(state)
        if scores and early_stop(scores, train_cfg.early_stop_patience):
            stopped = True
            break
    if validate is None or not scores:
        best = state.global_params
    return RunResult(state, stopped, best, trace)
