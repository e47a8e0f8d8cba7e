"""Client-local optimisation: negative sampling, the epoch loop and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import ClientShard, ConfigurationError
from .model import Batch, Context, ModelParams, NumericalError, SubgraphSampler, forward_backward
from .seeding import derive_seed, make_rng

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


class ClientAbort(RuntimeError):
    """A client could not finish its local round."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    local_epochs: int = 1
    batch_size: int = 256
    negatives_per_positive: int = 4
    early_stop_patience: int = 5
    seed: int = 0
    optimizer: str = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigurationError("learning_rate must be a finite non-negative number")
        for name in ("local_epochs", "batch_size", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if self.negatives_per_positive < 0:
            raise ConfigurationError("negatives_per_positive must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    params: ModelParams
    sample_count: int
    train_loss: float
    client_id: int
    epoch_losses: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")
        if not math.isfinite(self.train_loss):
            raise ValueError("train_loss must be finite")


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------


def _interaction_keys(shard: ClientShard, n_items: int) -> np.ndarray:
    return np.unique(shard.data.users.astype(np.int64) * n_items + shard.data.items)


def sample_negatives(shard: ClientShard, positives: Batch, ratio: int, seed: int) -> Batch:
    """Append ``ratio`` unseen items per positive row, labelled 0.

    Items are drawn uniformly from the whole item vocabulary minus everything
    the user interacted with in ``shard``. A user who has seen every item gets
    no negatives (with a warning).
    """
    if ratio < 0:
        raise ConfigurationError("ratio must be non-negative")
    if ratio == 0 or not len(positives):
        return positives
    n_items = shard.data.n_items
    keys = _interaction_keys(shard, n_items)
    seen_per_user = np.bincount(shard.data.users, minlength=shard.data.n_users)
    # users occurring in the batch but not the shard have seen nothing
    n_seen = np.zeros(len(positives), dtype=np.int64)
    inside = positives.users < len(seen_per_user)
    n_seen[inside] = seen_per_user[positives.users[inside]]
    full = n_seen >= n_items
    if full.any():
        log.warning("skipping negatives for %d row(s): user(s) %s interacted with every item",
                    int(full.sum()), sorted(set(positives.users[full].tolist())))
    rows = np.flatnonzero(~full)
    users = np.repeat(positives.users[rows], ratio)
    times = np.repeat(positives.times[rows], ratio)
    rng = make_rng(seed, "negatives")
    items = rng.integers(0, n_items, size=len(users))

    def collides(u, i):
        k = u * n_items + i
        pos = np.searchsorted(keys, k)
        return (pos < len(keys)) & (keys[np.minimum(pos, len(keys) - 1)] == k)

    bad = np.flatnonzero(collides(users, items))
    for _ in range(32):
        if not len(bad):
            break
        items[bad] = rng.integers(0, n_items, size=len(bad))
        bad = bad[collides(users[bad], items[bad])]
    # dense users: draw directly from the complement
    for j in bad.tolist():
        u = int(users[j])
        seen = keys[(keys >= u * n_items) & (keys < (u + 1) * n_items)] - u * n_items
        items[j] = rng.choice(np.setdiff1d(np.arange(n_items), seen))
    return Batch(
        np.concatenate([positives.users, users]),
        np.concatenate([positives.items, items]),
        np.concatenate([positives.times, times]),
        np.concatenate([positives.labels, np.zeros(len(users))]),
    )


# ---------------------------------------------------------------------------
# Optimisers
# ---------------------------------------------------------------------------


class _SGD:
    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.learning_rate

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        for name, g in grads.items():
            params[name] -= self.lr * g


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.learning_rate
        self.b1, self.b2 = cfg.adam_betas
        self.eps = cfg.adam_eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return _Adam(cfg) if cfg.optimizer == "adam" else _SGD(cfg)


def sgd_step(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    """One plain ``W <- W - lr * grad`` step on a copy of ``params``."""
    out = params.copy()
    for name, g in grads.items():
        out[name] -= learning_rate * g
    return out


# ---------------------------------------------------------------------------
# Local training
# ---------------------------------------------------------------------------


def local_train(
    shard: ClientShard,
    global_params: ModelParams,
    cfg: TrainConfig,
    graphs: Context,
    round_index: int = 0,
    loss_trace: list | None = None,
) -> ClientUpdate:
    """Train a copy of ``global_params`` on ``shard`` for ``cfg.local_epochs`` epochs.

    All randomness is keyed by ``(cfg.seed, round_index, client_id, epoch)``.
    ``loss_trace``, when given, receives one ``(round, client, epoch, loss)``
    tuple per epoch.
    """
    if not shard.sample_count:
        raise ConfigurationError(f"client {shard.client_id} has an empty shard")
    params = global_params.copy()
    opt = make_optimizer(cfg)
    data = shard.data
    positives = Batch(data.users.astype(np.int64), data.items.astype(np.int64),
                      data.timestamps.astype(np.int64), np.ones(len(data)))
    cid = shard.client_id
    epoch_losses = []
    for epoch in range(cfg.local_epochs):
        order = make_rng(cfg.seed, "shuffle", round_index, cid, epoch).permutation(len(data))
        sampler = SubgraphSampler(graphs, derive_seed(cfg.seed, "sampler", round_index, cid, epoch), train=True)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            pos = positives.take(order[start:start + cfg.batch_size])
            batch = sample_negatives(shard, pos, cfg.negatives_per_positive,
                                     derive_seed(cfg.seed, "neg", round_index, cid, epoch, b))
            try:
                loss, grads = forward_backward(batch, graphs, params, sampler)
            except NumericalError as exc:
                raise ClientAbort(f"client {cid}, round {round_index}, epoch {epoch}, batch {b}: {exc}") from exc
            opt.step(params, grads)
            total += loss * len(batch)
            count += len(batch)
        epoch_loss = total / count
        epoch_losses.append(epoch_loss)
        if loss_trace is not None:
            loss_trace.append((round_index, cid, epoch, epoch_loss))
    if not params.all_finite():
        raise ClientAbort(f"client {cid}, round {round_index}: parameters became non-finite")
    return ClientUpdate(params, shard.sample_count, float(np.mean(epoch_losses)), cid, tuple(epoch_losses))


def early_stop(history: Sequence[float], patience: int) -> bool:
    """True once the best value (higher is better) is ``patience`` evaluations old."""
    if patience < 1:
        raise ConfigurationError("patience must be at least 1")
    if not len(history):
        return False
    best = int(np.argmax(np.asarray(history, dtype=np.float64)))
    return len(history) - 1 - best >= patience
