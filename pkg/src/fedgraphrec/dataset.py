"""Interaction logs: ingestion, filtering, splitting and client partitioning.

A :class:`Dataset` stores interactions column-wise (one numpy array per
field) and is kept sorted by ``(user, timestamp)``. Every seeded operation
here is a pure function of its inputs and seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .seeding import make_rng

logger = logging.getLogger(__name__)

SPLIT_MODES = ("per_user", "resplit_80_20")


class DatasetError(ValueError):
    """Raised for malformed or empty interaction data."""


class ConfigurationError(ValueError):
    """Raised when an operation is asked for something its inputs cannot give."""


class Interaction(NamedTuple):
    user: int
    item: int
    rating: float
    timestamp: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column store of interactions over a fixed user/item vocabulary.

    ``user_features`` / ``item_features`` are optional integer matrices with
    one categorical field per column; ``*_cardinalities`` give the number of
    levels per field. ``user_ids`` / ``item_ids`` map dense indices back to
    raw ids when the data came from a file.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    n_users: int
    n_items: int
    user_features: np.ndarray | None = None
    item_features: np.ndarray | None = None
    user_cardinalities: tuple[int, ...] = ()
    item_cardinalities: tuple[int, ...] = ()
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        for name in ("users", "items", "timestamps"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "ratings", np.asarray(self.ratings, dtype=np.float64))
        n = len(self.users)
        if not (len(self.items) == len(self.ratings) == len(self.timestamps) == n):
            raise DatasetError("interaction columns have different lengths")
        if n:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise DatasetError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise DatasetError("item index out of range")
            if self.timestamps.min() < 0:
                raise DatasetError("negative timestamp")
            if not np.all(np.isfinite(self.ratings)):
                raise DatasetError("non-finite rating")

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[Interaction]:
        for row in zip(self.users.tolist(), self.items.tolist(),
                       self.ratings.tolist(), self.timestamps.tolist()):
            yield Interaction(*row)

    @property
    def density(self) -> float:
        return len(self) / float(self.n_users * self.n_items) if self.n_users and self.n_items else 0.0

    def select(self, index: np.ndarray) -> "Dataset":
        """Subset of interactions (boolean mask or positions), same vocabulary."""
        return replace(
            self,
            users=self.users[index],
            items=self.items[index],
            ratings=self.ratings[index],
            timestamps=self.timestamps[index],
        )

    def user_set(self) -> np.ndarray:
        return np.unique(self.users)

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def sorted(self) -> "Dataset":
        order = np.lexsort((self.timestamps, self.users))
        return self.select(order)

    def same_interactions(self, other: "Dataset") -> bool:
        """Multiset equality of (user, item, rating, timestamp) rows."""
        return len(self) == len(other) and np.array_equal(_canonical(self), _canonical(other))


def _canonical(ds: Dataset) -> np.ndarray:
    rows = np.stack([ds.users, ds.items, ds.timestamps, ds.ratings.view(np.int64)], axis=1)
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def from_arrays(users, items, timestamps, ratings=None, n_users=None, n_items=None, **kw) -> Dataset:
    """Build a sorted Dataset from raw index arrays; ratings default to 1.0."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if ratings is None:
        ratings = np.ones(len(users))
    ds = Dataset(
        users=users,
        items=items,
        ratings=ratings,
        timestamps=timestamps,
        n_users=int(n_users if n_users is not None else (users.max() + 1 if len(users) else 0)),
        n_items=int(n_items if n_items is not None else (items.max() + 1 if len(items) else 0)),
        **kw,
    )
    return ds.sorted()


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def load_interactions(path: str | Path) -> Dataset:
    """Read ``user<TAB>item<TAB>rating<TAB>timestamp`` lines.

    Raw ids are arbitrary strings, remapped to dense indices in order of first
    appearance. Blank lines are skipped.
    """
    path = Path(path)
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users, items, ratings, stamps = [], [], [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            raw_user, raw_item, raw_rating, raw_ts = parts
            try:
                rating = float(raw_rating)
                ts = int(raw_ts)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric rating or timestamp") from None
            if not math.isfinite(rating) or ts < 0:
                raise DatasetError(f"{path}:{lineno}: rating must be finite and timestamp >= 0")
            users.append(user_index.setdefault(raw_user, len(user_index)))
            items.append(item_index.setdefault(raw_item, len(item_index)))
            ratings.append(rating)
            stamps.append(ts)
    if not users:
        raise DatasetError(f"{path}: empty dataset")
    return from_arrays(
        users, items, stamps, ratings,
        n_users=len(user_index), n_items=len(item_index),
        user_ids=tuple(user_index), item_ids=tuple(item_index),
    )


def write_interactions(ds: Dataset, path: str | Path) -> None:
    """Write dense-index interactions in the ingestion format."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for u, i, r, t in ds:
            fh.write(f"{u}\t{i}\t{r!r}\t{t}\n")


def read_dense_interactions(path: str | Path, n_users: int, n_items: int) -> Dataset:
    """Inverse of :func:`write_interactions`: ids are already dense indices."""
    rows = [line.rstrip("\n").split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
    if not rows:
        return from_arrays([], [], [], [], n_users=n_users, n_items=n_items)
    cols = list(zip(*rows))
    return from_arrays(
        [int(x) for x in cols[0]], [int(x) for x in cols[1]],
        [int(x) for x in cols[3]], [float(x) for x in cols[2]],
        n_users=n_users, n_items=n_items,
    )


def write_id_map(ids: Sequence[str], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for index, raw in enumerate(ids):
            fh.write(f"{raw}\t{index}\n")


# ---------------------------------------------------------------------------
# Filtering and splitting
# ---------------------------------------------------------------------------


def _densify(ds: Dataset) -> Dataset:
    """Drop users/items with no interactions and renumber in index order."""
    keep_u = np.unique(ds.users)
    keep_i = np.unique(ds.items)
    umap = np.full(ds.n_users, -1, dtype=np.int64)
    umap[keep_u] = np.arange(len(keep_u))
    imap = np.full(ds.n_items, -1, dtype=np.int64)
    imap[keep_i] = np.arange(len(keep_i))

    def take(arr, keep):
        return None if arr is None else arr[keep]

    def take_ids(ids, keep):
        return None if ids is None else tuple(ids[k] for k in keep.tolist())

    return from_arrays(
        umap[ds.users], imap[ds.items], ds.timestamps, ds.ratings,
        n_users=len(keep_u), n_items=len(keep_i),
        user_features=take(ds.user_features, keep_u),
        item_features=take(ds.item_features, keep_i),
        user_cardinalities=ds.user_cardinalities,
        item_cardinalities=ds.item_cardinalities,
        user_ids=take_ids(ds.user_ids, keep_u),
        item_ids=take_ids(ds.item_ids, keep_i),
    )


def filter_min_interactions(ds: Dataset, min_count: int = 5, item_min_count: int = 0) -> Dataset:
    """Repeatedly drop sparse users (and optionally sparse items) until stable.

    Users with fewer than ``min_count`` interactions are removed. With
    ``item_min_count > 0`` items below that count are removed as well, which
    can push further users under the threshold; the loop runs to a fixpoint.
    Indices are re-densified.
    """
    if min_count < 1:
        raise ConfigurationError("min_count must be >= 1")
    current = ds
    while True:
        keep = np.bincount(current.users, minlength=current.n_users)[current.users] >= min_count
        if item_min_count > 0:
            keep &= np.bincount(current.items, minlength=current.n_items)[current.items] >= item_min_count
        if not len(current) or keep.all():
            break
        current = current.select(keep)
    if not len(current):
        raise DatasetError("filter removed every user")
    return _densify(current)


def split_sizes(n: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> tuple[int, ...]:
    """Floor each part, then hand the remainder out one by one from the second part on."""
    sizes = [int(math.floor(n * f + 1e-9)) for f in fractions]
    remainder = n - sum(sizes)
    order = list(range(1, len(sizes))) + [0]
    k = 0
    while remainder > 0:
        sizes[order[k % len(order)]] += 1
        remainder -= 1
        k += 1
    return tuple(sizes)


@dataclass(frozen=True, eq=False)
class SplitBundle:
    train: Dataset
    validation: Dataset
    test: Dataset
    tuning_subset: Dataset


def split(ds: Dataset, seed: int, mode: str = "per_user", tuning_fraction: float = 0.1) -> SplitBundle:
    """Per-user random train/validation/test split.

    ``per_user`` gives 80/10/10 of each user's interactions. ``resplit_80_20``
    first holds out 20% as test, then carves the validation part out of the
    remaining 80% (70/10/20 overall).
    """
    if mode not in SPLIT_MODES:
        raise ConfigurationError(f"unknown split mode {mode!r}")
    rng = make_rng(seed, "split")
    part = np.empty(len(ds), dtype=np.int8)
    starts = np.flatnonzero(np.r_[True, ds.users[1:] != ds.users[:-1]]) if len(ds) else np.array([], int)
    ends = np.r_[starts[1:], len(ds)]
    for s, e in zip(starts.tolist(), ends.tolist()):
        n = e - s
        if mode == "per_user":
            n_train, n_val, n_test = split_sizes(n)
        else:
            n_rest, n_test = split_sizes(n, (0.8, 0.2))
            n_train, n_val = split_sizes(n_rest, (0.875, 0.125))
        labels = np.repeat(np.array([0, 1, 2], dtype=np.int8), [n_train, n_val, n_test])
        part[s:e] = labels[rng.permutation(n)]
    train = ds.select(part == 0)
    n_tune = int(round(tuning_fraction * len(train)))
    tune_idx = np.sort(make_rng(seed, "tuning").choice(len(train), size=n_tune, replace=False))
    return SplitBundle(
        train=train,
        validation=ds.select(part == 1),
        test=ds.select(part == 2),
        tuning_subset=train.select(tune_idx),
    )


# ---------------------------------------------------------------------------
# Client shards
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClientShard:
    """One client's private data. User indices stay global; the item
    vocabulary is shared by every shard."""

    client_id: int
    data: Dataset
    public_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        mask = np.ones(len(self.data), dtype=bool) if self.public_mask is None else np.asarray(self.public_mask, bool)
        if mask.shape != (len(self.data),):
            raise DatasetError("public_mask length differs from shard size")
        object.__setattr__(self, "public_mask", mask)

    @property
    def sample_count(self) -> int:
        return len(self.data)

    @property
    def users(self) -> np.ndarray:
        return self.data.user_set()

    def public(self) -> Dataset:
        return self.data.select(self.public_mask)


def partition_clients(ds: Dataset, k: int, seed: int) -> list[ClientShard]:
    """Shuffle users with ``seed`` and deal them round-robin into ``k`` shards."""
    users = ds.user_set()
    if k < 1:
        raise ConfigurationError("need at least one client")
    if k > len(users):
        raise ConfigurationError(f"{k} clients requested but only {len(users)} users")
    order = make_rng(seed, "partition").permutation(users)
    owner = np.full(ds.n_users, -1, dtype=np.int64)
    owner[order] = np.arange(len(order)) % k
    row_owner = owner[ds.users]
    shards = [ClientShard(client_id=c, data=ds.select(row_owner == c)) for c in range(k)]
    for a in range(k):
        for b in range(a + 1, k):
            assert not np.intersect1d(shards[a].users, shards[b].users).size, "client user sets overlap"
    return shards


def public_mask_for(ds: Dataset, p: float, seed: int) -> np.ndarray:
    """Flag ceil(p * n_u) uniformly chosen interactions of each user as public."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError("public ratio must lie in [0, 1]")
    mask = np.zeros(len(ds), dtype=bool)
    if not len(ds):
        return mask
    # ds is sorted by user, so each user's rows are contiguous
    starts = np.flatnonzero(np.r_[True, ds.users[1:] != ds.users[:-1]])
    ends = np.r_[starts[1:], len(ds)]
    for s, e in zip(starts.tolist(), ends.tolist()):
        n = e - s
        n_pub = min(n, math.ceil(p * n - 1e-12))
        if n_pub:
            rng = make_rng(seed, "public", int(ds.users[s]))
            mask[s + rng.choice(n, size=n_pub, replace=False)] = True
    return mask


def apply_public_ratio(shard: ClientShard, p: float, seed: int) -> ClientShard:
    """Return a copy of ``shard`` whose public mask honours ratio ``p``.

    The per-user draw is keyed by the user index, so the flags a user gets do
    not depend on which shard the user was dealt into.
    """
    return replace(shard, public_mask=public_mask_for(shard.data, p, seed))


def concat(datasets: Sequence[Dataset]) -> Dataset:
    """Union of datasets over the same vocabulary."""
    first = datasets[0]
    return replace(
        first,
        users=np.concatenate([d.users for d in datasets]),
        items=np.concatenate([d.items for d in datasets]),
        ratings=np.concatenate([d.ratings for d in datasets]),
        timestamps=np.concatenate([d.timestamps for d in datasets]),
    ).sorted()
