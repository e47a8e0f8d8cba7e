"""Interaction graphs: time slices, behaviour sequences, implicit relations and
sampled k-hop neighbourhoods.

Nodes are plain integers: user ``u`` is node ``u`` and item ``i`` is node
``n_users + i``. Everything built here is immutable once constructed and is
shared read-only between clients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset
from .seeding import make_rng

N_TIME_BUCKETS = 16

# edge kinds; also rows of the edge-kind embedding table
EDGE_INTERACTION = 0
EDGE_USER_USER = 1
EDGE_ITEM_ITEM = 2
EDGE_SOCIAL = 3
N_EDGE_KINDS = 4

_KEY_SHIFT = 1 << 40


def time_bucket(delta) -> np.ndarray:
    """floor(log2(delta)) clamped to [0, 15]; deltas below 1 second map to 0."""
    delta = np.maximum(np.asarray(delta, dtype=np.float64), 1.0)
    _, exponent = np.frexp(delta)
    return np.clip(exponent - 1, 0, N_TIME_BUCKETS - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# Time slices
# ---------------------------------------------------------------------------


def _csr(rows: np.ndarray, cols: np.ndarray, ts: np.ndarray, ratings: np.ndarray, n_rows: int):
    order = np.lexsort((cols, ts, rows))
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return indptr, cols[order], ts[order], ratings[order]


@dataclass(frozen=True, eq=False)
class BipartiteSlice:
    """User->item and item->user adjacency of one time window ``[start, end)``.

    Neighbour lists are sorted by timestamp. The two directions hold the same
    edge set.
    """

    start: int
    end: int
    n_users: int
    n_items: int
    user_indptr: np.ndarray
    user_items: np.ndarray
    user_ts: np.ndarray
    user_ratings: np.ndarray
    item_indptr: np.ndarray
    item_users: np.ndarray
    item_ts: np.ndarray
    item_ratings: np.ndarray

    @classmethod
    def from_edges(cls, users, items, ts, ratings, n_users, n_items, start, end) -> "BipartiteSlice":
        uptr, uitems, uts, urat = _csr(users, items, ts, ratings, n_users)
        iptr, iusers, its, irat = _csr(items, users, ts, ratings, n_items)
        return cls(int(start), int(end), n_users, n_items, uptr, uitems, uts, urat, iptr, iusers, its, irat)

    @property
    def n_edges(self) -> int:
        return len(self.user_items)

    def user_degree(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    def item_degree(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def items_of(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.user_indptr[u], self.user_indptr[u + 1]
        return self.user_items[s:e], self.user_ts[s:e]

    def users_of(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.item_indptr[i], self.item_indptr[i + 1]
        return self.item_users[s:e], self.item_ts[s:e]

    def contains(self, node: int) -> bool:
        if node < self.n_users:
            return self.user_indptr[node + 1] > self.user_indptr[node]
        i = node - self.n_users
        return self.item_indptr[i + 1] > self.item_indptr[i]

    def edge_list(self) -> np.ndarray:
        """(user, item, ts) rows from the user side."""
        users = np.repeat(np.arange(self.n_users), self.user_degree())
        return np.stack([users, self.user_items, self.user_ts], axis=1)


class BehaviorSequence(NamedTuple):
    owner: int
    counterparts: np.ndarray
    timestamps: np.ndarray
    ratings: np.ndarray

    def __len__(self) -> int:
        return len(self.counterparts)

    @property
    def events(self) -> list[tuple[int, int, float]]:
        return list(zip(self.counterparts.tolist(), self.timestamps.tolist(), self.ratings.tolist()))


@dataclass(frozen=True, eq=False)
class TimeSlicedGraph:
    """Ordered, non-overlapping bipartite snapshots plus a whole-window view.

    ``boundaries`` has ``len(slices) + 1`` entries; slice ``s`` covers
    ``[boundaries[s], boundaries[s + 1])``.
    """

    slices: tuple[BipartiteSlice, ...]
    boundaries: np.ndarray
    full: BipartiteSlice
    n_users: int
    n_items: int
    # last_present[s, node]: latest slice <= s in which node has an edge, -1 if none
    last_present: np.ndarray = field(repr=False)

    def user_node(self, u: int) -> int:
        return int(u)

    def item_node(self, i: int) -> int:
        return self.n_users + int(i)

    def slice_index(self, t) -> np.ndarray:
        s = np.searchsorted(self.boundaries, np.asarray(t), side="right") - 1
        return np.clip(s, 0, len(self.slices) - 1)

    def resolve_slice(self, nodes, t) -> np.ndarray:
        """Slice to use for each node at time t: the slice holding t, or the
        latest earlier one where the node was active (-1 when never active)."""
        return self.last_present[self.slice_index(t), np.asarray(nodes)]

    def last_events(self, nodes: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Most recent event strictly before t for each node.

        Returns (counterpart node, timestamp); counterpart is -1 where the
        node has no earlier history.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        cp = np.full(len(nodes), -1, dtype=np.int64)
        ts = np.zeros(len(nodes), dtype=np.int64)
        is_user = nodes < self.n_users
        f = self.full
        for mask, ptr, nbr, nts, offset, base in (
            (is_user, f.user_indptr, f.user_items, f.user_ts, self.n_users, 0),
            (~is_user, f.item_indptr, f.item_users, f.item_ts, 0, self.n_users),
        ):
            if not mask.any():
                continue
            ent = nodes[mask] - base
            owner = np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))
            keys = owner * _KEY_SHIFT + nts
            pos = np.searchsorted(keys, ent * _KEY_SHIFT + t[mask], side="left") - 1
            ok = pos >= ptr[ent]
            sub_cp = np.full(len(ent), -1, dtype=np.int64)
            sub_ts = np.zeros(len(ent), dtype=np.int64)
            sub_cp[ok] = nbr[pos[ok]] + offset
            sub_ts[ok] = nts[pos[ok]]
            cp[mask] = sub_cp
            ts[mask] = sub_ts
        return cp, ts


def build_time_slices(train: Dataset, slice_length: int | None = None, n_slices: int = 8) -> TimeSlicedGraph:
    """Bucket training interactions into half-open windows of ``slice_length`` seconds.

    Without an explicit length the time range is cut into ``n_slices`` equal
    windows. An interaction sitting exactly on a boundary belongs to the later
    window.
    """
    if not len(train):
        raise ValueError("cannot slice an empty dataset")
    t0, t1 = int(train.timestamps.min()), int(train.timestamps.max())
    if int(train.timestamps.max()) >= _KEY_SHIFT:
        raise ValueError("timestamps too large")
    if slice_length is None:
        slice_length = max(1, math.ceil((t1 - t0 + 1) / n_slices))
    if slice_length <= 0:
        raise ValueError("slice_length must be positive")
    count = (t1 - t0) // slice_length + 1
    boundaries = t0 + slice_length * np.arange(count + 1, dtype=np.int64)
    which = (train.timestamps - t0) // slice_length
    slices = []
    for s in range(count):
        m = which == s
        slices.append(BipartiteSlice.from_edges(
            train.users[m], train.items[m], train.timestamps[m], train.ratings[m],
            train.n_users, train.n_items, boundaries[s], boundaries[s + 1]))
    full = BipartiteSlice.from_edges(train.users, train.items, train.timestamps, train.ratings,
                                     train.n_users, train.n_items, boundaries[0], boundaries[-1])
    presence = np.stack([np.r_[sl.user_degree() > 0, sl.item_degree() > 0] for sl in slices])
    last = np.where(presence, np.arange(count)[:, None], -1)
    last = np.maximum.accumulate(last, axis=0)
    return TimeSlicedGraph(tuple(slices), boundaries, full, train.n_users, train.n_items, last)


def build_behavior_sequence(graph: TimeSlicedGraph, entity: int, t: float, T: int) -> BehaviorSequence:
    """The ``T`` most recent interactions of ``entity`` strictly before ``t``, oldest first."""
    f = graph.full
    if entity < graph.n_users:
        nbr, ts = f.items_of(entity)
        s, e = f.user_indptr[entity], f.user_indptr[entity + 1]
        ratings = f.user_ratings[s:e]
        nbr = nbr + graph.n_users
    else:
        i = entity - graph.n_users
        nbr, ts = f.users_of(i)
        s, e = f.item_indptr[i], f.item_indptr[i + 1]
        ratings = f.item_ratings[s:e]
    stop = len(ts) if math.isinf(t) and t > 0 else int(np.searchsorted(ts, t, side="left"))
    start = max(0, stop - T)
    return BehaviorSequence(int(entity), nbr[start:stop], ts[start:stop], ratings[start:stop])


# ---------------------------------------------------------------------------
# Implicit relations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImplicitEdges:
    """Weighted directed edges between entities of one kind (local indices)."""

    kind: str  # "user-user" or "item-item"
    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    indptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        order = np.lexsort((self.dst, self.src))
        for name in ("src", "dst", "weight"):
            object.__setattr__(self, name, np.asarray(getattr(self, name))[order])
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.src, minlength=self.n), out=indptr[1:])
        object.__setattr__(self, "indptr", indptr)

    @classmethod
    def empty(cls, kind: str, n: int) -> "ImplicitEdges":
        return cls(kind, n, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.src)

    def neighbors(self, v: int) -> np.ndarray:
        return self.dst[self.indptr[v]:self.indptr[v + 1]]

    def as_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def dump(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for s, d, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
                fh.write(f"{self.kind}\t{s}\t{d}\t{w!r}\n")


def _top_m(n: int, src: np.ndarray, dst: np.ndarray, w: np.ndarray, top_m: int):
    # per source: weight descending, then target ascending
    order = np.lexsort((dst, -w, src))
    src, dst, w = src[order], dst[order], w[order]
    starts = np.searchsorted(src, src, side="left")
    rank = np.arange(len(src)) - starts
    keep = rank < top_m
    return src[keep], dst[keep], w[keep]


def follower_matrix(train: Dataset) -> sp.csr_matrix:
    """S[j, i] = 1 when user j follows user i.

    Temporal-precedence proxy for a follow relation: j follows i when both
    interacted with some item and j's first interaction with it came strictly
    after i's.
    """
    n = train.n_users
    if not len(train):
        return sp.csr_matrix((n, n))
    key = train.items * n + train.users
    order = np.lexsort((train.timestamps, key))
    key_s = key[order]
    first = np.r_[True, key_s[1:] != key_s[:-1]]
    fu = train.users[order][first]
    fi = train.items[order][first]
    ft = train.timestamps[order][first]
    by_item = np.lexsort((ft, fi))
    fu, fi, ft = fu[by_item], fi[by_item], ft[by_item]
    starts = np.flatnonzero(np.r_[True, fi[1:] != fi[:-1]])
    ends = np.r_[starts[1:], len(fi)]
    rows, cols = [], []
    for s, e in zip(starts.tolist(), ends.tolist()):
        if e - s < 2:
            continue
        u, t = fu[s:e], ft[s:e]
        later = t[:, None] > t[None, :]  # later[a, b]: a came after b
        a, b = np.nonzero(later)
        rows.append(u[a])
        cols.append(u[b])
    if not rows:
        return sp.csr_matrix((n, n))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    m = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    m.data[:] = 1.0
    return m


def implicit_user_relations(train: Dataset, tau: int = 2, top_m: int = 20) -> ImplicitEdges:
    """Link users that share at least ``tau`` common followers.

    The edge weight is the common-follower count. Each source keeps its
    ``top_m`` heaviest edges.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    S = follower_matrix(train)
    common = (S.T @ S).tocoo()
    keep = (common.row != common.col) & (common.data >= tau)
    src, dst, w = _top_m(train.n_users, common.row[keep].astype(np.int64),
                         common.col[keep].astype(np.int64), common.data[keep], top_m)
    return ImplicitEdges("user-user", train.n_users, src, dst, w)


def implicit_item_relations(train: Dataset, top_m: int = 20, shrinkage: float = 5.0) -> ImplicitEdges:
    """Item similarity: cosine over co-raters, damped by n_ab / (n_ab + shrinkage)."""
    if shrinkage < 0:
        raise ValueError("shrinkage must be >= 0")
    n_i = train.n_items
    if not len(train):
        return ImplicitEdges.empty("item-item", n_i)
    # one rating per (user, item): the latest
    order = np.lexsort((train.timestamps, train.items, train.users))
    u, i, r = train.users[order], train.items[order], train.ratings[order]
    last = np.r_[u[1:] != u[:-1], True] | np.r_[i[1:] != i[:-1], True]
    u, i, r = u[last], i[last], r[last]
    shape = (train.n_users, n_i)
    B = sp.csr_matrix((np.ones(len(u)), (u, i)), shape=shape)
    R = sp.csr_matrix((r, (u, i)), shape=shape)
    R2 = sp.csr_matrix((r * r, (u, i)), shape=shape)
    co = (B.T @ B).tocoo()
    keep = co.row != co.col
    a, b, n_ab = co.row[keep], co.col[keep], co.data[keep]
    if not len(a):
        return ImplicitEdges.empty("item-item", n_i)
    dot = np.asarray((R.T @ R).tocsr()[a, b]).ravel()
    sq = (R2.T @ B).tocsr()
    na = np.asarray(sq[a, b]).ravel()
    nb = np.asarray(sq[b, a]).ravel()
    denom = np.sqrt(na * nb)
    cos = np.divide(dot, denom, out=np.zeros_like(dot), where=denom > 0)
    w = cos * n_ab / (n_ab + shrinkage)
    ok = (w > 0) & np.isfinite(w)
    src, dst, w = _top_m(n_i, a[ok].astype(np.int64), b[ok].astype(np.int64), w[ok], top_m)
    return ImplicitEdges("item-item", n_i, src, dst, w)


def metapath_neighbors(
    train: Dataset,
    implicit_u: ImplicitEdges,
    implicit_i: ImplicitEdges,
    entity: int,
    fanout: int | None = None,
    social: ImplicitEdges | None = None,
) -> dict[str, np.ndarray]:
    """Neighbour sets along the user and item meta-paths.

    Returned ids are local indices (users and items numbered separately).
    ``social`` holds explicit user-user links when the data has any; without
    it the U-U and U-U-I paths are empty.
    """
    n_users = train.n_users

    def user_items(us: Iterable[int]) -> np.ndarray:
        us = np.asarray(list(us), dtype=np.int64)
        return np.unique(train.items[np.isin(train.users, us)])

    def item_users(its: Iterable[int]) -> np.ndarray:
        its = np.asarray(list(its), dtype=np.int64)
        return np.unique(train.users[np.isin(train.items, its)])

    def cap(a: np.ndarray) -> np.ndarray:
        a = np.unique(a)
        return a if fanout is None else a[:fanout]

    if entity < n_users:
        u = entity
        soc = social.neighbors(u) if social is not None else np.zeros(0, np.int64)
        imp = implicit_u.neighbors(u)
        paths = {
            "U-I": user_items([u]),
            "U-U": soc,
            "U-Ū": imp,
            "U-U-I": user_items(soc),
            "U-Ū-I": user_items(imp),
        }
    else:
        i = entity - n_users
        imp = implicit_i.neighbors(i)
        paths = {
            "I-U": item_users([i]),
            "I-Ī": imp,
            "I-Ī-U": item_users(imp),
        }
    return {k: cap(v) for k, v in paths.items()}


# ---------------------------------------------------------------------------
# Sampled subgraphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Subgraph:
    """A sampled k-hop tree around ``nodes[0]``.

    Node ``p`` (p >= 1) hangs off ``parent[p]`` through an edge of kind
    ``edge_kind[p]`` with time bucket ``edge_bucket[p]``. Nodes are stored in
    breadth-first order, so a parent always precedes its children.
    """

    nodes: np.ndarray
    hop: np.ndarray
    parent: np.ndarray
    edge_kind: np.ndarray
    edge_bucket: np.ndarray
    cold: bool = False

    @classmethod
    def singleton(cls, root: int, cold: bool = False) -> "Subgraph":
        z = np.zeros(1, dtype=np.int64)
        return cls(np.array([root], np.int64), z, z - 1, z - 1, z - 1, cold)

    @property
    def root(self) -> int:
        return int(self.nodes[0])

    @property
    def depth(self) -> int:
        return int(self.hop.max())

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def layers(self) -> list[np.ndarray]:
        return [self.nodes[self.hop == h] for h in range(self.depth + 1)]

    @property
    def n_edges(self) -> int:
        return len(self.nodes) - 1

    def edges(self) -> np.ndarray:
        """(parent node, child node) rows."""
        return np.stack([self.nodes[self.parent[1:]], self.nodes[1:]], axis=1)

    def edge_set(self) -> set[frozenset]:
        return {frozenset(e) for e in self.edges().tolist()}

    def n_components(self) -> int:
        return int(np.sum(self.parent < 0))


@dataclass(frozen=True, eq=False)
class UnionAdjacency:
    """CSR adjacency over all nodes of one slice plus the implicit edges.

    Repeated interactions between the same pair collapse to the most recent
    one; each neighbour carries its edge kind and time bucket (measured from
    the slice end; implicit edges use bucket 0).
    """

    n_users: int
    indptr: np.ndarray
    nbr: np.ndarray
    kind: np.ndarray
    bucket: np.ndarray
    active: np.ndarray  # nodes with at least one interaction in the slice

    def neighbors(self, node: int) -> np.ndarray:
        return self.nbr[self.indptr[node]:self.indptr[node + 1]]


def union_adjacency(
    sl: BipartiteSlice,
    implicit_u: ImplicitEdges | None = None,
    implicit_i: ImplicitEdges | None = None,
    social: ImplicitEdges | None = None,
) -> UnionAdjacency:
    n_u, n_i = sl.n_users, sl.n_items
    n = n_u + n_i
    el = sl.edge_list()
    u, i, ts = el[:, 0], el[:, 1] + n_u, el[:, 2]
    b = time_bucket(sl.end - ts)
    src = [u, i]
    dst = [i, u]
    kinds = [np.full(len(u), EDGE_INTERACTION), np.full(len(u), EDGE_INTERACTION)]
    buckets = [b, b]
    stamp = [ts, ts]
    for edges, kind, offset in ((implicit_u, EDGE_USER_USER, 0), (social, EDGE_SOCIAL, 0),
                                (implicit_i, EDGE_ITEM_ITEM, n_u)):
        if edges is not None and len(edges):
            src.append(edges.src + offset)
            dst.append(edges.dst + offset)
            kinds.append(np.full(len(edges), kind))
            buckets.append(np.zeros(len(edges), np.int64))
            stamp.append(np.full(len(edges), -1))
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    kinds = np.concatenate(kinds)
    buckets = np.concatenate(buckets)
    stamp = np.concatenate(stamp)
    # per (src, dst): interaction edges win over implicit ones, latest interaction first
    order = np.lexsort((-stamp, kinds, dst, src))
    src, dst, kinds, buckets = src[order], dst[order], kinds[order], buckets[order]
    first = np.r_[True, (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])]
    src, dst, kinds, buckets = src[first], dst[first], kinds[first], buckets[first]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    active = np.r_[sl.user_degree() > 0, sl.item_degree() > 0]
    return UnionAdjacency(n_u, indptr, dst, kinds, buckets, active)


def sample_tree(adj: UnionAdjacency, root: int, k: int, fanout: int, seed: int) -> Subgraph:
    """Breadth-first sample: each frontier node keeps at most ``fanout`` unvisited neighbours."""
    if k < 1 or fanout < 1:
        raise ValueError("k and fanout must be >= 1")
    if not adj.active[root]:
        return Subgraph.singleton(root, cold=True)
    rng = None
    indptr, nbr = adj.indptr, adj.nbr
    nodes, hops, parents, eidx = [root], [0], [-1], [-1]
    visited = {root}
    frontier = [0]
    for h in range(1, k + 1):
        nxt = []
        for pos in frontier:
            s, e = int(indptr[nodes[pos]]), int(indptr[nodes[pos] + 1])
            cand = [j for j, x in enumerate(nbr[s:e].tolist(), start=s) if x not in visited]
            if len(cand) > fanout:
                if rng is None:
                    rng = make_rng(seed, "khop", root)
                pick = np.sort(rng.choice(len(cand), size=fanout, replace=False)).tolist()
                cand = [cand[j] for j in pick]
            for j in cand:
                x = int(nbr[j])
                visited.add(x)
                nxt.append(len(nodes))
                nodes.append(x)
                hops.append(h)
                parents.append(pos)
                eidx.append(j)
        frontier = nxt
        if not frontier:
            break
    eidx = np.array(eidx, np.int64)
    kinds = np.where(eidx >= 0, adj.kind[eidx], -1)
    buckets = np.where(eidx >= 0, adj.bucket[eidx], -1)
    return Subgraph(np.array(nodes, np.int64), np.array(hops, np.int64), np.array(parents, np.int64),
                    kinds, buckets)


def sample_khop(
    sl: BipartiteSlice,
    implicit_u: ImplicitEdges | None,
    implicit_i: ImplicitEdges | None,
    root: int,
    k: int,
    fanout: int,
    seed: int,
    social: ImplicitEdges | None = None,
) -> Subgraph:
    """Seeded k-hop sample over the slice's interactions plus implicit edges.

    A root with no interaction in the slice yields a cold singleton. Callers
    sampling many roots from one slice should build :func:`union_adjacency`
    once and use :func:`sample_tree`.
    """
    return sample_tree(union_adjacency(sl, implicit_u, implicit_i, social), root, k, fanout, seed)


def drop_node(subgraph: Subgraph, rate: float, seed: int) -> Subgraph:
    """Drop each non-root node with probability ``rate``; prune what gets cut off."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    n = len(subgraph)
    if rate == 0.0 or n == 1:
        return subgraph
    keep = np.ones(n, dtype=bool)
    keep[1:] = make_rng(seed, "dropnode").random(n - 1) >= rate
    for p in range(1, n):  # breadth-first order: parents already decided
        if keep[p] and not keep[subgraph.parent[p]]:
            keep[p] = False
    new_pos = np.cumsum(keep) - 1
    parent = subgraph.parent[keep]
    parent = np.where(parent >= 0, new_pos[np.maximum(parent, 0)], -1)
    return Subgraph(subgraph.nodes[keep], subgraph.hop[keep], parent,
                    subgraph.edge_kind[keep], subgraph.edge_bucket[keep], subgraph.cold)


# ---------------------------------------------------------------------------
# Graph context handed to the model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphConfig:
    n_slices: int = 8
    slice_length: int | None = None
    sequence_length: int = 20
    hops: int = 2
    fanout: int = 5
    dropnode_rate: float = 0.25
    tau: int = 2
    top_m: int = 20
    item_shrinkage: float = 5.0


@dataclass(frozen=True, eq=False)
class GraphContext:
    """Everything the model reads from the graph side for one view of the data."""

    graph: TimeSlicedGraph
    implicit_u: ImplicitEdges | None
    implicit_i: ImplicitEdges | None
    config: GraphConfig
    social: ImplicitEdges | None = None
    # user x item incidence over the whole window, for the no-item-graph ablation
    interacted: sp.csr_matrix | None = field(default=None, repr=False)
    adjacency: tuple[UnionAdjacency, ...] = field(default=(), repr=False)

    @property
    def n_users(self) -> int:
        return self.graph.n_users

    @property
    def n_items(self) -> int:
        return self.graph.n_items

    def subgraph(self, node: int, slice_idx: int, seed: int, train: bool) -> Subgraph:
        if slice_idx < 0:
            return Subgraph.singleton(node, cold=True)
        sub = sample_tree(self.adjacency[slice_idx], node, self.config.hops, self.config.fanout, seed)
        if train and self.config.dropnode_rate > 0:
            sub = drop_node(sub, self.config.dropnode_rate, seed)
        return sub

    def edge_kinds_present(self) -> set[int]:
        return {int(k) for adj in self.adjacency for k in np.unique(adj.kind)}


def build_graph_context(
    data: Dataset,
    config: GraphConfig = GraphConfig(),
    implicit_user: bool = True,
    implicit_item: bool = True,
    social: ImplicitEdges | None = None,
) -> GraphContext:
    """Slice ``data`` and derive implicit relations from it."""
    graph = build_time_slices(data, config.slice_length, config.n_slices)
    iu = implicit_user_relations(data, config.tau, config.top_m) if implicit_user else None
    ii = implicit_item_relations(data, config.top_m, config.item_shrinkage) if implicit_item else None
    inter = sp.csr_matrix((np.ones(len(data)), (data.users, data.items)), shape=(data.n_users, data.n_items))
    inter.data[:] = 1.0
    adjacency = tuple(union_adjacency(sl, iu, ii, social) for sl in graph.slices)
    return GraphContext(graph, iu, ii, config, social, inter, adjacency)
