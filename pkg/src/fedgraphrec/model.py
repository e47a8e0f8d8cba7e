"""Spatio-temporal graph recommender: parameters, forward pass and gradients.

A prediction for ``(u, i, t)`` concatenates four d-vectors and feeds them to
an MLP with a sigmoid output:

* ``e_u`` / ``e_i``: temporal embedding of the most recent event before ``t``
  (counterpart embedding + time-bucket embedding), or the entity's own base
  embedding when it has no history;
* ``X_u`` / ``X_i``: layer-averaged root states of multi-head attention
  message passing over the sampled k-hop subgraph of the entity.

The batched forward pass builds one union graph out of every subgraph needed
by the batch and runs the whole computation on :mod:`fedgraphrec.tape`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import tape as T
from .graphs import (
    N_EDGE_KINDS,
    N_TIME_BUCKETS,
    BehaviorSequence,
    GraphContext,
    Subgraph,
    time_bucket,
)
from .seeding import derive_seed, make_rng


class NumericalError(FloatingPointError):
    """Raised when a loss or parameter stops being finite."""


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 16
    heads: int = 2
    layers: int = 2
    hops: int = 2
    mlp_hidden: tuple[int, ...] = (32,)
    leaky_slope: float = 0.2
    attention: bool = True
    item_graph: bool = True
    user_cardinalities: tuple[int, ...] = ()
    item_cardinalities: tuple[int, ...] = ()


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


class ModelParams:
    """Named float64 tensors in a fixed order.

    Gradients use the same container (``GradientSet``), so everything that
    works on parameters works on gradients too.
    """

    __slots__ = ("tensors",)

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors or np.shape(value) != self.tensors[name].shape:
            raise KeyError(f"cannot set {name!r}: unknown tensor or shape change")
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.tensors.items()}

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()]) if self.tensors else np.zeros(0)

    def unflatten(self, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ValueError(f"expected {self.size} values, got {flat.shape}")
        out, pos = {}, 0
        for k, v in self.tensors.items():
            out[k] = flat[pos:pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return ModelParams(out)

    def congruent(self, other: "ModelParams") -> bool:
        return self.shapes() == other.shapes() and self.names == other.names

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def array_equal(self, other: "ModelParams") -> bool:
        return self.congruent(other) and all(np.array_equal(v, other[k]) for k, v in self.tensors.items())

    def max_abs_diff(self, other: "ModelParams") -> float:
        return float(max((np.max(np.abs(v - other[k])) if v.size else 0.0) for k, v in self.tensors.items()))


GradientSet = ModelParams


def param_shapes(n_users: int, n_items: int, cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.dim
    shapes: dict[str, tuple[int, ...]] = {
        "user_table": (n_users, d),
        "item_table": (n_items, d),
        "time_bucket_table": (N_TIME_BUCKETS, d),
        "edge_kind_table": (N_EDGE_KINDS, d),
    }
    for f, card in enumerate(cfg.user_cardinalities):
        shapes[f"user_field_{f}"] = (card, d)
    for f, card in enumerate(cfg.item_cardinalities):
        shapes[f"item_field_{f}"] = (card, d)
    for n in range(cfg.heads):
        shapes[f"att_W_{n}"] = (d, d)
        shapes[f"att_a_{n}"] = (2 * d,)
    for k in range(1, cfg.hops + 1):
        shapes[f"hop_W_{k}"] = (2 * d, d)
        shapes[f"hop_b_{k}"] = (d,)
    shapes["combine_proj"] = (cfg.heads * d, d)
    widths = [4 * d, *cfg.mlp_hidden, 1]
    for j in range(len(widths) - 1):
        shapes[f"mlp_W_{j}"] = (widths[j], widths[j + 1])
        shapes[f"mlp_b_{j}"] = (widths[j + 1],)
    return shapes


def init_params(n_users: int, n_items: int, cfg: ModelConfig, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights and tables, zero biases."""
    bound = 1.0 / math.sqrt(cfg.dim)
    tensors = {}
    for name, shape in param_shapes(n_users, n_items, cfg).items():
        if "_b_" in name:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = make_rng(seed, "init", name).uniform(-bound, bound, size=shape)
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# Building blocks (forward on the tape)
# ---------------------------------------------------------------------------


class _Leaves:
    """Tape leaves for the parameters, created lazily so untouched tensors
    stay off the tape and keep a zero gradient."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.vars: dict[str, T.Var] = {}

    def __getitem__(self, name: str) -> T.Var:
        v = self.vars.get(name)
        if v is None:
            v = self.vars[name] = T.Var(self.params[name], name=name)
        return v

    def gradients(self) -> GradientSet:
        out = {}
        for name, value in self.params.items():
            v = self.vars.get(name)
            out[name] = v.grad.copy() if v is not None and v.grad is not None else np.zeros_like(value)
        return ModelParams(out)


def _entity_embed(P: _Leaves, nodes: np.ndarray, ctx: "Context") -> T.Var:
    """Base embedding of mixed user/item nodes plus their feature-field embeddings."""
    n_users = ctx.n_users
    nodes = np.asarray(nodes, dtype=np.int64)
    is_user = nodes < n_users
    parts = []
    if is_user.any():
        parts.append((np.flatnonzero(is_user), nodes[is_user], "user"))
    if (~is_user).any():
        parts.append((np.flatnonzero(~is_user), nodes[~is_user] - n_users, "item"))
    if len(parts) == 1:
        _, idx, kind = parts[0]
        return _with_fields(P, T.take_rows(P[f"{kind}_table"], idx), idx, kind, ctx)
    rows = []
    for pos, idx, kind in parts:
        rows.append((pos, _with_fields(P, T.take_rows(P[f"{kind}_table"], idx), idx, kind, ctx)))
    return _put_rows(len(nodes), rows)


def _with_fields(P: _Leaves, base: T.Var, idx: np.ndarray, kind: str, ctx: "Context") -> T.Var:
    feats = ctx.user_features if kind == "user" else ctx.item_features
    if feats is None or feats.shape[1] == 0:
        return base
    terms = [base] + [T.take_rows(P[f"{kind}_field_{f}"], feats[idx, f]) for f in range(feats.shape[1])]
    return T.add_n(terms)


def _put_rows(n: int, rows: Sequence[tuple[np.ndarray, T.Var]]) -> T.Var:
    d = rows[0][1].shape[1]
    value = np.zeros((n, d))
    for pos, v in rows:
        value[pos] = v.value
    out = T.Var(value, tuple(v for _, v in rows))

    def back(g):
        for pos, v in rows:
            v._accumulate(g[pos])

    out._backward = back
    return out


def _attention(P: _Leaves, h: T.Var, tgt: np.ndarray, src: np.ndarray, n: int, cfg: ModelConfig,
               head_proj: list[T.Var] | None = None, alphas: list | None = None) -> T.Var:
    """Multi-head attention messages for every target node.

    Per head: score = leaky_relu(a . [W h_tgt || W h_src]), softmax over the
    sources of each target, message = relu(sum alpha W h_src). Heads are
    concatenated and projected back to d. Targets without sources get zeros.
    """
    d = cfg.dim
    heads = []
    for k in range(cfg.heads):
        Wh = head_proj[k] if head_proj is not None else T.matmul(h, P[f"att_W_{k}"])
        if len(tgt) == 0:
            heads.append(T.Var(np.zeros((n, d))))
            continue
        if cfg.attention:
            a = P[f"att_a_{k}"]
            a_self = T.matmul(Wh, _slice_vec(a, 0, d))
            a_nbr = T.matmul(Wh, _slice_vec(a, d, 2 * d))
            scores = T.leaky_relu(T.add(T.take_rows(a_self, tgt), T.take_rows(a_nbr, src)), cfg.leaky_slope)
            alpha = T.segment_softmax(scores, tgt, n)
        else:
            counts = np.bincount(tgt, minlength=n).astype(np.float64)
            alpha = T.const(1.0 / counts[tgt])
        if alphas is not None:
            alphas.append((tgt.copy(), alpha.value.copy()))
        weighted = T.mul(T.take_rows(Wh, src), _column(alpha))
        heads.append(T.relu(T.segment_sum(weighted, tgt, n)))
    cat = heads[0] if len(heads) == 1 else T.concat(heads, axis=1)
    return T.matmul(cat, P["combine_proj"])


def _slice_vec(v: T.Var, start: int, stop: int) -> T.Var:
    out = T.Var(v.value[start:stop], (v,))

    def back(g):
        full = np.zeros_like(v.value)
        full[start:stop] = g
        v._accumulate(full)

    out._backward = back
    return out


def _column(v: T.Var) -> T.Var:
    out = T.Var(v.value[:, None], (v,))
    out._backward = lambda g: v._accumulate(g[:, 0])
    return out


class _Union(NamedTuple):
    nodes: np.ndarray        # node id per union position
    graph_of: np.ndarray     # subgraph index per union position
    roots: np.ndarray        # union position of each subgraph root
    pairs: list              # per hop channel k (1..K): (tgt, src) union positions
    edge_graph: np.ndarray   # subgraph index per edge
    edge_kind: np.ndarray
    edge_bucket: np.ndarray
    edge_weight: np.ndarray  # 1 / (|edges of component| * |components|)
    n_graphs: int


def _union(subgraphs: Sequence[Subgraph], hops: int) -> _Union:
    offsets = np.zeros(len(subgraphs) + 1, dtype=np.int64)
    np.cumsum([len(s) for s in subgraphs], out=offsets[1:])
    nodes = np.concatenate([s.nodes for s in subgraphs])
    graph_of = np.repeat(np.arange(len(subgraphs)), np.diff(offsets))
    parent_local = np.concatenate([s.parent for s in subgraphs])
    parent = np.where(parent_local >= 0, parent_local + offsets[graph_of], -1)
    pairs = []
    anc = parent.copy()
    for _ in range(hops):
        ok = anc >= 0
        pairs.append((anc[ok], np.flatnonzero(ok)))
        anc = np.where(ok, parent[np.maximum(anc, 0)], -1)
        anc[~ok] = -1
    has_edge = parent >= 0
    edge_graph = graph_of[has_edge]
    n_edges = np.bincount(edge_graph, minlength=len(subgraphs)).astype(np.float64)
    n_comp = np.array([max(s.n_components(), 1) for s in subgraphs], dtype=np.float64)
    # sampled subgraphs are trees hanging off one root, so each has one component
    weight = 1.0 / (n_edges[edge_graph] * n_comp[edge_graph])
    return _Union(
        nodes, graph_of, offsets[:-1], pairs, edge_graph,
        np.concatenate([s.edge_kind for s in subgraphs])[has_edge],
        np.concatenate([s.edge_bucket for s in subgraphs])[has_edge],
        weight, len(subgraphs),
    )


def _spatial(P: _Leaves, subgraphs: Sequence[Subgraph], ctx: "Context", trace: dict | None = None) -> T.Var:
    """Layer-averaged root state of every subgraph, one row per subgraph."""
    cfg = ctx.model
    U = _union(subgraphs, cfg.hops)
    n = len(U.nodes)
    h = _entity_embed(P, U.nodes, ctx)
    if len(U.edge_graph):
        e = T.add(T.take_rows(P["time_bucket_table"], U.edge_bucket), T.take_rows(P["edge_kind_table"], U.edge_kind))
        edge_term = T.segment_sum(T.scale(e, U.edge_weight[:, None]), U.edge_graph, U.n_graphs)
        edge_term = T.take_rows(edge_term, U.graph_of)
    else:
        edge_term = None
    if trace is not None:
        trace["h"] = [h.value]
        trace["hop_states"] = []
        trace["alphas"] = []
        trace["edge_term"] = None if edge_term is None else edge_term.value
    root_states = []
    for _ in range(cfg.layers):
        proj = [T.matmul(h, P[f"att_W_{k}"]) for k in range(cfg.heads)]
        hop_states = []
        for k, (tgt, src) in enumerate(U.pairs, start=1):
            alphas = trace["alphas"] if trace is not None else None
            mes = _attention(P, h, tgt, src, n, cfg, proj, alphas)
            if edge_term is not None:
                mes = T.add(mes, edge_term)
            z = T.add(T.matmul(T.concat([mes, h], axis=1), P[f"hop_W_{k}"]), P[f"hop_b_{k}"])
            hop_states.append(T.relu(z))
        h = T.scale(T.add_n(hop_states), 1.0 / len(hop_states))
        if trace is not None:
            trace["hop_states"].append([s.value for s in hop_states])
            trace["h"].append(h.value)
        root_states.append(T.take_rows(h, U.roots))
    return T.scale(T.add_n(root_states), 1.0 / len(root_states))


def _temporal(P: _Leaves, nodes: np.ndarray, t: np.ndarray, ctx: "Context") -> T.Var:
    """Embedding of each node's latest event before t (base embedding if none)."""
    cp, ts = ctx.graph.graph.last_events(nodes, t)
    has = cp >= 0
    base = _entity_embed(P, np.where(has, cp, nodes), ctx)
    if not has.any():
        return base
    buckets = time_bucket(t - ts)
    tb = T.take_rows(P["time_bucket_table"], buckets)
    return T.add(base, T.scale(tb, has[:, None].astype(np.float64)))


def _mlp(P: _Leaves, x: T.Var, ctx: "Context") -> T.Var:
    n_layers = len(ctx.model.mlp_hidden) + 1
    for j in range(n_layers):
        x = T.add(T.matmul(x, P[f"mlp_W_{j}"]), P[f"mlp_b_{j}"])
        if j < n_layers - 1:
            x = T.relu(x)
    return x


# ---------------------------------------------------------------------------
# Context and subgraph sampling
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Context:
    """Model configuration plus the graph view predictions are made in."""

    model: ModelConfig
    graph: GraphContext
    user_features: np.ndarray | None = None
    item_features: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return self.graph.n_users

    @property
    def n_items(self) -> int:
        return self.graph.n_items


class SubgraphSampler:
    """Caches one sampled subgraph per (node, slice) for a fixed seed.

    The per-root seed is derived from ``(seed, node, slice)``, so which
    subgraph a root gets does not depend on the order of requests.
    """

    def __init__(self, ctx: Context, seed: int, train: bool):
        self.ctx = ctx
        self.seed = seed
        self.train = train
        self.cache: dict[tuple[int, int], Subgraph] = {}

    def get(self, node: int, slice_idx: int) -> Subgraph:
        key = (node, slice_idx)
        sub = self.cache.get(key)
        if sub is None:
            seed = derive_seed(self.seed, "subgraph", node, slice_idx + 1)
            sub = self.cache[key] = self.ctx.graph.subgraph(node, slice_idx, seed, self.train)
        return sub


class Batch(NamedTuple):
    users: np.ndarray
    items: np.ndarray
    times: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    @classmethod
    def from_rows(cls, rows: Sequence[tuple]) -> "Batch":
        u, i, t, r = zip(*rows) if rows else ((), (), (), ())
        return cls(np.asarray(u, np.int64), np.asarray(i, np.int64), np.asarray(t, np.int64), np.asarray(r, np.float64))

    def take(self, idx) -> "Batch":
        return Batch(self.users[idx], self.items[idx], self.times[idx], self.labels[idx])


def _representations(P: _Leaves, nodes: np.ndarray, t: np.ndarray, ctx: Context, sampler: SubgraphSampler):
    """(temporal, spatial) rows for each (node, t); spatial rows are shared per root."""
    temporal = _temporal(P, nodes, t, ctx)
    if not ctx.model.item_graph:
        return temporal, _interaction_mean(P, nodes, ctx)
    slices = ctx.graph.graph.resolve_slice(nodes, t)
    keys = np.stack([nodes, slices], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    subs = [sampler.get(int(nd), int(sl)) for nd, sl in uniq.tolist()]
    spatial = _spatial(P, subs, ctx)
    return temporal, T.take_rows(spatial, inverse.ravel())


def _interaction_mean(P: _Leaves, nodes: np.ndarray, ctx: Context) -> T.Var:
    """No-graph variant: users get the mean embedding of their items and vice versa."""
    inter = ctx.graph.interacted
    n_users = ctx.n_users
    is_user = nodes < n_users
    rows = []
    if is_user.any():
        m = _row_normalise(inter[nodes[is_user]])
        rows.append((np.flatnonzero(is_user), T.spmm(m, P["item_table"])))
    if (~is_user).any():
        m = _row_normalise(inter.T.tocsr()[nodes[~is_user] - n_users])
        rows.append((np.flatnonzero(~is_user), T.spmm(m, P["user_table"])))
    return _put_rows(len(nodes), rows)


def _row_normalise(m):
    deg = np.asarray(m.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return m.multiply(inv[:, None]).tocsr()


def _forward(P: _Leaves, batch: Batch, ctx: Context, sampler: SubgraphSampler) -> T.Var:
    n_users = ctx.n_users
    nodes = np.concatenate([batch.users, batch.items + n_users])
    times = np.concatenate([batch.times, batch.times])
    temporal, spatial = _representations(P, nodes, times, ctx, sampler)
    b = len(batch)
    ub, ib = np.arange(b), np.arange(b, 2 * b)
    x = T.concat([T.take_rows(temporal, ub), T.take_rows(temporal, ib),
                  T.take_rows(spatial, ub), T.take_rows(spatial, ib)], axis=1)
    return T.sigmoid(_mlp(P, x, ctx))


def _check_batch(batch: Batch, ctx: Context) -> None:
    if len(batch.users) and (batch.users.min() < 0 or batch.users.max() >= ctx.n_users):
        raise IndexError("user index out of range")
    if len(batch.items) and (batch.items.min() < 0 or batch.items.max() >= ctx.n_items):
        raise IndexError("item index out of range")


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def predict_batch(batch: Batch, ctx: Context, params: ModelParams, sampler: SubgraphSampler | None = None) -> np.ndarray:
    """Interaction probabilities for every (user, item, time) row of ``batch``."""
    _check_batch(batch, ctx)
    if not len(batch):
        return np.zeros(0)
    sampler = sampler or SubgraphSampler(ctx, 0, train=False)
    return _forward(_Leaves(params), batch, ctx, sampler).value[:, 0]


def predict(u: int, i: int, t: int, ctx: Context, params: ModelParams, sampler: SubgraphSampler | None = None) -> float:
    return float(predict_batch(Batch.from_rows([(u, i, t, 0.0)]), ctx, params, sampler)[0])


def forward_backward(batch: Batch, ctx: Context, params: ModelParams,
                     sampler: SubgraphSampler | None = None) -> tuple[float, GradientSet]:
    """Halved mean squared error of the batch and its exact gradient."""
    if not len(batch):
        raise ValueError("empty batch")
    _check_batch(batch, ctx)
    sampler = sampler or SubgraphSampler(ctx, 0, train=False)
    P = _Leaves(params)
    pred = _forward(P, batch, ctx, sampler)
    resid = T.add(pred, T.const(-batch.labels[:, None]))
    loss = T.scale(T.total(T.square(resid)), 1.0 / (2 * len(batch)))
    value = float(loss.value)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value} on a batch of {len(batch)}")
    loss.backward()
    return value, P.gradients()


def embed_sequence(seq: BehaviorSequence, params: ModelParams, t: int, ctx: Context) -> np.ndarray:
    """Row j: counterpart embedding + its feature fields + time-bucket(t - t_j)."""
    d = params["time_bucket_table"].shape[1]
    if len(seq) == 0:
        return np.zeros((0, d))
    P = _Leaves(params)
    base = _entity_embed(P, seq.counterparts, ctx).value
    return base + params["time_bucket_table"][time_bucket(t - seq.timestamps)]


def attention_aggregate(h_self: np.ndarray, neighbors: Sequence[np.ndarray], params: ModelParams,
                        cfg: ModelConfig) -> np.ndarray:
    """Attention message for one node from a list of neighbour vectors."""
    nbrs = np.asarray(neighbors, dtype=np.float64).reshape(-1, cfg.dim)
    h = T.const(np.vstack([np.asarray(h_self, np.float64)[None, :], nbrs]))
    k = len(nbrs)
    tgt = np.zeros(k, dtype=np.int64)
    src = np.arange(1, k + 1)
    out = _attention(_Leaves(params), h, tgt, src, k + 1, cfg)
    return out.value[0] if k else np.zeros(cfg.dim)


@dataclass
class NodeState:
    """Per-node hidden vectors of one subgraph.

    ``h[l]`` holds every node's state after layer ``l`` (``h[0]`` is the input
    embedding); ``hop_states[l-1][k-1]`` the per-hop-channel states of layer
    ``l``; ``combined`` the layer average at the root.
    """

    nodes: np.ndarray
    h: list[np.ndarray]
    hop_states: list[list[np.ndarray]]
    combined: np.ndarray
    alphas: list = field(default_factory=list)
    edge_term: np.ndarray | None = None


def khop_forward(subgraph: Subgraph, params: ModelParams, ctx: Context) -> NodeState:
    trace: dict = {}
    out = _spatial(_Leaves(params), [subgraph], ctx, trace)
    return NodeState(subgraph.nodes, trace["h"], trace["hop_states"], out.value[0], trace["alphas"],
                     None if trace["edge_term"] is None else trace["edge_term"][0])


def combine_layers(states: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of per-layer vectors."""
    if len(states) == 0:
        raise ValueError("combine_layers needs at least one layer")
    acc = np.array(states[0], dtype=np.float64, copy=True)
    for s in states[1:]:
        acc += s
    return acc / len(states)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "fedgraphrec-checkpoint/1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(params: ModelParams, directory: str | Path, dtype: str = "float32") -> Path:
    """Write ``manifest.json`` plus one little-endian flat binary per tensor."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    code = _DTYPES[dtype]
    entries = []
    for name, value in params.items():
        fname = f"{name}.bin"
        (directory / fname).write_bytes(np.ascontiguousarray(value, dtype=code).tobytes())
        entries.append({"name": name, "shape": list(value.shape), "dtype": dtype, "file": fname})
    manifest = {"format": CHECKPOINT_FORMAT, "byte_order": "little", "tensors": entries}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_checkpoint(directory: str | Path) -> ModelParams:
    import json

    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
    tensors = {}
    for e in manifest["tensors"]:
        raw = np.frombuffer((directory / e["file"]).read_bytes(), dtype=_DTYPES[e["dtype"]])
        shape = tuple(e["shape"])
        if raw.size != int(np.prod(shape)):
            raise ValueError(f"tensor {e['name']}: {raw.size} values for shape {shape}")
        tensors[e["name"]] = raw.reshape(shape).astype(np.float64)
    return ModelParams(tensors)
