"""Run configuration and the end-to-end drivers used by the command line.

A :class:`RunConfig` is a JSON document. Every module section is a
dataclass; unknown keys are errors. The single master ``seed`` fans out to
module seeds through :func:`module_seed`, so changing one module's
randomness never perturbs another's.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataset import (
    SPLIT_MODES,
    ClientShard,
    ConfigurationError,
    Dataset,
    SplitBundle,
    apply_public_ratio,
    concat,
    filter_min_interactions,
    load_interactions,
    partition_clients,
    split,
)
from .evaluation import AblationSpec, MetricsReport, evaluate
from .federation import FedConfig, RunResult, orchestrate
from .graphs import GraphConfig, build_graph_context
from .model import Context, ModelConfig, ModelParams, init_params
from .seeding import derive_seed
from .synthetic import block_dataset
from .training import TrainConfig

SEEDED_SECTIONS = ("train", "fed")


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 50
    n_items: int = 100
    n_blocks: int = 2
    in_block: float = 1.0
    out_block: float = 0.0
    time_span: int = 30 * 86400


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    synthetic: SyntheticConfig | None = None
    min_interactions: int = 5
    item_min_count: int = 0
    split_mode: str = "per_user"

    def __post_init__(self) -> None:
        if (self.path is None) == (self.synthetic is None):
            raise ConfigurationError("dataset needs exactly one of 'path' or 'synthetic'")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigurationError(f"split_mode must be one of {SPLIT_MODES}")
        if self.min_interactions < 1 or self.item_min_count < 0:
            raise ConfigurationError("min_interactions must be >= 1 and item_min_count >= 0")


@dataclass(frozen=True)
class EvalConfig:
    k: int = 20
    report_k: tuple[int, ...] = (5, 20)
    sweep_ratios: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)

    def __post_init__(self) -> None:
        if self.k < 1 or any(k < 1 for k in self.report_k):
            raise ConfigurationError("k must be at least 1")
        if any(not 0.0 <= p <= 1.0 for p in self.sweep_ratios):
            raise ConfigurationError("sweep ratios must lie in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    dataset: DataConfig = field(default_factory=lambda: DataConfig(synthetic=SyntheticConfig()))
    clients: int = 3
    public_ratio: float = 1.0
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self) -> None:
        if self.clients < 1:
            raise ConfigurationError("clients must be at least 1")
        if not 0.0 <= self.public_ratio <= 1.0:
            raise ConfigurationError("public_ratio must lie in [0, 1]")
        if self.seed < 0 or self.seed >= 1 << 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        self.fed.participants(self.clients)
        if self.fed.masking and self.fed.participants(self.clients) < 2:
            raise ConfigurationError("masking needs at least two clients per round")
        if self.graph.hops != self.model.hops:
            raise ConfigurationError("graph.hops and model.hops must agree")

    # -- seeds -----------------------------------------------------------------

    def module_seed(self, name: str) -> int:
        return module_seed(self.seed, name)

    def resolved(self) -> "RunConfig":
        """Copy with the per-module seeds filled in from the master seed."""
        return replace(
            self,
            train=replace(self.train, seed=self.module_seed("train")),
            fed=replace(self.fed, seed=self.module_seed("fed")),
        )

    # -- serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        """Plain form with the module seeds materialised."""
        return _to_plain(self.resolved())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        """Build and validate. Module seeds may appear (as in a resolved config)
        but must equal the values derived from the master seed."""
        cfg = _build(cls, doc, "config")
        for section in SEEDED_SECTIONS:
            given = doc.get(section, {}).get("seed")
            if given is not None and given != cfg.module_seed(section):
                raise ConfigurationError(
                    f"config.{section}.seed={given} does not derive from master seed {cfg.seed}; "
                    "set only the top-level seed")
        # keep the unresolved form canonical so equal documents hash equally
        return replace(cfg, train=replace(cfg.train, seed=0), fed=replace(cfg.fed, seed=0))

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.from_json(text)


def module_seed(master: int, name: str) -> int:
    """Seed of one module: a SeedSequence hash of ``(master, name)``."""
    return derive_seed(master, name)


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(x) for x in obj]
    return obj


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigurationError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{where}[{j}]") for j, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigurationError(f"{where}: expected {len(args)} entries")
        return tuple(_coerce(a, v, f"{where}[{j}]") for j, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string")
        return value
    raise ConfigurationError(f"{where}: unsupported type {tp}")


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{where}: expected an object")
    hints = _hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def schema() -> dict:
    """JSON schema of the config document, generated from the dataclasses."""

    def of(tp):
        origin = typing.get_origin(tp)
        args = typing.get_args(tp)
        if origin in (typing.Union, types.UnionType):
            inner = [a for a in args if a is not type(None)]
            return {"anyOf": [of(inner[0]), {"type": "null"}]}
        if dataclasses.is_dataclass(tp):
            return obj(tp)
        if origin is tuple:
            return {"type": "array", "items": of(args[0])}
        return {"type": {bool: "boolean", int: "integer", float: "number", str: "string"}[tp]}

    def obj(cls):
        hints = _hints(cls)
        props = {}
        for f in fields(cls):
            if f.name == "seed" and cls in (TrainConfig, FedConfig):
                continue
            props[f.name] = of(hints[f.name])
        return {"type": "object", "additionalProperties": False, "properties": props}

    out = obj(RunConfig)
    out["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    out["title"] = "fedgraphrec run configuration"
    return out


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prepared:
    data: Dataset
    splits: SplitBundle
    shards: tuple[ClientShard, ...]

    @property
    def n_users(self) -> int:
        return self.data.n_users

    @property
    def n_items(self) -> int:
        return self.data.n_items

    def public_train(self) -> Dataset:
        return concat([s.public() for s in self.shards])


def load_dataset(cfg: RunConfig) -> Dataset:
    dc = cfg.dataset
    if dc.synthetic is not None:
        raw = block_dataset(**dataclasses.asdict(dc.synthetic), seed=cfg.module_seed("data"))
    else:
        raw = load_interactions(dc.path)
    return filter_min_interactions(raw, dc.min_interactions, dc.item_min_count)


def prepare(cfg: RunConfig, data: Dataset | None = None, public_ratio: float | None = None) -> Prepared:
    data = load_dataset(cfg) if data is None else data
    splits = split(data, cfg.module_seed("split"), cfg.dataset.split_mode)
    p = cfg.public_ratio if public_ratio is None else public_ratio
    shards = tuple(apply_public_ratio(s, p, cfg.module_seed("public"))
                   for s in partition_clients(splits.train, cfg.clients, cfg.module_seed("partition")))
    return Prepared(data, splits, shards)


def model_config(cfg: RunConfig, spec: AblationSpec, data: Dataset) -> ModelConfig:
    return replace(
        cfg.model,
        attention=cfg.model.attention and spec.attention,
        item_graph=cfg.model.item_graph and spec.item_graph,
        user_cardinalities=data.user_cardinalities or (),
        item_cardinalities=data.item_cardinalities or (),
    )


@dataclass(frozen=True, eq=False)
class Contexts:
    """Graph views for training (per client) and for scoring (per user group)."""

    train: Context | dict[int, Context]
    evaluation: Context | list[tuple[np.ndarray, Context]]


def build_contexts(cfg: RunConfig, prep: Prepared, spec: AblationSpec = AblationSpec(),
                   shards: Sequence[ClientShard] | None = None) -> Contexts:
    mcfg = model_config(cfg, spec, prep.data)
    shards = prep.shards if shards is None else shards

    def ctx_of(ds: Dataset) -> Context:
        gc = build_graph_context(ds, cfg.graph, spec.implicit_user, spec.implicit_item)
        return Context(mcfg, gc, prep.data.user_features, prep.data.item_features)

    if spec.neighbor_public_interactions:
        shared = ctx_of(concat([s.public() for s in shards]))
        return Contexts(shared, shared)
    own = {s.client_id: ctx_of(s.public()) for s in shards}
    groups = [(s.users, own[s.client_id]) for s in shards]
    return Contexts(own, groups)


def initial_params(cfg: RunConfig, prep: Prepared, spec: AblationSpec = AblationSpec()) -> ModelParams:
    mcfg = model_config(cfg, spec, prep.data)
    return init_params(prep.n_users, prep.n_items, mcfg, cfg.module_seed("init"))


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def train_run(cfg: RunConfig, prep: Prepared, spec: AblationSpec = AblationSpec(), threads: int = 1,
              validate: bool = True, shards: Sequence[ClientShard] | None = None,
              contexts: Contexts | None = None, on_round=None) -> tuple[RunResult, Contexts]:
    """Federated training of one variant; returns the run and the contexts used."""
    rc = cfg.resolved()
    shards = prep.shards if shards is None else tuple(shards)
    contexts = build_contexts(rc, prep, spec, shards) if contexts is None else contexts
    params = initial_params(rc, prep, spec)

    def on_validation(p: ModelParams) -> MetricsReport:
        return evaluate(p, contexts.evaluation, prep.splits.validation, rc.fed.eval_k,
                        exclude=prep.splits.train, seed=rc.module_seed("eval"))

    use_val = validate and rc.fed.eval_every and len(prep.splits.validation)
    val = on_validation if use_val else None
    result = orchestrate(shards, params, rc.fed, rc.train, contexts.train, val, threads, on_round=on_round)
    return result, contexts


def held_out_metrics(cfg: RunConfig, prep: Prepared, params: ModelParams, contexts: Contexts,
                 k: int | None = None) -> MetricsReport:
    """Held-out test metrics; train and validation items are never ranked."""
    return evaluate(params, contexts.evaluation, prep.splits.test, cfg.eval.k if k is None else k,
                    exclude=[prep.splits.train, prep.splits.validation], seed=cfg.module_seed("eval"))


def run_ablation(spec: AblationSpec, cfg: RunConfig, threads: int = 1, prep: Prepared | None = None,
                 k: int | None = None) -> MetricsReport:
    prep = prepare(cfg) if prep is None else prep
    result, contexts = train_run(cfg, prep, spec, threads)
    return held_out_metrics(cfg, prep, result.best_params, contexts, k)


SWEEP_MODES = ("federated", "centralized_public")


def privacy_sweep(cfg: RunConfig, ratios: Sequence[float], threads: int = 1, data: Dataset | None = None,
                  k: int | None = None) -> list[tuple[float, str, MetricsReport]]:
    """For each ratio p, two runs on the same split.

    ``federated``: graphs from public interactions, local training on every
    interaction. ``centralized_public``: one party holding only the public
    interactions, for both the graph and training.
    """
    data = load_dataset(cfg) if data is None else data
    rows = []
    for p in ratios:
        prep = prepare(cfg, data, public_ratio=p)
        for mode in SWEEP_MODES:
            if mode == "federated":
                shards = prep.shards
            else:
                shards = (ClientShard(0, prep.public_train()),)
            single = replace(cfg, clients=len(shards), fed=replace(cfg.fed, clients_per_round=None,
                                                                      masking=cfg.fed.masking and len(shards) > 1))
            contexts = build_contexts(single, prep, AblationSpec(), shards=prep.shards)
            result, _ = train_run(single, prep, AblationSpec(), threads, shards=shards, contexts=contexts)
            rows.append((float(p), mode, held_out_metrics(single, prep, result.best_params, contexts, k)))
    return rows
