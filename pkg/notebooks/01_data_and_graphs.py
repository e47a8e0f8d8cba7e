# %% [markdown]
# # Data and graphs
# Load an interaction file, filter it, split it into clients, then look at the
# graph structures the model consumes.

# %%
from pathlib import Path

import numpy as np

from fedgraphrec.dataset import filter_min_interactions, load_interactions, partition_clients, split
from fedgraphrec.graphs import (
    GraphConfig,
    build_graph_context,
    drop_node,
    implicit_item_relations,
    implicit_user_relations,
)

FIXTURE = Path(__file__).resolve().parent.parent / "tests" / "data" / "fixture_1000.tsv"

# %% [markdown]
# ## Loading and the five-interaction filter

# %%
raw = load_interactions(FIXTURE)
data = filter_min_interactions(raw, 5)
print(f"raw: {raw.n_users} users, {raw.n_items} items, {len(raw)} rows")
print(f"filtered: {data.n_users} users, {data.n_items} items, {len(data)} rows")

# %% [markdown]
# ## Chronological split and disjoint clients

# %%
bundle = split(data, seed=0)
print({name: len(getattr(bundle, name)) for name in ("train", "validation", "test")})
shards = partition_clients(bundle.train, 4, seed=0)
print("users per client:", [len(np.unique(s.data.users)) for s in shards])

# %% [markdown]
# ## Implicit relations
# Users linked by shared followers and items linked by co-rating similarity.

# %%
uu = implicit_user_relations(bundle.train, tau=2, top_m=5)
ii = implicit_item_relations(bundle.train, top_m=5)
print(f"user-user edges: {len(uu.src)}, item-item edges: {len(ii.src)}")

# %% [markdown]
# ## A sampled neighbourhood and DropNode

# %%
ctx = build_graph_context(bundle.train, GraphConfig(n_slices=4, hops=2, fanout=5))
root = int(np.bincount(bundle.train.users).argmax())
tree = max((ctx.subgraph(root, s, seed=1, train=False) for s in range(4)), key=lambda g: len(g.nodes))
print(f"user {root} reaches {len(tree.nodes)} nodes, hop sizes {np.bincount(tree.hop).tolist()}")
kept = drop_node(tree, 0.25, seed=1)
print(f"after DropNode at 0.25: {len(kept.nodes)} nodes")
