# %% [markdown]
# # Model and gradients
# Score a few user-item pairs and check the hand-written backward pass against
# central differences.

# %%
import numpy as np

from fedgraphrec.graphs import GraphConfig, build_graph_context
from fedgraphrec.model import Batch, Context, ModelConfig, forward_backward, init_params, predict_batch
from fedgraphrec.synthetic import block_dataset

data = block_dataset(n_users=12, n_items=20, seed=0)
cfg = ModelConfig(dim=4, heads=1, layers=1, hops=1, mlp_hidden=(6,))
ctx = Context(cfg, build_graph_context(data, GraphConfig(n_slices=2, hops=1, fanout=3, dropnode_rate=0.0)))
params = init_params(data.n_users, data.n_items, cfg, seed=0)
print(f"{len(params.names)} tensors, {params.size} parameters")

# %%
batch = Batch(np.array([0, 1, 2]), np.array([0, 5, 9]), np.full(3, 10), np.array([1.0, 0.0, 1.0]))
print("scores:", predict_batch(batch, ctx, params).round(4))
loss, grads = forward_backward(batch, ctx, params)
print(f"loss {loss:.6f}")

# %% [markdown]
# ## Finite-difference check on a handful of coordinates

# %%
rng = np.random.default_rng(0)
worst = 0.0
for name in params.names:
    flat = params[name].reshape(-1)
    for j in rng.choice(flat.size, size=min(3, flat.size), replace=False):
        up, down = params.copy(), params.copy()
        up[name].reshape(-1)[j] += 1e-5
        down[name].reshape(-1)[j] -= 1e-5
        numeric = (forward_backward(batch, ctx, up)[0] - forward_backward(batch, ctx, down)[0]) / 2e-5
        analytic = grads[name].reshape(-1)[j]
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-9))
print(f"worst relative error over sampled coordinates: {worst:.2e}")
