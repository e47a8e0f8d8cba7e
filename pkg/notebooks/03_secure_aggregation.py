# %% [markdown]
# # Secure aggregation
# Pairwise masks hide each client's update yet cancel in the sum.

# %%
import numpy as np

from fedgraphrec.federation import aggregate, mask_update, quantize, sample_weights, unmask_aggregate
from fedgraphrec.model import ModelParams
from fedgraphrec.training import ClientUpdate

rng = np.random.default_rng(0)
updates = [ClientUpdate(ModelParams({"w": rng.normal(size=6)}), n, 0.0, cid) for cid, n in enumerate((10, 30, 60))]
weights = sample_weights(updates)
print("weights:", weights)

# %%
masked = [mask_update(u, range(3), 0, w) for u, w in zip(updates, weights)]
print("client 0 in the clear:", quantize(weights[0] * updates[0].params.flatten())[:3])
print("client 0 as sent:     ", masked[0].vector[:3])

# %%
secure = unmask_aggregate(masked)
plain = aggregate(updates)
print("plain average: ", plain["w"].round(6))
print("secure average:", secure["w"].round(6))
print(f"max difference {secure.max_abs_diff(plain):.2e}")
