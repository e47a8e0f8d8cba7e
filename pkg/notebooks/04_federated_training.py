# %% [markdown]
# # Federated training and evaluation
# A short run of the desk configuration, then a small public-ratio sweep and
# ablation. The full-length runs live in the command line tool.

# %%
from dataclasses import replace
from pathlib import Path

from fedgraphrec.evaluation import STANDARD_VARIANTS
from fedgraphrec.experiment import RunConfig, held_out_metrics, prepare, privacy_sweep, run_ablation, train_run

cfg = RunConfig.load(Path(__file__).resolve().parent.parent / "configs" / "desk.json")
cfg = replace(cfg, fed=replace(cfg.fed, rounds=20))
prep = prepare(cfg)

# %%
result, contexts = train_run(cfg, prep)
for rec in result.state.history[::5]:
    print(f"round {rec.round:>3}  loss {rec.mean_loss:.4f}")
report = held_out_metrics(cfg, prep, result.state.global_params, contexts, k=5)
print(f"Recall@5 {report.recall_at_k:.3f}  NDCG@5 {report.ndcg_at_k:.3f}")

# %% [markdown]
# ## Public-ratio sweep

# %%
for p, mode, rep in privacy_sweep(cfg, [1.0, 0.25], k=5):
    print(f"p={p:<5} {mode:<20} Recall@5 {rep.recall_at_k:.3f}")

# %% [markdown]
# ## Ablation

# %%
for name in ("full", "w/o attention", "w/o implicit user"):
    print(f"{name:<20} Recall@5 {run_ablation(STANDARD_VARIANTS[name], cfg, prep=prep, k=5).recall_at_k:.3f}")
