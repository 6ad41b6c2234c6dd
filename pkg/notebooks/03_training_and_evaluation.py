# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Training and evaluation
#
# A short run on a small dataset.  The loss is the weighted sum of the
# relevance-label loss, the mask loss (BCE + Dice), the confidence loss and
# the query/word contrastive loss.  Increase `steps` for a real fit.

# %%
from gres3d.data import GenConfig, generate_dataset
from gres3d.evaluation import evaluate_model
from gres3d.losses import sample_loss
from gres3d.model import ModelConfig, forward_state
from gres3d.trainer import TrainConfig, fit

ds = generate_dataset(GenConfig(seed=0, num_scenes=4, num_samples=20))
pairs = ds.pairs("train")
mcfg = ModelConfig(vocab_size=len(ds.vocabulary))
steps = 200
history = []
ckpt = fit(pairs, mcfg, TrainConfig(base_lr=3e-3, total_steps=steps, seed=0),
           callback=lambda step, loss, params: history.append(loss))
print("loss: first 10 steps %.3f, last 10 steps %.3f" % (sum(history[:10]) / 10, sum(history[-10:]) / 10))

# %% [markdown]
# Loss components for one sample after training:

# %%
scene, expr = pairs[0]
parts = sample_loss(forward_state(scene, expr, ckpt.params, mcfg), scene, expr, ckpt.params, mcfg,
                    TrainConfig().weights)
print(expr.text, {k: round(v, 4) for k, v in parts.values().items()})

# %%
report = evaluate_model(pairs, ckpt.params, mcfg)
print(report.to_json())
