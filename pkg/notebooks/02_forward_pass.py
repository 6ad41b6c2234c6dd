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
# # One forward pass, stage by stage
#
# The network encodes points into superpoint features S and words into T,
# samples seed superpoints by farthest point sampling, keeps the seeds most
# related to the text as queries, refines the queries with superpoint and
# language attention, and finally predicts a mask and a confidence per query.

# %%
import numpy as np

from gres3d.data import GenConfig, generate_dataset
from gres3d.geometry import superpoint_centroids
from gres3d.model import ModelConfig, embed_text, encode_points, forward, init_params, tsq_select

ds = generate_dataset(GenConfig(seed=0))
scene, expr = ds.pairs()[0]
cfg = ModelConfig(vocab_size=len(ds.vocabulary))
params = init_params(cfg, 0)
print(expr.text, "->", expr.target_instance_ids)

# %%
S = encode_points(scene, params)
T = embed_text(expr, params)
sel = tsq_select(S, superpoint_centroids(scene), T, cfg)
print("S", S.shape, "T", T.shape)
print("seeds  ", sel.seed_sources.tolist())
print("queries", sel.query_sources.tolist())
print("home instance of each query", scene.superpoint_instance()[sel.query_sources].tolist())

# %% [markdown]
# The full forward pass records every attention matrix; each row is a
# probability distribution.

# %%
pred = forward(scene, expr, params, cfg)
print("mask logits", pred.mask_logits.shape, "confidences", np.round(pred.confidences, 3))
print("max row-sum error", max(np.abs(a.sum(axis=1) - 1).max() for a in pred.attention))
print("points in final mask", int(pred.final_point_mask.sum()), "of", scene.num_points)
