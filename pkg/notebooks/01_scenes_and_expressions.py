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
# # Synthetic scenes and referring expressions
#
# Each scene is a room with a gray floor and a handful of colored boxes.
# Every box is an instance with a class (chair, table, ...) and a shade
# (dark or light).  Points are grouped into superpoints by a spatial grid,
# and no superpoint ever mixes two instances.

# %%
import numpy as np

from gres3d.data import CLASSES, GenConfig, generate_dataset, generate_scene

cfg = GenConfig(seed=0)
scene = generate_scene(cfg, 0)
print(scene.num_points, "points,", scene.num_superpoints, "superpoints,", scene.num_instances, "instances")
for k, m in enumerate(scene.meta["instances"]):
    n = int(np.sum(scene.instance_id == k))
    print(f"  instance {k}: {m['shade']:>5} {m['class_name']:<8} {n} points, center {np.round(scene.instance_center[k], 2)}")

# %% [markdown]
# ## Expressions
#
# Templates cover the five evaluation categories.  Zero-target phrases name
# a class that is absent (`zt_nodis`) or a shade no instance of a present
# class has (`zt_dis`).  Component labels come straight from the template.

# %%
ds = generate_dataset(cfg)
for s in ds.samples[:10]:
    e = s.expression
    comps = {k: [e.text.split()[i] for i in v] for k, v in e.labels.items() if v}
    print(f"{e.category:<9} targets={e.target_instance_ids!s:<9} {e.text!r}  {comps}")

# %% [markdown]
# Category balance over the whole dataset:

# %%
from collections import Counter

print(Counter(s.expression.category for s in ds.samples))
