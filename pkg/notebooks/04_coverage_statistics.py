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
# # Coverage and repetition of farthest-point seeds
#
# Coverage rate: the share of instances that hold at least one seed.
# Repetition rate: among seeds that land in an instance, the share that
# land in an instance already hit.  More seeds cover more instances but
# also repeat more.

# %%
import numpy as np

from gres3d.cli import coverage_table
from gres3d.data import GenConfig, generate_scene

cfg = GenConfig(seed=6, superpoint_pitch=0.2)
scenes = [generate_scene(cfg, k) for k in range(50)]
print("superpoints per scene:", min(s.num_superpoints for s in scenes), "to", max(s.num_superpoints for s in scenes))
for row in coverage_table(scenes, [4, 8, 16, 32, 64]):
    print(f"N_seed={row['n_seed']:>3}  CR={row['cr']:.3f}  RR={row['rr']:.3f}")

# %% [markdown]
# The same table is available from the command line as CSV:
#
# ```
# gres3d gen-data --out data --seed 0
# gres3d stats --data data --nseed-list 8,16,32
# ```
