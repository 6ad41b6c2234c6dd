"""Random scene/expression builders shared by the test modules."""
import numpy as np

from gres3d.geometry import SceneCloud
from gres3d.model import Expression, ModelConfig, init_params


def random_scene(rng, n_sp=6, per_sp=5, n_inst=2, background=True):
    """Points scattered around ``n_sp`` anchors, superpoints owned by whole instances."""
    sp = np.repeat(np.arange(n_sp), per_sp)
    owners = np.arange(n_sp) % (n_inst + (1 if background else 0))
    owners = np.where(owners >= n_inst, -1, owners)
    owners[:n_inst] = np.arange(n_inst)  # every instance owns at least one superpoint
    inst = owners[sp]
    anchors = rng.uniform(0.0, 3.0, size=(n_sp, 3))
    pos = anchors[sp] + rng.normal(0.0, 0.05, size=(sp.size, 3))
    col = rng.uniform(0.0, 1.0, size=(sp.size, 3))
    centers = np.array([pos[inst == k].mean(axis=0) for k in range(n_inst)]).reshape(-1, 3)
    return SceneCloud(pos, col, sp, inst, np.arange(n_inst) % 3, centers)


def random_expression(rng, vocab=16, n_tokens=6, targets=(0,)):
    toks = rng.integers(0, vocab, size=n_tokens).tolist()
    n_t = len(targets)
    category = "zt_nodis" if n_t == 0 else ("st_dis" if n_t == 1 else "mt")
    labels = {"attri": [0], "main": [1], "rel": [2], "auxi": [3]}
    if n_tokens > 4:
        labels["pron"] = [4]
    return Expression(toks, labels, list(targets), category, 0)


def tiny_config(**kw):
    base = dict(D=4, D_P=4, D_T=4, C=4, encoder_hidden=8, layers=1, N_seed=4, N_Q=2, vocab_size=16)
    base.update(kw)
    return ModelConfig(**base)


def tiny_setup(seed=0, **kw):
    rng = np.random.default_rng(seed)
    scene = random_scene(rng)
    expr = random_expression(rng)
    cfg = tiny_config(**kw)
    return scene, expr, cfg, init_params(cfg, rng)
