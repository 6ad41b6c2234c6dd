"""Multi-query decoupled interaction network: encoders, sparse query selection,
stacked superpoint/language attention layers and the mask/confidence head."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, fields
from typing import Iterator

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .geometry import SceneCloud, fss, superpoint_centroids

CATEGORIES = ("zt_dis", "zt_nodis", "st_dis", "st_nodis", "mt")
COMPONENTS = ("main", "attri", "auxi", "pron", "rel")
LAYER_MATRICES = ("W_sq", "W_sk", "W_sv", "W_qq", "W_qk", "W_qv", "W_lq", "W_lk")


@dataclass
class ModelConfig:
    D: int = 32
    D_P: int = 32
    D_T: int = 32
    C: int | None = None  # contrastive dim, defaults to D
    encoder_hidden: int = 64
    layers: int = 3
    N_seed: int = 16
    N_Q: int = 8
    vocab_size: int = 64
    tau: float = 0.1
    alpha: float = 1.0
    sigma: float = 1.0
    # variance-preserving init; the decoder has no normalization layers, so
    # smaller scales shrink every activation toward zero
    embed_init_std: float = 1.0
    init_gain: float = math.sqrt(3.0)

    def __post_init__(self):
        if self.C is None:
            self.C = self.D
        self.validate()

    def validate(self) -> None:
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 1 <= self.N_Q <= self.N_seed:
            raise ValueError(f"need 1 <= N_Q <= N_seed, got N_Q={self.N_Q}, N_seed={self.N_seed}")
        for name in ("D", "D_P", "D_T", "C", "encoder_hidden", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("tau", "alpha", "sigma", "embed_init_std", "init_gain"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Layer/query counts used for the full-scale benchmark."""
        base = dict(layers=6, N_seed=256, N_Q=128)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown ModelConfig keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class Expression:
    """A tokenized referring expression with its component position labels."""

    token_ids: list[int]
    labels: dict[str, list[int]]
    target_instance_ids: list[int]
    category: str
    mentioned_class: int | None = None
    text: str = ""

    def __post_init__(self):
        self.token_ids = [int(t) for t in self.token_ids]
        self.labels = {k: sorted(int(i) for i in self.labels.get(k, ())) for k in COMPONENTS}
        self.target_instance_ids = [int(t) for t in self.target_instance_ids]
        self.validate()

    def validate(self) -> None:
        n = len(self.token_ids)
        if n == 0:
            raise ValueError("expression has no tokens")
        seen: set[int] = set()
        for comp, idx in self.labels.items():
            for i in idx:
                if not 0 <= i < n:
                    raise ValueError(f"label {comp} position {i} out of range")
                if i in seen:
                    raise ValueError(f"position {i} carries more than one component label")
                seen.add(i)
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        n_t = len(self.target_instance_ids)
        expect = "zt" if n_t == 0 else ("st" if n_t == 1 else "mt")
        if not self.category.startswith(expect):
            raise ValueError(f"category {self.category} inconsistent with {n_t} targets")

    @property
    def positive_words(self) -> list[int]:
        return sorted(self.labels["main"] + self.labels["attri"] + self.labels["pron"])

    def to_dict(self) -> dict:
        return {
            "token_ids": list(self.token_ids),
            "labels": {k: list(v) for k, v in self.labels.items()},
            "target_instance_ids": list(self.target_instance_ids),
            "category": self.category,
            "mentioned_class": self.mentioned_class,
            "text": self.text,
        }


@dataclass
class Prediction:
    mask_logits: np.ndarray       # N_Q x N_S
    confidences: np.ndarray       # N_Q, sigmoid of confidence logits
    final_point_mask: np.ndarray  # N_P, {0,1}
    query_sources: np.ndarray     # N_Q superpoint indices
    relevance: np.ndarray         # N_seed
    seed_sources: np.ndarray      # N_seed superpoint indices
    attention: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def superpoint_masks(self) -> np.ndarray:
        return (self.mask_logits > 0).astype(np.int8)


class ModelParams:
    """Named float64 tensors for every learnable matrix of the network.

    Names follow ``layers.<i>.W_sq`` / ``encoder.0.weight`` style; iteration
    order is fixed by construction and is the checkpoint order.
    """

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def num_parameters(self) -> int:
        return int(sum(v.data.size for v in self.values()))

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return cls({k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k) for k, v in arrays.items()})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D = cfg.D
    shapes: dict[str, tuple[int, ...]] = {
        "token_embedding": (cfg.vocab_size, cfg.D_T),
        "W_T": (cfg.D_T, D),
        "encoder.0.weight": (6, cfg.encoder_hidden),
        "encoder.0.bias": (cfg.encoder_hidden,),
        "encoder.1.weight": (cfg.encoder_hidden, cfg.D_P),
        "encoder.1.bias": (cfg.D_P,),
        "W_P": (cfg.D_P, D),
    }
    for i in range(cfg.layers):
        for m in LAYER_MATRICES:
            shapes[f"layers.{i}.{m}"] = (D, D)
        shapes[f"layers.{i}.fuse.0.weight"] = (D, D)
        shapes[f"layers.{i}.fuse.0.bias"] = (D,)
        shapes[f"layers.{i}.fuse.1.weight"] = (D, D)
        shapes[f"layers.{i}.fuse.1.bias"] = (D,)
    shapes.update({
        "W_M": (D, D),
        "conf.0.weight": (D, D),
        "conf.0.bias": (D,),
        "conf.1.weight": (D, 1),
        "conf.1.bias": (1,),
        "W_q": (D, cfg.C),
        "W_w": (D, cfg.C),
    })
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator | int = 0) -> ModelParams:
    """Uniform(+-gain/sqrt(fan_in)) matrices, zero biases, normal embeddings."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out = {}
    for name, shape in param_shapes(cfg).items():
        if name == "token_embedding":
            arr = rng.normal(0.0, cfg.embed_init_std, size=shape)
        elif name.endswith("bias"):
            arr = np.zeros(shape)
        else:
            bound = cfg.init_gain / math.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        out[name] = arr
    return ModelParams.from_arrays(out)


# ---------------------------------------------------------------------------
# pipeline stages


def embed_text(expr: Expression, params: ModelParams) -> Tensor:
    table = params["token_embedding"]
    ids = np.asarray(expr.token_ids, dtype=np.intp)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ValueError(f"token id out of vocabulary (size {table.shape[0]})")
    return dc.matmul(dc.take_rows(table, ids), params["W_T"])


def decouple_component(T: Tensor, label) -> Tensor:
    """Sum of the rows of ``T`` selected by a binary position label (1 x D)."""
    T = dc.as_tensor(T)
    sel = np.zeros((1, T.shape[0]))
    sel[0, np.asarray(list(label), dtype=np.intp)] = 1.0
    return dc.matmul(sel, T)


def positive_word_features(T: Tensor, expr: Expression) -> Tensor:
    return dc.take_rows(T, expr.positive_words)


def point_inputs(scene: SceneCloud) -> np.ndarray:
    """Per-point (position, color) rows, positions relative to the scene mean."""
    pos = scene.positions - scene.positions.mean(axis=0)
    return np.concatenate([pos, scene.colors], axis=1)


def encode_points(scene: SceneCloud, params: ModelParams) -> Tensor:
    feats = dc.mlp_forward(point_inputs(scene), [
        (params["encoder.0.weight"], params["encoder.0.bias"]),
        (params["encoder.1.weight"], params["encoder.1.bias"]),
    ])
    projected = dc.matmul(feats, params["W_P"])
    return dc.segment_mean(projected, scene.superpoint_id, scene.num_superpoints)


def topk_order(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, descending, ties to the lower index."""
    return np.lexsort((np.arange(scores.shape[0]), -scores))[:k]


@dataclass
class QuerySelection:
    queries: Tensor
    query_sources: np.ndarray
    relevance: Tensor
    seed_sources: np.ndarray
    query_seed_rank: np.ndarray


def tsq_select(S: Tensor, centroids: np.ndarray, T: Tensor, cfg: ModelConfig) -> QuerySelection:
    n_s = S.shape[0]
    if cfg.N_seed > n_s:
        raise ValueError(f"N_seed={cfg.N_seed} exceeds the {n_s} superpoints in the scene")
    seeds = fss(centroids, cfg.N_seed)
    q_seed = dc.take_rows(S, seeds)
    # average over words of the word-seed dot products
    relevance = dc.mean(dc.matmul(q_seed, dc.transpose(T)), axis=1)
    order = topk_order(relevance.data, cfg.N_Q)
    return QuerySelection(
        queries=dc.take_rows(q_seed, order),
        query_sources=seeds[order],
        relevance=relevance,
        seed_sources=seeds,
        query_seed_rank=order,
    )


def _attend(q: Tensor, k: Tensor, scale: float, log: list | None) -> Tensor:
    attn = dc.softmax_rows(dc.mul(dc.matmul(q, dc.transpose(k)), scale))
    if log is not None:
        log.append(attn.data)
    return attn


def qsa_layer(Q: Tensor, S: Tensor, params: ModelParams, i: int, log: list | None = None) -> Tensor:
    """Queries gather superpoint values through scaled dot-product attention."""
    scale = 1.0 / math.sqrt(S.shape[1])
    p = f"layers.{i}."
    attn = _attend(dc.matmul(Q, params[p + "W_sq"]), dc.matmul(S, params[p + "W_sk"]), scale, log)
    # residual keeps each query's own identity; without it near-uniform
    # attention at init maps every query to the same superpoint average
    return dc.add(Q, dc.matmul(attn, dc.matmul(S, params[p + "W_sv"])))


def qla_layer(Qs: Tensor, T: Tensor, params: ModelParams, i: int, log: list | None = None) -> Tensor:
    """Query self-attention plus query-to-word attention, fused by an MLP."""
    scale = 1.0 / math.sqrt(Qs.shape[1])
    p = f"layers.{i}."
    self_attn = _attend(dc.matmul(Qs, params[p + "W_qq"]), dc.matmul(Qs, params[p + "W_qk"]), scale, log)
    Qr = dc.matmul(self_attn, dc.matmul(Qs, params[p + "W_qv"]))
    word_attn = _attend(dc.matmul(Qs, params[p + "W_lq"]), dc.matmul(T, params[p + "W_lk"]), scale, log)
    Ql = dc.matmul(word_attn, T)
    return dc.mlp_forward(dc.add(dc.add(Qs, Qr), Ql), [
        (params[p + "fuse.0.weight"], params[p + "fuse.0.bias"]),
        (params[p + "fuse.1.weight"], params[p + "fuse.1.bias"]),
    ])


@dataclass
class ForwardState:
    """Differentiable intermediates of one forward pass, consumed by the losses."""

    S: Tensor
    T: Tensor
    selection: QuerySelection
    Q: Tensor
    mask_logits: Tensor
    conf_logits: Tensor
    attention: list[np.ndarray]


def forward_state(scene: SceneCloud, expr: Expression, params: ModelParams, cfg: ModelConfig) -> ForwardState:
    S = encode_points(scene, params)
    T = embed_text(expr, params)
    sel = tsq_select(S, superpoint_centroids(scene), T, cfg)
    attention: list[np.ndarray] = []
    Q = sel.queries
    for i in range(cfg.layers):
        Q = qla_layer(qsa_layer(Q, S, params, i, attention), T, params, i, attention)
    S_M = dc.matmul(S, params["W_M"])
    mask_logits = dc.matmul(Q, dc.transpose(S_M))
    conf = dc.mlp_forward(Q, [
        (params["conf.0.weight"], params["conf.0.bias"]),
        (params["conf.1.weight"], params["conf.1.bias"]),
    ])
    conf_logits = dc.reshape(conf, (conf.shape[0],))
    return ForwardState(S, T, sel, Q, mask_logits, conf_logits, attention)


def aggregate_masks(mask_logits: np.ndarray, confidences: np.ndarray) -> np.ndarray:
    """Superpoint-level union of the masks of queries whose confidence exceeds 0.5."""
    keep = confidences > 0.5
    if not keep.any():
        return np.zeros(mask_logits.shape[1], dtype=np.int8)
    return (mask_logits[keep] > 0).any(axis=0).astype(np.int8)


def to_prediction(state: ForwardState, scene: SceneCloud) -> Prediction:
    logits = state.mask_logits.data.copy()
    conf = dc._sigmoid(state.conf_logits.data.copy())
    return Prediction(
        mask_logits=logits,
        confidences=conf,
        final_point_mask=scene.expand(aggregate_masks(logits, conf)),
        query_sources=state.selection.query_sources.copy(),
        relevance=state.selection.relevance.data.copy(),
        seed_sources=state.selection.seed_sources.copy(),
        attention=state.attention,
    )


def forward(scene: SceneCloud, expr: Expression, params: ModelParams, cfg: ModelConfig) -> Prediction:
    return to_prediction(forward_state(scene, expr, params, cfg), scene)
