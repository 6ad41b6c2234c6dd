"""Query assignment and the four training objectives.

Assignment follows where each query came from: a query belongs to the instance that owns the
superpoint it was sampled from, so no bipartite matching is needed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .geometry import SceneCloud, gaussian_relevance_labels, instance_superpoint_mask, superpoint_centroids
from .model import Expression, ForwardState, ModelConfig, ModelParams

DICE_EPS = 1.0


@dataclass(frozen=True)
class LossWeights:
    lambda_qgd: float = 5.0
    lambda_mask: float = 1.0
    lambda_tgt: float = 0.1
    lambda_qta: float = 0.1

    def __post_init__(self):
        for k, v in self.to_dict().items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be finite and nonnegative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QueryAssignment:
    positives: dict[int, list[int]]          # target instance -> query indices
    tgt_labels: np.ndarray                   # N_Q in {0,1}
    query_masks: dict[int, np.ndarray] = field(default_factory=dict)  # query -> superpoint GT mask

    @property
    def positive_queries(self) -> list[int]:
        return sorted(self.query_masks)


def assign_queries(query_sources, scene: SceneCloud, expr: Expression) -> QueryAssignment:
    """Give every target instance its home queries, or the nearest one if it has none.

    ``query_sources`` may be a :class:`~gres3d.model.Prediction`.
    """
    sources = np.asarray(getattr(query_sources, "query_sources", query_sources), dtype=np.int64)
    n_q = sources.shape[0]
    home = scene.superpoint_instance()[sources]
    pos_of_query = superpoint_centroids(scene)[sources]
    positives: dict[int, list[int]] = {}
    masks: dict[int, np.ndarray] = {}
    for inst in expr.target_instance_ids:
        members = np.flatnonzero(home == inst).tolist()
        if not members:
            d2 = np.sum((pos_of_query - scene.instance_center[inst]) ** 2, axis=1)
            members = [int(np.argmin(d2))]
        positives[inst] = members
        gt = instance_superpoint_mask(scene, inst)
        for q in members:
            # a query borrowed by two instances is supervised with their union
            masks[q] = gt if q not in masks else np.maximum(masks[q], gt)
    labels = np.zeros(n_q)
    labels[list(masks)] = 1.0
    return QueryAssignment(positives=positives, tgt_labels=labels, query_masks=masks)


def loss_qgd(R, relevance_labels) -> Tensor:
    """Mean BCE between relevance scores (as logits) and soft Gaussian labels."""
    return dc.mean(dc.bce_with_logits(R, relevance_labels))


def loss_mask(mask_logits, assignment: QueryAssignment) -> Tensor:
    """BCE + Dice of each positive query's mask against its instance, averaged over queries.

    ``mask_logits`` is the N_Q x N_S matrix ``Q (S W_M)^T``.
    """
    queries = assignment.positive_queries
    if not queries:
        return Tensor(0.0)
    mask_logits = dc.as_tensor(mask_logits)
    logits = dc.take_rows(mask_logits, queries)
    gt = np.stack([assignment.query_masks[q] for q in queries])
    bce = dc.mean(dc.bce_with_logits(logits, gt), axis=1)
    p = dc.sigmoid(logits)
    inter = dc.sum(dc.mul(p, gt), axis=1)
    denom = dc.add(dc.sum(p, axis=1), gt.sum(axis=1) + DICE_EPS)
    dice = dc.sub(1.0, dc.div(dc.add(dc.mul(inter, 2.0), DICE_EPS), denom))
    return dc.mean(dc.add(bce, dice))


def loss_tgt(conf_logits, tgt_labels) -> Tensor:
    return dc.mean(dc.bce_with_logits(conf_logits, tgt_labels))


def qta_logits(Q, T, W_q, W_w, tau: float) -> Tensor:
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    q = dc.matmul(Q, W_q)
    t = dc.matmul(T, W_w)
    return dc.mul(dc.matmul(q, dc.transpose(t)), 1.0 / tau)


def loss_qta(Q, T, positive_words, positive_queries, W_q, W_w, tau: float,
             parts: bool = False):
    """Symmetric query/word contrastive alignment.

    Query-to-word: each positive query, averaged over the positive words,
    softmax over all words.  Word-to-query: each positive word, averaged over
    the positive queries, softmax over all queries.  Both are summed.
    With ``parts=True`` returns ``(total, q2w, w2q)``.
    """
    logits = qta_logits(Q, T, W_q, W_w, tau)
    words = sorted(positive_words)
    queries = sorted(positive_queries)
    if not words or not queries:
        zero = Tensor(0.0)
        return (zero, zero, zero) if parts else zero
    n_q, n_t = logits.shape
    sel = np.zeros((n_q, n_t))
    sel[np.ix_(queries, words)] = 1.0
    q2w_lp = dc.log_softmax(logits, axis=1)
    w2q_lp = dc.log_softmax(logits, axis=0)
    q2w = dc.mul(dc.sum(dc.mul(q2w_lp, sel)), -1.0 / len(words))
    w2q = dc.mul(dc.sum(dc.mul(w2q_lp, sel)), -1.0 / len(queries))
    total = dc.add(q2w, w2q)
    return (total, q2w, w2q) if parts else total


def total_loss(components, weights: LossWeights) -> Tensor:
    """Weighted sum of (qgd, mask, tgt, qta)."""
    qgd, mask, tgt, qta = (dc.as_tensor(c) for c in components)
    return dc.add(dc.add(dc.mul(qgd, weights.lambda_qgd), dc.mul(mask, weights.lambda_mask)),
                  dc.add(dc.mul(tgt, weights.lambda_tgt), dc.mul(qta, weights.lambda_qta)))


@dataclass
class SampleLoss:
    total: Tensor
    qgd: Tensor
    mask: Tensor
    tgt: Tensor
    qta: Tensor
    assignment: QueryAssignment

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("total", "qgd", "mask", "tgt", "qta")}


def sample_loss(state: ForwardState, scene: SceneCloud, expr: Expression, params: ModelParams,
                cfg: ModelConfig, weights: LossWeights) -> SampleLoss:
    """All four objectives for one (scene, expression) forward pass."""
    sel = state.selection
    labels = gaussian_relevance_labels(sel.seed_sources, scene, expr.target_instance_ids, cfg.alpha, cfg.sigma)
    assignment = assign_queries(sel.query_sources, scene, expr)
    l_qgd = loss_qgd(sel.relevance, labels)
    l_mask = loss_mask(state.mask_logits, assignment)
    l_tgt = loss_tgt(state.conf_logits, assignment.tgt_labels)
    l_qta = loss_qta(state.Q, state.T, expr.positive_words, assignment.positive_queries,
                     params["W_q"], params["W_w"], cfg.tau)
    total = total_loss((l_qgd, l_mask, l_tgt, l_qta), weights)
    return SampleLoss(total, l_qgd, l_mask, l_tgt, l_qta, assignment)
