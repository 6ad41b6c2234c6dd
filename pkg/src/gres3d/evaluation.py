"""Per-sample IoU with zero-target conventions, Acc@kIoU, mIoU and the category breakdown."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import SceneCloud
from .model import CATEGORIES, Expression, ModelConfig, ModelParams, Prediction, forward

THRESHOLDS = (0.25, 0.5)


class DataError(ValueError):
    pass


def sample_iou(pred: Prediction, gt_point_mask, gt_empty: bool | None = None) -> float:
    """Point-level IoU; for empty ground truth, 1 iff no query is confident (> 0.5)."""
    gt = np.asarray(gt_point_mask).astype(bool)
    mask = np.asarray(pred.final_point_mask).astype(bool)
    if mask.shape != gt.shape:
        raise ValueError(f"prediction covers {mask.shape[0]} points, ground truth {gt.shape[0]}")
    if gt_empty is None:
        gt_empty = not gt.any()
    if gt_empty:
        return 1.0 if not np.any(np.asarray(pred.confidences) > 0.5) else 0.0
    union = np.count_nonzero(mask | gt)
    return np.count_nonzero(mask & gt) / union


def gt_point_mask(scene: SceneCloud, expr: Expression) -> np.ndarray:
    return np.isin(scene.instance_id, expr.target_instance_ids).astype(np.int8)


@dataclass
class EvalReport:
    miou: float
    acc_025: float
    acc_05: float
    per_category: dict = field(default_factory=dict)
    num_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "acc_025": self.acc_025,
            "acc_05": self.acc_05,
            "per_category": {c: dict(self.per_category[c]) for c in CATEGORIES},
            "num_samples": self.num_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def summarize(ious, categories) -> EvalReport:
    """Aggregate per-sample IoUs tagged with their categories."""
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("cannot evaluate an empty sample list")
    cats = list(categories)
    bad = sorted({c for c in cats if c not in CATEGORIES})
    if bad:
        raise DataError(f"unknown category tags {bad}")
    per = {}
    for c in CATEGORIES:
        sel = np.array([x == c for x in cats])
        n = int(sel.sum())
        sub = ious[sel]
        per[c] = {
            "acc_025": float(np.mean(sub > 0.25)) if n else 0.0,
            "acc_05": float(np.mean(sub > 0.5)) if n else 0.0,
            "count": n,
        }
    # fsum makes the mean independent of summation order
    return EvalReport(
        miou=math.fsum(ious.tolist()) / ious.size,
        acc_025=float(np.mean(ious > 0.25)),
        acc_05=float(np.mean(ious > 0.5)),
        per_category=per,
        num_samples=int(ious.size),
    )


def evaluate(records) -> EvalReport:
    """``records`` is an iterable of ``(prediction, scene, expression)``."""
    ious, cats = [], []
    for pred, scene, expr in records:
        ious.append(sample_iou(pred, gt_point_mask(scene, expr), len(expr.target_instance_ids) == 0))
        cats.append(expr.category)
    return summarize(ious, cats)


def evaluate_model(pairs, params: ModelParams, cfg: ModelConfig) -> EvalReport:
    return evaluate((forward(scene, expr, params, cfg), scene, expr) for scene, expr in pairs)
