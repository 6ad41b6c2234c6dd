"""Point-cloud containers and superpoint-level geometric kernels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class SceneCloud:
    """A colored point cloud with superpoint and instance assignments.

    ``instance_id`` is -1 for background points.  ``instance_class`` and
    ``instance_center`` are indexed by instance id, so instance ids are
    contiguous ``0..N_ins-1``.
    """

    positions: np.ndarray
    colors: np.ndarray
    superpoint_id: np.ndarray
    instance_id: np.ndarray
    instance_class: np.ndarray
    instance_center: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "superpoint_id", np.asarray(self.superpoint_id, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "instance_id", np.asarray(self.instance_id, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "instance_class", np.asarray(self.instance_class, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "instance_center", np.asarray(self.instance_center, dtype=np.float64).reshape(-1, 3))
        self.validate()

    def validate(self) -> None:
        n = self.positions.shape[0]
        for name in ("colors", "superpoint_id", "instance_id"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"SceneCloud.{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if n == 0:
            raise ValueError("SceneCloud has no points")
        sp = self.superpoint_id
        if sp.min() < 0:
            raise ValueError("negative superpoint id")
        counts = np.bincount(sp)
        if np.any(counts == 0):
            raise ValueError(f"empty superpoint {int(np.flatnonzero(counts == 0)[0])}")
        if self.instance_class.shape[0] != self.instance_center.shape[0]:
            raise ValueError("instance_class and instance_center disagree in length")
        inst = self.instance_id
        if inst.min() < -1 or inst.max() >= self.num_instances:
            raise ValueError("point refers to an instance missing from the instance table")

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    @property
    def num_superpoints(self) -> int:
        return int(self.superpoint_id.max()) + 1

    @property
    def num_instances(self) -> int:
        return self.instance_class.shape[0]

    def superpoint_instance(self) -> np.ndarray:
        """Plurality instance id (or -1) of each superpoint, cached."""
        if "sp_inst" not in self._cache:
            self._cache["sp_inst"] = _plurality(self.superpoint_id, self.instance_id, self.num_superpoints)
        return self._cache["sp_inst"]

    def expand(self, superpoint_values: np.ndarray) -> np.ndarray:
        """Broadcast a per-superpoint array back to points."""
        return np.asarray(superpoint_values)[self.superpoint_id]


def _plurality(groups: np.ndarray, labels: np.ndarray, n_groups: int) -> np.ndarray:
    # most frequent label per group, ties to the smallest label value
    uniq, lab = np.unique(labels, return_inverse=True)
    table = np.zeros((n_groups, uniq.shape[0]), dtype=np.int64)
    np.add.at(table, (groups, lab), 1)
    return uniq[np.argmax(table, axis=1)]


def superpoint_pool(point_features: np.ndarray, scene: SceneCloud) -> np.ndarray:
    feats = np.asarray(point_features, dtype=np.float64)
    if feats.shape[0] != scene.num_points:
        raise ValueError("point_features rows must match the scene's point count")
    n_s = scene.num_superpoints
    counts = np.bincount(scene.superpoint_id, minlength=n_s)
    if np.any(counts == 0):
        raise ValueError("empty superpoint")
    out = np.zeros((n_s,) + feats.shape[1:])
    np.add.at(out, scene.superpoint_id, feats)
    return out / counts.reshape((-1,) + (1,) * (feats.ndim - 1))


def superpoint_centroids(scene: SceneCloud) -> np.ndarray:
    if "centroids" not in scene._cache:
        scene._cache["centroids"] = superpoint_pool(scene.positions, scene)
    return scene._cache["centroids"]


def fss(centroids: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """Farthest point sampling over superpoint centroids.

    Starts at ``start`` and repeatedly takes the centroid farthest from the
    current selection; ties go to the lowest index.
    """
    pts = np.asarray(centroids, dtype=np.float64)
    n_s = pts.shape[0]
    if not 1 <= n <= n_s:
        raise ValueError(f"fss: need 1 <= n <= {n_s}, got n={n}")
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = start
    min_d = np.sum((pts - pts[start]) ** 2, axis=1)
    min_d[start] = -1.0
    for k in range(1, n):
        nxt = int(np.argmax(min_d))  # argmax returns the first maximum
        chosen[k] = nxt
        d = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(min_d, d, out=min_d)
        min_d[chosen[: k + 1]] = -1.0
    return chosen


def instance_superpoint_mask(scene: SceneCloud, instance: int) -> np.ndarray:
    if not 0 <= instance < scene.num_instances:
        raise ValueError(f"unknown instance id {instance}")
    return (scene.superpoint_instance() == instance).astype(np.float64)


def gaussian_relevance_labels(seed_sources, scene: SceneCloud, mentioned, alpha: float = 1.0,
                              sigma: float = 1.0) -> np.ndarray:
    """Relevance targets for seed queries.

    For each mentioned instance, the member seed closest to the instance
    center gets 1 and other members get ``exp(-alpha * d^2 / sigma^2)``.
    Membership follows the seed's source superpoint; overlapping labels keep
    the maximum and non-members stay 0.
    """
    seed_sources = np.asarray(seed_sources, dtype=np.int64)
    labels = np.zeros(seed_sources.shape[0])
    if len(mentioned) == 0:
        return labels
    seed_pos = superpoint_centroids(scene)[seed_sources]
    home = scene.superpoint_instance()[seed_sources]
    for inst in mentioned:
        members = np.flatnonzero(home == inst)
        if members.size == 0:
            continue
        d2 = np.sum((seed_pos[members] - scene.instance_center[inst]) ** 2, axis=1)
        vals = np.exp(-alpha * d2 / sigma**2)
        vals[int(np.argmin(d2))] = 1.0
        labels[members] = np.maximum(labels[members], vals)
    return labels


def coverage_repetition_rates(seed_sources, scene: SceneCloud) -> tuple[float, float]:
    """Fraction of instances hit by a seed, and the share of redundant hitting seeds."""
    home = scene.superpoint_instance()[np.asarray(seed_sources, dtype=np.int64)]
    hits = home[home >= 0]
    n_ins = scene.num_instances
    if n_ins == 0:
        raise ValueError("scene has no instances")
    covered = np.unique(hits).shape[0]
    cr = covered / n_ins
    rr = 0.0 if hits.size == 0 else (hits.size - covered) / hits.size
    return cr, rr
