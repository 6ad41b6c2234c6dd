import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from gres3d.geometry import (
    SceneCloud,
    coverage_repetition_rates,
    fss,
    gaussian_relevance_labels,
    instance_superpoint_mask,
    superpoint_centroids,
    superpoint_pool,
)
from helpers import random_scene
from oracles import fps_bruteforce, group_mean


def _scene(pos, sp, inst, n_inst=None):
    pos = np.asarray(pos, dtype=float)
    n_inst = n_inst if n_inst is not None else max(max(inst) + 1, 0)
    centers = np.array([pos[np.asarray(inst) == k].mean(axis=0) for k in range(n_inst)]).reshape(-1, 3)
    return SceneCloud(pos, np.zeros_like(pos), sp, inst, np.zeros(n_inst, dtype=int), centers)


def test_pool_two_values():
    sc = _scene([[0, 0, 0], [1, 0, 0]], [0, 0], [-1, -1])
    assert superpoint_pool(np.array([[1.0], [3.0]]), sc).tolist() == [[2.0]]


def test_pool_identity_grouping():
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(9, 3))
    sc = _scene(pos, np.arange(9), [-1] * 9)
    f = rng.normal(size=(9, 4))
    assert np.array_equal(superpoint_pool(f, sc), f)
    assert np.array_equal(superpoint_centroids(sc), pos)


def test_pool_matches_grouping_oracle():
    rng = np.random.default_rng(1)
    sp = np.concatenate([np.arange(7), rng.integers(0, 7, size=93)])
    sc = _scene(rng.normal(size=(100, 3)), sp, [-1] * 100)
    f = rng.normal(size=(100, 5))
    np.testing.assert_allclose(superpoint_pool(f, sc), group_mean(f, sp), atol=1e-12)
    np.testing.assert_allclose(superpoint_centroids(sc), group_mean(sc.positions, sp), atol=1e-12)


def test_centroid_midpoint():
    sc = _scene([[0, 0, 0], [2, 0, 0]], [0, 0], [-1, -1])
    assert superpoint_centroids(sc).tolist() == [[1.0, 0.0, 0.0]]


def test_empty_superpoint_rejected():
    with pytest.raises(ValueError, match="empty superpoint"):
        _scene(np.zeros((2, 3)), [0, 2], [-1, -1])


def test_unknown_instance_rejected():
    with pytest.raises(ValueError, match="instance table"):
        SceneCloud(np.zeros((2, 3)), np.zeros((2, 3)), [0, 0], [0, 3], [1], [[0, 0, 0]])


@given(hnp.arrays(float, (12, 2), elements=st.floats(-5, 5)), st.integers(1, 12))
def test_pool_expand_preserves_means(feats, n_sp):
    sp = np.arange(12) % n_sp
    sc = _scene(np.zeros((12, 3)), sp, [-1] * 12)
    pooled = superpoint_pool(feats, sc)
    again = superpoint_pool(sc.expand(pooled), sc)
    np.testing.assert_allclose(again, pooled, atol=1e-12)


def test_fss_line():
    assert fss(np.array([[0, 0, 0], [1, 0, 0], [10, 0, 0.0]]), 2).tolist() == [0, 2]


def test_fss_square_diagonal():
    sq = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    assert fss(sq, 2).tolist() == [0, 3]


def test_fss_exhaustive_is_permutation():
    pts = np.random.default_rng(2).normal(size=(20, 3))
    assert sorted(fss(pts, 20).tolist()) == list(range(20))


def test_fss_tie_goes_low():
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0.0]])
    assert fss(pts, 2).tolist() == [0, 1]


@pytest.mark.parametrize("n", [0, 5])
def test_fss_bad_count(n):
    with pytest.raises(ValueError):
        fss(np.zeros((4, 3)), n)


@given(st.integers(0, 10_000), st.integers(1, 24))
def test_fss_matches_oracle_and_unique(seed, n_s):
    rng = np.random.default_rng(seed)
    # coarse grid coordinates create plenty of exact distance ties
    pts = rng.integers(0, 4, size=(n_s, 3)).astype(float)
    n = int(rng.integers(1, n_s + 1))
    got = fss(pts, n).tolist()
    assert got == fps_bruteforce(pts, n)
    assert len(set(got)) == n


def test_instance_mask_majority():
    # superpoint 0: 3 points of instance 0, 2 of instance 1 -> belongs to 0
    pos = np.zeros((7, 3))
    sc = _scene(pos, [0, 0, 0, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1, 1], 2)
    assert instance_superpoint_mask(sc, 0).tolist() == [1, 0]
    assert instance_superpoint_mask(sc, 1).tolist() == [0, 1]


def test_instance_mask_tie_smallest_id():
    sc = _scene(np.zeros((4, 3)), [0, 0, 0, 0], [1, 1, 0, 0], 2)
    assert instance_superpoint_mask(sc, 0).tolist() == [1]
    assert instance_superpoint_mask(sc, 1).tolist() == [0]


def test_instance_mask_unknown():
    sc = _scene(np.zeros((2, 3)), [0, 0], [0, 0], 1)
    with pytest.raises(ValueError):
        instance_superpoint_mask(sc, 4)


def test_instance_mask_recount_oracle():
    rng = np.random.default_rng(3)
    sc = random_scene(rng, n_sp=10, per_sp=6, n_inst=3)
    inst = sc.instance_id.copy()
    inst[rng.random(inst.size) < 0.3] = -1
    sc = SceneCloud(sc.positions, sc.colors, sc.superpoint_id, inst, sc.instance_class, sc.instance_center)
    for k in range(3):
        expect = []
        for s in range(10):
            members = inst[sc.superpoint_id == s].tolist()
            counts = {v: members.count(v) for v in set(members)}
            top = max(counts.values())
            expect.append(1 if min(v for v, c in counts.items() if c == top) == k else 0)
        assert instance_superpoint_mask(sc, k).tolist() == expect


def _two_instance_scene():
    # instance 0 owns superpoints 0,1 ; instance 1 owns 2 ; 3 is floor
    pos = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0], [1, 0, 0], [5, 0, 0], [5, 0, 0], [9, 0, 0], [9, 0, 0.0]])
    sp = [0, 0, 1, 1, 2, 2, 3, 3]
    inst = [0, 0, 0, 0, 1, 1, -1, -1]
    sc = SceneCloud(pos, np.zeros_like(pos), sp, inst, [0, 1], [[0, 0, 0], [5, 0, 0]])
    return sc


def test_gaussian_labels_branches():
    sc = _two_instance_scene()
    lab = gaussian_relevance_labels([0, 1, 2, 3], sc, [0])
    assert lab[0] == 1.0
    assert lab[1] == pytest.approx(np.exp(-1.0), abs=1e-15)  # dist 1 from center
    assert lab[2] == 0.0 and lab[3] == 0.0
    assert gaussian_relevance_labels([0, 1, 2, 3], sc, []).tolist() == [0, 0, 0, 0]


def test_gaussian_labels_alpha_sigma():
    sc = _two_instance_scene()
    lab = gaussian_relevance_labels([1, 0], sc, [0], alpha=2.0, sigma=0.5)
    assert lab[0] == pytest.approx(np.exp(-2.0 / 0.25))
    assert lab[1] == 1.0


@given(st.integers(0, 10_000))
def test_gaussian_labels_range_and_single_one(seed):
    rng = np.random.default_rng(seed)
    sc = random_scene(rng, n_sp=12, per_sp=3, n_inst=3)
    seeds = rng.choice(12, size=int(rng.integers(1, 13)), replace=False)
    mentioned = [k for k in range(3) if rng.random() < 0.6]
    lab = gaussian_relevance_labels(seeds, sc, mentioned)
    assert np.all((lab >= 0) & (lab <= 1))
    home = sc.superpoint_instance()[seeds]
    for k in mentioned:
        if np.any(home == k):
            assert np.count_nonzero(lab[home == k] == 1.0) >= 1
    assert np.all(lab[~np.isin(home, mentioned)] == 0)


def test_coverage_full_and_single():
    sc = _two_instance_scene()
    assert coverage_repetition_rates([0, 2], sc) == (1.0, 0.0)
    one = SceneCloud(np.zeros((4, 3)), np.zeros((4, 3)), [0, 1, 2, 3], [0, 0, 0, 0], [0], [[0, 0, 0]])
    cr, rr = coverage_repetition_rates([0, 1, 2], one)
    assert cr == 1.0 and rr == pytest.approx(2 / 3)


def test_coverage_none_hit():
    sc = _two_instance_scene()
    assert coverage_repetition_rates([3], sc) == (0.0, 0.0)


@given(st.integers(0, 10_000))
def test_coverage_recount_and_duplicates(seed):
    rng = np.random.default_rng(seed)
    sc = random_scene(rng, n_sp=12, per_sp=2, n_inst=4)
    seeds = rng.choice(12, size=int(rng.integers(1, 13)), replace=False).tolist()
    cr, rr = coverage_repetition_rates(seeds, sc)
    home = [int(sc.superpoint_instance()[s]) for s in seeds]
    hits = [h for h in home if h >= 0]
    assert cr == len(set(hits)) / 4
    assert rr == (0.0 if not hits else (len(hits) - len(set(hits))) / len(hits))
    assert 0 <= cr <= 1 and 0 <= rr <= 1
    covered = [s for s, h in zip(seeds, home) if h >= 0]
    if covered:
        cr2, rr2 = coverage_repetition_rates(seeds + [covered[0]], sc)
        assert cr2 == cr and rr2 >= rr
