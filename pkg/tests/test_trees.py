from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest

from snakelab.stable_core import DomainError
from snakelab.trees import (
    CALIBRATED_LABEL_CORRECTION,
    DiscreteTree,
    InfeasibleSizeError,
    OffspringLaw,
    ScalingRegime,
    brute_force_distances,
    enumerate_trees,
    feasible_size,
    from_binary,
    from_parent_text,
    height_process,
    next_above,
    next_below,
    previous_leq,
    range_min,
    reroot,
    sample_conditioned_tree,
    to_binary,
    to_parent_text,
    tree_distance,
    tree_from_parents,
    _sparse_min_table,
)
from snakelab.verify import all_plane_trees, sampler_total_variation

LAW = OffspringLaw(1.5)


def ancestor_depths(parent):
    out = []
    for v in range(len(parent)):
        d, u = 0, v
        while parent[u] >= 0:
            u = parent[u]
            d += 1
        out.append(d)
    return np.array(out)


# ---------------------------------------------------------------- offspring law


def test_pmf_against_binomial_series():
    # mu(k) = (1/alpha) |binom(alpha, k)| for k >= 2
    for a in (1.2, 1.5, 1.9):
        law = OffspringLaw(a, tail_cutoff=5000)
        for k in (2, 3, 7, 40, 1000):
            ref = float(abs(mpmath.binomial(a, k)) / a)
            assert law.pmf(k) == pytest.approx(ref, rel=1e-10)
        assert law.pmf(0) == pytest.approx(1 / a)
        assert law.pmf(1) == 0.0


def test_law_normalized_and_critical():
    assert LAW.survival(LAW.tail_cutoff) + LAW._pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert LAW.mean == pytest.approx(1.0, abs=1e-10)
    assert np.all(LAW._pmf >= 0)


def test_survival_matches_cumulative_pmf():
    for k in (1, 5, 100, 5000):
        assert LAW.survival(k) == pytest.approx(1.0 - LAW._pmf[: k + 1].sum(), rel=1e-9)


def test_pmf_beyond_table_is_consistent():
    k = LAW.tail_cutoff + 10
    assert LAW.pmf(k) == pytest.approx(LAW.survival(k - 1) - LAW.survival(k), rel=1e-12)


def test_empirical_mean_critical():
    rng = np.random.default_rng(1)
    x = LAW.sample(10**6, rng)
    # the variance is infinite; compare on the bulk with a generous band
    assert abs(np.minimum(x, 10**4).mean() - 1.0) < 0.05


def test_tail_index():
    rng = np.random.default_rng(2)
    x = LAW.sample(10**7, rng)
    # 1e7 draws resolve the survival function over about two decades
    ks = np.geomspace(30, 3000, 6)
    surv = np.array([(x > k).mean() for k in ks])
    slope = np.polyfit(np.log(ks), np.log(surv), 1)[0]
    assert slope == pytest.approx(-1.5, abs=0.05)


def test_tail_sampler_far_region():
    law = OffspringLaw(1.5, tail_cutoff=1000, head_cutoff=64)
    rng = np.random.default_rng(3)
    x = law._sample_tail(200_000, rng)
    assert x.min() > 64
    # conditional survival at 2000 given > 64
    ref = law.survival(2000) / law.survival(64)
    assert (x > 2000).mean() == pytest.approx(ref, rel=0.05)


def test_law_validation():
    with pytest.raises(DomainError):
        OffspringLaw(2.5)
    with pytest.raises(ValueError):
        OffspringLaw(1.5, tail_cutoff=10, head_cutoff=100)


# ---------------------------------------------------------------- array kernels


def test_range_min_and_neighbours():
    rng = np.random.default_rng(4)
    a = rng.integers(0, 20, 300)
    table = _sparse_min_table(a)
    lo = rng.integers(0, 299, 500)
    hi = lo + 1 + rng.integers(0, 300 - lo)
    hi = np.minimum(hi, 300)
    np.testing.assert_array_equal(range_min(table, lo, hi), [a[l:h].min() for l, h in zip(lo, hi)])

    prev = previous_leq(a.astype(float))
    for i in (1, 50, 299):
        cands = [j for j in range(i) if a[j] <= a[i]]
        assert prev[i] == (max(cands) if cands else -1)

    start = np.arange(300) + 1
    nb = next_below(a, a, start, strict=True)
    na = next_above(a.astype(float), a + 3.0, start)
    for i in (0, 10, 150):
        below = [j for j in range(i + 1, 300) if a[j] < a[i]]
        above = [j for j in range(i + 1, 300) if a[j] >= a[i] + 3]
        assert nb[i] == (below[0] if below else 300)
        assert na[i] == (above[0] if above else 300)


# ---------------------------------------------------------------- trees


def test_small_tree_examples():
    t = DiscreteTree(np.array([1, -1, -1]))
    np.testing.assert_array_equal(height_process(t), [0, 1, 1])
    np.testing.assert_array_equal(t.parent, [-1, 0, 0])
    assert tree_distance(t, 1, 2) == 2
    assert tree_distance(t, 1, 1) == 0
    single = DiscreteTree(np.array([-1]))
    np.testing.assert_array_equal(height_process(single), [0])


def test_invalid_steps():
    with pytest.raises(ValueError):
        DiscreteTree(np.array([0, -1, -1]))
    with pytest.raises(ValueError):
        DiscreteTree(np.array([-2, 1]))


def test_heights_match_ancestor_count():
    rng = np.random.default_rng(5)
    for n in (7, 101, 2001):
        t = sample_conditioned_tree(LAW, n, rng)
        np.testing.assert_array_equal(t.height, ancestor_depths(t.parent))
        assert t.height[0] == 0
        assert np.all(t.height[1:] == t.height[t.parent[1:]] + 1)
        walk = np.cumsum(t.steps)
        assert walk[-1] == -1 and np.all(walk[:-1] >= 0)


@pytest.mark.parametrize("n", range(1, 7))
def test_distance_matches_bfs_on_all_small_trees(n):
    for t in all_plane_trees(n):
        s, u = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        got = tree_distance(t, s.ravel(), u.ravel()).reshape(n, n)
        np.testing.assert_array_equal(got, brute_force_distances(t))


def test_distance_random_tree():
    rng = np.random.default_rng(6)
    t = sample_conditioned_tree(LAW, 300, rng)
    bfs = brute_force_distances(t)
    s = rng.integers(0, 300, 1000)
    u = rng.integers(0, 300, 1000)
    np.testing.assert_array_equal(tree_distance(t, s, u), bfs[s, u])


def test_reroot_properties():
    rng = np.random.default_rng(7)
    t = sample_conditioned_tree(LAW, 200, rng)
    same, ids = reroot(t, 0)
    np.testing.assert_array_equal(same.height, t.height)
    np.testing.assert_array_equal(ids, np.arange(200))
    bfs = brute_force_distances(t)
    for s in (5, 77, 199):
        new, ids = reroot(t, s)
        assert new.height[0] == 0 and np.all(new.height >= 0)
        assert ids[0] == s
        np.testing.assert_array_equal(new.height, bfs[s, ids])
        back, ids2 = reroot(new, int(np.flatnonzero(ids == 0)[0]))
        np.testing.assert_array_equal(back.height, t.height)
        np.testing.assert_array_equal(ids[ids2], np.arange(200))


def test_reroot_on_all_small_trees():
    for n in range(1, 6):
        for t in all_plane_trees(n):
            bfs = brute_force_distances(t)
            for s in range(n):
                new, ids = reroot(t, s)
                np.testing.assert_array_equal(new.height, bfs[s, ids])


def test_contour_visits():
    t = DiscreteTree(np.array([2, -1, 0, -1, -1]))
    np.testing.assert_array_equal(t.contour, [0, 1, 0, 2, 3, 2, 0, 4, 0])
    assert len(t.contour) == 2 * t.n - 1


# ---------------------------------------------------------------- sampler


def test_feasibility():
    assert feasible_size(1) and feasible_size(3) and feasible_size(4)
    assert not feasible_size(2)
    with pytest.raises(InfeasibleSizeError):
        sample_conditioned_tree(LAW, 2, np.random.default_rng(0))
    with pytest.raises(DomainError):
        sample_conditioned_tree(LAW, 0, np.random.default_rng(0))
    assert enumerate_trees(LAW, 2) == {}


def test_sampler_small_sizes():
    rng = np.random.default_rng(8)
    np.testing.assert_array_equal(sample_conditioned_tree(LAW, 1, rng).steps, [-1])
    np.testing.assert_array_equal(sample_conditioned_tree(LAW, 3, rng).steps, [1, -1, -1])
    assert list(enumerate_trees(LAW, 3)) == [(1, -1, -1)]


@pytest.mark.parametrize("n", [4, 5])
def test_sampler_matches_enumeration(n):
    tv = sampler_total_variation(1.5, n, 20_000, np.random.default_rng(9))
    assert tv < 0.02


def test_sampler_large_n_determinism():
    a = sample_conditioned_tree(LAW, 5000, np.random.default_rng(10))
    b = sample_conditioned_tree(LAW, 5000, np.random.default_rng(10))
    assert a == b and hash(a) == hash(b)
    assert a.n == 5000


def test_height_scaling_stable_in_n():
    rng = np.random.default_rng(11)
    meds = []
    for n in (2**10, 2**13, 2**16):
        reg = ScalingRegime(n, 1.5)
        trees = 120 if n < 2**16 else 40
        meds.append(np.median([reg.height_scale * sample_conditioned_tree(LAW, n, rng).height.max() for _ in range(trees)]))
    for a, b in zip(meds, meds[1:]):
        assert 0.8 <= b / a <= 1.25


# ---------------------------------------------------------------- scaling, export


def test_scaling_regime():
    r = ScalingRegime(4096, 1.5)
    assert r.time_scale == 4096
    assert r.space_scale == pytest.approx((4096 / 1.5) ** (2 / 3))
    assert r.label_scale**2 == pytest.approx(r.height_scale)
    c = ScalingRegime.calibrated(4096, 1.5)
    assert c.label_correction == CALIBRATED_LABEL_CORRECTION[1.5]
    assert ScalingRegime.calibrated(4096, 1.7).label_correction == 1.0
    with pytest.raises(ValueError):
        ScalingRegime(0, 1.5)
    with pytest.raises(ValueError):
        ScalingRegime(10, 1.5, 0.0)


def test_export_round_trips():
    rng = np.random.default_rng(12)
    t = sample_conditioned_tree(LAW, 999, rng)
    assert from_parent_text(to_parent_text(t)) == t
    assert from_binary(to_binary(t)) == t
    assert tree_from_parents(t.parent) == t
