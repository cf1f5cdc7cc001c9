import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhisyn.topology import Clustering, build_rings, cluster_by_speed


def brute_force_sse(values, K):
    """Minimum SSE over every assignment of points to K nonempty groups."""
    n = len(values)
    best = np.inf
    for labels in itertools.product(range(K), repeat=n):
        if len(set(labels)) != K or labels[0] != 0:
            continue
        sse = 0.0
        for k in range(K):
            group = [v for v, l in zip(values, labels) if l == k]
            m = sum(group) / len(group)
            sse += sum((v - m) ** 2 for v in group)
        best = min(best, sse)
    return best


def brute_force_sse_intervals(values, K):
    """Minimum SSE over contiguous splits of the sorted values (valid optimum structure in 1-D)."""
    v = sorted(values)
    best = np.inf
    for cuts in itertools.combinations(range(1, len(v)), K - 1):
        bounds = [0, *cuts, len(v)]
        sse = sum(np.sum((np.array(v[a:b]) - np.mean(v[a:b])) ** 2) for a, b in zip(bounds, bounds[1:]))
        best = min(best, sse)
    return best


def test_single_class():
    c = cluster_by_speed({0: 3.0, 1: 1.0, 2: 7.0}, 1)
    assert set(c.assignments.values()) == {0}
    assert c.centroids == [pytest.approx(11 / 3)]


def test_two_obvious_groups():
    t = dict(enumerate([1, 1, 1, 10, 10, 10]))
    c = cluster_by_speed(t, 2)
    assert c.members(0) == [0, 1, 2]
    assert c.members(1) == [3, 4, 5]
    assert brute_force_sse(list(t.values()), 2) == pytest.approx(c.sse(t)) == 0.0


def test_every_device_alone():
    t = {0: 4.0, 1: 2.0, 2: 9.0, 3: 5.5}
    c = cluster_by_speed(t, 4)
    assert c.sse(t) == 0.0
    assert sorted(c.centroids) == sorted(t.values())
    assert c.centroids == sorted(c.centroids)


def test_rejects_too_many_classes():
    with pytest.raises(ValueError):
        cluster_by_speed({0: 1.0}, 2)


def test_exhaustive_oracle_small():
    # full enumeration (not only intervals) for tiny instances
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(1, 8))
        K = int(rng.integers(1, min(n, 3) + 1))
        values = list(np.round(rng.uniform(1, 10, n), 2))
        c = cluster_by_speed(dict(enumerate(values)), K)
        assert c.sse(dict(enumerate(values))) == pytest.approx(brute_force_sse(values, K), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(values=st.lists(st.floats(0.5, 50.0), min_size=1, max_size=12), K=st.integers(1, 4))
def test_interval_structure_and_optimality(values, K):
    K = min(K, len(values))
    t = dict(enumerate(values))
    c = cluster_by_speed(t, K)
    assert c.sse(t) == pytest.approx(brute_force_sse_intervals(values, K), rel=1e-9, abs=1e-9)
    # classes are intervals of the sorted sequence, numbered fastest first
    order = sorted(t, key=lambda d: (t[d], d))
    labels = [c.assignments[d] for d in order]
    assert labels == sorted(labels)
    assert set(labels) == set(range(K))


def test_ring_small_to_large():
    t = {0: 5.0, 1: 3.0, 2: 9.0}
    ring = build_rings(cluster_by_speed(t, 1), t)
    assert ring.successor == {1: 0, 0: 2, 2: 1}


def test_singleton_self_loop():
    t = {7: 2.0}
    assert build_rings(cluster_by_speed(t, 1), t).successor == {7: 7}


def test_tie_break_by_id():
    t = {8: 5.0, 3: 5.0}
    ring = build_rings(cluster_by_speed(t, 1), t)
    assert ring.cycle_from(3) == [3, 8]


def test_large_to_small_reverses():
    t = {0: 5.0, 1: 3.0, 2: 9.0}
    ring = build_rings(cluster_by_speed(t, 1), t, order="large_to_small")
    assert ring.cycle_from(2) == [2, 0, 1]


@settings(max_examples=60, deadline=None)
@given(values=st.lists(st.floats(1.0, 20.0), min_size=1, max_size=40), K=st.integers(1, 6),
       order=st.sampled_from(["small_to_large", "large_to_small", "random"]))
def test_one_cycle_per_class(values, K, order):
    K = min(K, len(values))
    t = dict(enumerate(values))
    c = cluster_by_speed(t, K)
    ring = build_rings(c, t, order=order, rng=np.random.default_rng(0))
    for k in range(K):
        members = c.members(k)
        cycle = ring.cycle_from(members[0])
        assert sorted(cycle) == sorted(members)
        if order == "small_to_large":
            fastest = min(members, key=lambda d: (t[d], d))
            times = [t[d] for d in ring.cycle_from(fastest)]
            assert times == sorted(times)
