"""Speed classes and per-class ring successor maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

RING_ORDERS = ("small_to_large", "large_to_small", "random")


@dataclass(frozen=True)
class Clustering:
    assignments: dict[int, int]
    centroids: list[float]
    K: int

    def members(self, k: int) -> list[int]:
        return [d for d, c in self.assignments.items() if c == k]

    def sse(self, t_values: Mapping[int, float]) -> float:
        return sum((t_values[d] - self.centroids[c]) ** 2 for d, c in self.assignments.items())


@dataclass(frozen=True)
class RingTopology:
    successor: dict[int, int]

    def cycle_from(self, start: int) -> list[int]:
        out = [start]
        node = self.successor[start]
        while node != start:
            out.append(node)
            node = self.successor[node]
        return out


def sorted_by_speed(t_values: Mapping[int, float]) -> list[int]:
    return sorted(t_values, key=lambda d: (t_values[d], d))


def optimal_1d_segments(values: np.ndarray, K: int) -> list[int]:
    """Start index of each of the K contiguous segments minimizing total SSE.

    ``values`` must be sorted. Classic O(K n^2) dynamic program, vectorized over
    the split position.
    """
    n = len(values)
    x = values - values.mean()
    s1 = np.concatenate([[0.0], np.cumsum(x)])
    s2 = np.concatenate([[0.0], np.cumsum(x * x)])

    def seg_cost(starts: np.ndarray, end: int) -> np.ndarray:
        # SSE of values[starts:end] for each start
        cnt = end - starts
        s = s1[end] - s1[starts]
        return np.maximum(s2[end] - s2[starts] - s * s / cnt, 0.0)

    # best[k, j]: min SSE of values[:j] using k+1 segments
    best = np.full((K, n + 1), np.inf)
    split = np.zeros((K, n + 1), dtype=np.int64)
    for j in range(1, n + 1):
        best[0, j] = seg_cost(np.array([0]), j)[0]
    for k in range(1, K):
        for j in range(k + 1, n + 1):
            starts = np.arange(k, j)
            total = best[k - 1, starts] + seg_cost(starts, j)
            i = int(np.argmin(total))
            best[k, j] = total[i]
            split[k, j] = starts[i]

    bounds = []
    j = n
    for k in range(K - 1, 0, -1):
        j = int(split[k, j])
        bounds.append(j)
    return [0, *reversed(bounds)]


def cluster_by_speed(t_values: Mapping[int, float], K: int) -> Clustering:
    """Exact 1-D k-means on local-training times; class 0 is the fastest."""
    if not t_values:
        raise ValueError("no devices to cluster")
    if not 1 <= K <= len(t_values):
        raise ValueError(f"K={K} must lie in [1, {len(t_values)}]")
    order = sorted_by_speed(t_values)
    values = np.array([t_values[d] for d in order], dtype=np.float64)
    starts = optimal_1d_segments(values, K)
    ends = [*starts[1:], len(order)]

    assignments: dict[int, int] = {}
    centroids = []
    for k, (a, b) in enumerate(zip(starts, ends)):
        centroids.append(float(values[a:b].mean()))
        for d in order[a:b]:
            assignments[d] = k
    return Clustering(dict(sorted(assignments.items())), centroids, K)


def build_rings(
    clustering: Clustering,
    t_values: Mapping[int, float],
    order: str = "small_to_large",
    rng: np.random.Generator | None = None,
) -> RingTopology:
    if order not in RING_ORDERS:
        raise ValueError(f"unknown ring order {order!r}; choose from {RING_ORDERS}")
    successor: dict[int, int] = {}
    for k in range(clustering.K):
        members = sorted_by_speed({d: t_values[d] for d in clustering.members(k)})
        if order == "large_to_small":
            members = members[::-1]
        elif order == "random":
            if rng is None:
                raise ValueError("random ring order needs an rng")
            members = [members[i] for i in rng.permutation(len(members))]
        for a, b in zip(members, members[1:] + members[:1]):
            successor[a] = b
    return RingTopology(dict(sorted(successor.items())))
