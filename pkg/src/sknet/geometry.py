"""Deterministic spatial operators: kNN, ball query, FPS, random sampling, grouping.

All operators are pure functions over immutable float arrays and use squared
Euclidean distances internally. Determinism is part of the contract: distance
ties always break toward the lower point index, so results are reproducible
and (for tie-free inputs) invariant to storage order of the point set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GroupedRegions:
    """Index structure mapping M query regions to member points of a source set.

    members[j] lists region j's point indices sorted by ascending distance to
    the j-th query (ties by ascending index). Ball-query rows with fewer than
    S in-radius points are padded by repeating the nearest member.
    """
    region_count: int
    members: np.ndarray  # int (M, S)
    source_size: int

    def __post_init__(self):
        m = np.asarray(self.members)
        if m.ndim != 2 or m.shape[0] != self.region_count:
            raise ValueError(f"members shape {m.shape} inconsistent with M={self.region_count}")
        if m.size and (m.min() < 0 or m.max() >= self.source_size):
            raise ValueError(f"member index out of range [0, {self.source_size})")


def squared_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (M, N).

    Computed from coordinate differences (not the Gram-matrix identity) so each
    entry depends only on its own point pair; this keeps results bit-identical
    under any permutation of either input.
    """
    q = np.asarray(queries, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    return ((q[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1)


def knn_query(points: np.ndarray, queries: np.ndarray, k: int) -> GroupedRegions:
    """Indices of the k nearest points to each query, nearest first.

    Brute force over all pairs; ties break to the lower index (stable sort of
    squared distances).
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        raise ValueError("knn_query: empty point set")
    if not 1 <= k <= n:
        raise ValueError(f"knn_query: k={k} out of range for N={n}")
    d2 = squared_distances(queries, points)
    order = np.argsort(d2, axis=1, kind="stable")
    return GroupedRegions(queries.shape[0], order[:, :k], n)


def ball_query(points: np.ndarray, queries: np.ndarray, radius: float,
               max_samples: int) -> GroupedRegions:
    """Up to max_samples points within ``radius`` of each query, nearest first.

    Rows with fewer than max_samples members are padded by repeating the
    nearest member; a query with no point in radius falls back to its single
    nearest point repeated.
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        raise ValueError("ball_query: empty point set")
    if radius <= 0:
        raise ValueError(f"ball_query: radius must be positive, got {radius}")
    if max_samples < 1:
        raise ValueError(f"ball_query: max_samples must be >= 1, got {max_samples}")
    d2 = squared_distances(queries, points)
    order = np.argsort(d2, axis=1, kind="stable")
    r2 = radius * radius
    members = np.empty((queries.shape[0], max_samples), dtype=order.dtype)
    for j in range(queries.shape[0]):
        row = order[j]
        inside = row[d2[j, row] <= r2][:max_samples]
        if inside.size == 0:
            inside = row[:1]
        members[j, :inside.size] = inside
        members[j, inside.size:] = inside[0]
    return GroupedRegions(queries.shape[0], members, n)


def farthest_point_sampling(points: np.ndarray, count: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min subset selection starting from ``seed_index``.

    Deterministic: each step picks the point with the largest distance to the
    selected set, ties to the lowest index. Returns indices in selection order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"farthest_point_sampling: count={count} out of range for N={n}")
    if not 0 <= seed_index < n:
        raise ValueError(f"farthest_point_sampling: seed_index={seed_index} out of range")
    selected = np.empty(count, dtype=np.int64)
    selected[0] = seed_index
    d2 = ((points - points[seed_index]) ** 2).sum(axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(d2))  # argmax returns the first (lowest-index) maximum
        selected[i] = nxt
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return selected


def random_dropout_sample(points: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``count`` indices without replacement."""
    n = np.asarray(points).shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"random_dropout_sample: count={count} out of range for N={n}")
    return rng.choice(n, size=count, replace=False)


def gather_group(points: np.ndarray, regions: GroupedRegions) -> np.ndarray:
    """Gather member coordinates per region: (M, S, 3). Pure indexing."""
    points = np.asarray(points, dtype=np.float64)
    if regions.source_size != points.shape[0]:
        raise ValueError(
            f"gather_group: regions built over {regions.source_size} points, got {points.shape[0]}")
    return points[regions.members]
