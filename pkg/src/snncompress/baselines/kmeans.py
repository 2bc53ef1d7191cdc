"""Deterministic 1-D k-means (k-means++ seeding, Lloyd refinement)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: list = field(default_factory=list)
    iterations: int = 0


def _nearest(points, centroids):
    d = (points[:, None] - centroids[None, :]) ** 2
    idx = np.argmin(d, axis=1)
    return idx, d[np.arange(points.size), idx]


def _plus_plus(points, m, rng):
    centroids = [points[rng.integers(points.size)]]
    for _ in range(1, m):
        _, d2 = _nearest(points, np.array(centroids))
        total = d2.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.unique(points), centroids)
            centroids.append(remaining[rng.integers(remaining.size)])
            continue
        centroids.append(points[rng.choice(points.size, p=d2 / total)])
    return np.array(centroids, dtype=np.float64)


def _lloyd(points, centroids, iters):
    idx, d2 = _nearest(points, centroids)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, iters + 1):
        m = centroids.size
        counts = np.bincount(idx, minlength=m)
        sums = np.bincount(idx, weights=points, minlength=m)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled]
        for k in np.flatnonzero(~filled):
            # Empty cluster: move it onto the worst-served point.
            _, d_now = _nearest(points, new)
            new[k] = points[int(np.argmax(d_now))]
        centroids = new
        new_idx, d2 = _nearest(points, centroids)
        history.append(float(d2.sum()))
        if np.array_equal(new_idx, idx):
            idx = new_idx
            break
        idx = new_idx
    return centroids, idx, history, it


def _optimal_centroids(points, m):
    """Exact 1-D optimum: the best split of the sorted points into m contiguous runs.

    Dynamic programme over prefix sums, O(m n^2) time and O(m n) memory.
    """
    x = np.sort(points)
    n = x.size
    s1 = np.concatenate([[0.0], np.cumsum(x)])
    s2 = np.concatenate([[0.0], np.cumsum(x * x)])
    i = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = (s2[j] - s2[i]) - (s1[j] - s1[i]) ** 2 / (j - i)
    cost = np.where(j > i, np.maximum(cost, 0.0), np.inf)
    best = cost[0].copy()
    back = []
    for _ in range(1, m):
        total = best[:, None] + cost
        arg = np.argmin(total, axis=0)
        back.append(arg)
        best = total[arg, np.arange(n + 1)]
    bounds = [n]
    for arg in reversed(back):
        bounds.append(int(arg[bounds[-1]]))
    bounds.append(0)
    bounds = bounds[::-1]
    return np.array([x[a:b].mean() for a, b in zip(bounds, bounds[1:])])


def kmeans_1d(points, m: int, iters: int = 100, seed: int = 0, n_init: int = 8,
              exact_limit: int = 1024) -> KMeansResult:
    """Cluster scalar ``points`` into ``m`` groups.

    Runs ``n_init`` seeded k-means++ restarts and keeps the lowest inertia
    (first one on ties).  When there are at most ``exact_limit`` points, one
    more Lloyd run starts from the exact 1-D optimum, so small sets never end
    in a local minimum.  Centroids are returned sorted ascending, and the
    assignment indexes into that sorted order.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1)
    if m < 1:
        raise ContractError(f"m must be >= 1, got {m}")
    n_distinct = np.unique(pts).size
    if m > n_distinct:
        raise ContractError(f"m={m} exceeds the number of distinct points ({n_distinct})")
    rng = np.random.default_rng(seed)
    best = None
    starts = [_plus_plus(pts, m, rng) for _ in range(max(1, n_init))]
    if pts.size <= exact_limit:
        starts.append(_optimal_centroids(pts, m))
    for start in starts:
        centroids, idx, history, it = _lloyd(pts, start, iters)
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = KMeansResult(centroids, idx, inertia, history, it)
    order = np.argsort(best.centroids, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(m)
    best.centroids = best.centroids[order]
    best.assignment = remap[best.assignment]
    return best
