"""Measurement partitioning and ranked track-to-cluster assignment."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

DEFAULT_EPS_GRID = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
DOPPLER_SPLIT_THRESHOLD = 3 * 0.15
LSTSQ_RCOND = 0.05

Cluster = tuple[int, ...]
Partition = tuple[Cluster, ...]


class InfeasibleAssignmentError(ValueError):
    pass


def canonical(clusters) -> Partition:
    """Sorted tuple-of-sorted-tuples form used for equality and dedup."""
    return tuple(sorted(tuple(sorted(int(i) for i in c)) for c in clusters if len(c)))


def check_partition(part: Partition) -> None:
    seen: set[int] = set()
    for c in part:
        if not c:
            raise ValueError("empty cluster")
        if seen.intersection(c):
            raise ValueError("clusters overlap")
        seen.update(c)


# ---------------------------------------------------------------------------
# DBSCAN
# ---------------------------------------------------------------------------


def dbscan(points: np.ndarray, eps: float, min_pts: int = 1) -> tuple[list[np.ndarray], np.ndarray]:
    """Density-based clustering; returns (clusters, noise) as index arrays.

    ``min_pts`` counts the point itself.  Clusters are ordered by their
    smallest member index.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    if n == 0:
        return [], np.empty(0, dtype=int)
    nbr = cdist(points, points) <= eps
    core = nbr.sum(axis=1) >= min_pts
    label = np.full(n, -1)
    next_id = 0
    for i in range(n):
        if label[i] != -1 or not core[i]:
            continue
        label[i] = next_id
        stack = [i]
        while stack:
            j = stack.pop()
            if not core[j]:
                continue
            for k in np.flatnonzero(nbr[j]):
                if label[k] == -1:
                    label[k] = next_id
                    stack.append(k)
        next_id += 1
    clusters = [np.flatnonzero(label == c) for c in range(next_id)]
    clusters.sort(key=lambda c: c[0])
    return clusters, np.flatnonzero(label == -1)


# ---------------------------------------------------------------------------
# Doppler consistency
# ---------------------------------------------------------------------------


def rigid_doppler_fit(alpha: np.ndarray, vd: np.ndarray):
    """Least-squares (c1, c2) in v_D = c1 cos(alpha) + c2 sin(alpha); returns (coef, residuals)."""
    A = np.column_stack([np.cos(alpha), np.sin(alpha)])
    coef, *_ = np.linalg.lstsq(A, vd, rcond=LSTSQ_RCOND)
    return coef, vd - A @ coef


def doppler_split(cluster: Sequence[int], alpha: np.ndarray, vd: np.ndarray, threshold: float = DOPPLER_SPLIT_THRESHOLD) -> list[Cluster]:
    """Split off detections inconsistent with a single rigid-body Doppler profile.

    Worst residuals are moved to an outlier group one at a time (refitting
    after each) until the remaining residuals fall below ``threshold``.
    Returns [cluster] when nothing is split, otherwise [inliers, outliers].
    """
    idx = np.asarray(cluster, dtype=int)
    if len(idx) < 2:
        return [tuple(int(i) for i in idx)]
    inl = list(idx)
    out: list[int] = []
    while len(inl) >= 2:
        _, res = rigid_doppler_fit(alpha[inl], vd[inl])
        worst = int(np.argmax(np.abs(res)))
        if abs(res[worst]) <= threshold:
            break
        out.append(inl.pop(worst))
    if not out:
        return [tuple(int(i) for i in idx)]
    return [tuple(sorted(int(i) for i in inl)), tuple(sorted(int(i) for i in out))]


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------


def gated_partition(subset: np.ndarray, gate: np.ndarray, dist: np.ndarray) -> Partition:
    """One cluster per track collecting its gated detections; conflicts go to the nearest track.

    gate, dist: (T, M) boolean gate mask and detection-to-track distances.
    """
    clusters: dict[int, list[int]] = {}
    for m in subset:
        tracks = np.flatnonzero(gate[:, m])
        if len(tracks) == 0:
            continue
        best = int(tracks[np.argmin(dist[tracks, m])])
        clusters.setdefault(best, []).append(int(m))
    return canonical(clusters.values())


def generate_partitions(
    points: np.ndarray,
    alpha: np.ndarray,
    vd: np.ndarray,
    subset: Sequence[int] | None = None,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    gate: np.ndarray | None = None,
    dist: np.ndarray | None = None,
    split_threshold: float | None = DOPPLER_SPLIT_THRESHOLD,
) -> list[Partition]:
    """Candidate partitions of the detections in ``subset`` (default: all).

    Union of one DBSCAN partition per eps, the track-gated partition (when
    gate/dist are given) and Doppler-split variants of each, deduplicated in
    order of first appearance.
    """
    if len(eps_grid) == 0:
        raise ValueError("eps_grid must be non-empty")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    sub = np.arange(len(points)) if subset is None else np.asarray(subset, dtype=int)
    if len(sub) == 0:
        return [()]
    base: list[Partition] = []
    dmat = cdist(points[sub], points[sub])
    for eps in eps_grid:
        # DBSCAN with min_pts = 1 is the connected components of the eps-graph
        labels = _components(dmat <= eps)
        base.append(canonical([sub[labels == c] for c in np.unique(labels)]))
    if gate is not None and dist is not None:
        gp = gated_partition(sub, gate, dist)
        if gp:
            base.append(gp)
    out: list[Partition] = []
    seen: set[Partition] = set()

    def add(p: Partition):
        if p not in seen:
            seen.add(p)
            out.append(p)

    splits: dict[Cluster, list[Cluster]] = {}
    for p in base:
        add(p)
        if split_threshold is not None:
            split = []
            for c in p:
                if c not in splits:
                    splits[c] = doppler_split(c, alpha, vd, split_threshold)
                split.extend(splits[c])
            add(canonical(split))
    return out


def _components(adj: np.ndarray) -> np.ndarray:
    """Connected-component labels (smallest member index) of a symmetric boolean adjacency."""
    idx = np.arange(len(adj))
    labels = idx.copy()
    while True:
        nxt = np.where(adj, labels[None, :], len(adj)).min(axis=1)
        if np.array_equal(nxt, labels):
            return labels
        labels = nxt


def all_partitions(items: Sequence[int]) -> list[Partition]:
    """Every set partition of ``items`` (Bell-number many)."""
    items = list(items)
    if not items:
        return [()]
    first, rest = items[0], items[1:]
    out = []
    for sub in all_partitions(rest):
        out.append(canonical(((first,),) + sub))
        for i in range(len(sub)):
            merged = list(sub)
            merged[i] = (first,) + sub[i]
            out.append(canonical(merged))
    return out


# ---------------------------------------------------------------------------
# ranked assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankedAssignment:
    theta: tuple[int, ...]  # per track: cluster index, or -1 for misdetection
    cost: float


def _solve(C: np.ndarray):
    try:
        rows, cols = linear_sum_assignment(C)
    except ValueError:
        return None
    total = C[rows, cols].sum()
    if not np.isfinite(total):
        return None
    return cols, float(total)


def murty(cost: np.ndarray, miss_cost: np.ndarray, k: int) -> list[RankedAssignment]:
    """The k cheapest track-to-cluster maps.

    cost: (T, K) cost of assigning track t to cluster c (inf = forbidden);
    miss_cost: (T,) cost of a misdetection.  Each cluster is used at most once.
    """
    cost = np.asarray(cost, dtype=float)
    miss_cost = np.asarray(miss_cost, dtype=float)
    n_t, n_c = cost.shape
    if k < 1:
        raise ValueError("k must be positive")
    if n_t == 0:
        return [RankedAssignment((), 0.0)]
    if n_t == 1:
        opts = [(float(miss_cost[0]), -1)] + [(float(c), j) for j, c in enumerate(cost[0]) if np.isfinite(c)]
        opts = [o for o in opts if np.isfinite(o[0])]
        if not opts:
            raise InfeasibleAssignmentError("no valid assignment")
        opts.sort(key=lambda o: (o[0], o[1]))
        return [RankedAssignment((j,), c) for c, j in opts[:k]]

    miss = np.full((n_t, n_t), np.inf)
    np.fill_diagonal(miss, miss_cost)
    full = np.hstack([cost, miss])

    def decode(cols) -> tuple[int, ...]:
        return tuple(int(c) if c < n_c else -1 for c in cols)

    first = _solve(full)
    if first is None:
        raise InfeasibleAssignmentError("no valid assignment")
    counter = itertools.count()
    heap = [(first[1], next(counter), first[0], full)]
    out: list[RankedAssignment] = []
    while heap and len(out) < k:
        total, _, cols, C = heapq.heappop(heap)
        out.append(RankedAssignment(decode(cols), total))
        # partition the remaining solution space around this assignment
        fixed = C.copy()
        for t in range(n_t):
            child = fixed.copy()
            child[t, cols[t]] = np.inf
            sol = _solve(child)
            if sol is not None:
                heapq.heappush(heap, (sol[1], next(counter), sol[0], child))
            # force row t to its current column in subsequent children
            keep = fixed[t, cols[t]]
            fixed[t, :] = np.inf
            fixed[:, cols[t]] = np.inf
            fixed[t, cols[t]] = keep
    return out


def brute_force_assignments(cost: np.ndarray, miss_cost: np.ndarray) -> list[RankedAssignment]:
    """Every valid map, sorted by cost (test oracle)."""
    cost = np.asarray(cost, dtype=float)
    n_t, n_c = cost.shape
    out = []
    for theta in itertools.product(range(-1, n_c), repeat=n_t):
        used = [j for j in theta if j >= 0]
        if len(used) != len(set(used)):
            continue
        total = sum(miss_cost[t] if j < 0 else cost[t, j] for t, j in enumerate(theta))
        if np.isfinite(total):
            out.append(RankedAssignment(tuple(theta), float(total)))
    out.sort(key=lambda r: r.cost)
    return out
