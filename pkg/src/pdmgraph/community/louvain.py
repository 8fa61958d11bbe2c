"""Louvain and Leiden modularity optimisation on dense weighted adjacency."""
from __future__ import annotations

from collections import deque

import numpy as np

from ..graph import FeatureGraph
from .partition import (
    LEIDEN,
    LOUVAIN,
    CommunityPartition,
    aggregate,
    canonical_labels,
    make_partition,
    singleton_partition,
    split_disconnected,
    to_matrix,
)

MAX_LEVELS = 64


def _links(A, i, labels, size):
    row = A[i].copy()
    row[i] = 0.0
    return np.bincount(labels, weights=row, minlength=size)


def _move_nodes(A: np.ndarray, labels: np.ndarray, rng, tol: float):
    """Louvain local moving: sweep nodes in random order until a full pass moves nothing."""
    n = len(A)
    k = A.sum(axis=1)
    two_m = A.sum()
    tot = np.bincount(labels, weights=k, minlength=n)
    improved = False
    while True:
        moved = False
        for i in rng.permutation(n):
            ci = labels[i]
            links = _links(A, i, labels, n)
            tot[ci] -= k[i]
            best, best_gain = ci, links[ci] - tot[ci] * k[i] / two_m
            cand = np.flatnonzero(links > 0)
            if len(cand):
                gains = links[cand] - tot[cand] * k[i] / two_m
                j = int(np.argmax(gains))
                if gains[j] > best_gain + tol:
                    best = cand[j]
            tot[best] += k[i]
            if best != ci:
                labels[i] = best
                moved = improved = True
        if not moved:
            return labels, improved


def louvain_labels(W: np.ndarray, rng) -> np.ndarray:
    membership = np.arange(len(W))
    A = W.copy()
    tol = 1e-13 * max(W.sum(), 1.0)
    for _ in range(MAX_LEVELS):
        labels, improved = _move_nodes(A, np.arange(len(A)), rng, tol)
        if not improved:
            break
        labels = canonical_labels(labels)
        membership = labels[membership]
        A = aggregate(A, labels)
    return canonical_labels(membership)


def _move_nodes_fast(A: np.ndarray, part: np.ndarray, rng, tol: float) -> np.ndarray:
    """Queue-based local moving; only neighbours of moved nodes are revisited."""
    n = len(A)
    part = part.copy()
    k = A.sum(axis=1)
    two_m = A.sum()
    tot = np.bincount(part, weights=k, minlength=n)
    count = np.bincount(part, minlength=n)
    queue = deque(rng.permutation(n).tolist())
    queued = np.ones(n, dtype=bool)
    while queue:
        i = queue.popleft()
        queued[i] = False
        ci = part[i]
        links = _links(A, i, part, n)
        tot[ci] -= k[i]
        count[ci] -= 1
        best, best_gain = ci, links[ci] - tot[ci] * k[i] / two_m
        cand = np.flatnonzero(links > 0)
        if len(cand):
            gains = links[cand] - tot[cand] * k[i] / two_m
            j = int(np.argmax(gains))
            if gains[j] > best_gain + tol:
                best, best_gain = cand[j], gains[j]
        if count[ci] > 0 and best_gain < -tol:
            # an empty community has gain 0
            best = int(np.flatnonzero(count == 0)[0])
        tot[best] += k[i]
        count[best] += 1
        if best != ci:
            part[i] = best
            for j in np.flatnonzero(A[i] > 0):
                if j != i and part[j] != best and not queued[j]:
                    queue.append(j)
                    queued[j] = True
    return part


def _refine(A: np.ndarray, part: np.ndarray, rng, tol: float) -> np.ndarray:
    """Greedy Leiden refinement: inside each community, merge well-connected
    singletons into well-connected sub-communities they link to."""
    n = len(A)
    k = A.sum(axis=1)
    two_m = A.sum()
    refined = np.arange(n)
    tot = k.copy()
    size = np.ones(n, dtype=np.int64)
    for c in range(part.max() + 1):
        members = np.flatnonzero(part == c)
        if len(members) < 2:
            continue
        K_C = k[members].sum()
        sub = A[np.ix_(members, members)]
        inner_deg = sub.sum(axis=1) - np.diag(sub)
        for pos in rng.permutation(len(members)):
            v = members[pos]
            if size[refined[v]] != 1:
                continue
            if inner_deg[pos] < k[v] * (K_C - k[v]) / two_m:
                continue
            row = sub[pos].copy()
            row[pos] = 0.0
            labels = refined[members]
            links = np.bincount(labels, weights=row, minlength=n)
            best, best_gain = None, -tol
            for t in np.flatnonzero(links > 0):
                if t == refined[v]:
                    continue
                in_t = labels == t
                e_out = sub[in_t][:, ~in_t].sum()
                if e_out < tot[t] * (K_C - tot[t]) / two_m:
                    continue
                gain = links[t] - k[v] * tot[t] / two_m
                if gain > best_gain:
                    best, best_gain = t, gain
            if best is not None:
                old = refined[v]
                refined[v] = best
                tot[best] += k[v]
                tot[old] = 0.0
                size[best] += 1
                size[old] = 0
    return refined


def leiden_labels(W: np.ndarray, rng) -> np.ndarray:
    A = W.copy()
    tol = 1e-13 * max(W.sum(), 1.0)
    membership = np.arange(len(W))
    part = np.arange(len(W))
    for _ in range(MAX_LEVELS):
        part = canonical_labels(_move_nodes_fast(A, part, rng, tol))
        if part.max() + 1 == len(A):
            break
        refined = canonical_labels(_refine(A, part, rng, tol))
        if refined.max() + 1 == len(A):
            refined = part
        new_part = np.empty(refined.max() + 1, dtype=np.int64)
        new_part[refined] = part
        membership = refined[membership]
        A = aggregate(A, refined)
        part = new_part
    return split_disconnected(W, part[membership])


def _run(graph: FeatureGraph, seed, labeller, name) -> CommunityPartition:
    if graph.n_edges == 0:
        return singleton_partition(graph, name)
    names, W = to_matrix(graph)
    rng = np.random.default_rng(seed)
    return make_partition(graph, names, labeller(W, rng), name)


def louvain(graph: FeatureGraph, seed=0) -> CommunityPartition:
    """Two-phase Louvain (local moves + aggregation), node order shuffled by ``seed``."""
    return _run(graph, seed, louvain_labels, LOUVAIN)


def leiden(graph: FeatureGraph, seed=0) -> CommunityPartition:
    """Leiden: fast local moves, refinement, aggregation on the refined partition.

    Every returned community induces a connected subgraph.
    """
    return _run(graph, seed, leiden_labels, LEIDEN)
