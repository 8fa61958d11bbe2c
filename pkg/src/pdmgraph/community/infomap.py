"""Two-level map-equation community detection for undirected weighted graphs.

The description length of a module assignment M is

    L(M) = plogp(q) - 2 sum_i plogp(q_i) - sum_a plogp(p_a) + sum_i plogp(q_i + p_i)

with p_a the stationary visit rate of node a, q_i the exit flow of module i,
p_i the total visit rate inside module i and q = sum_i q_i. It is minimised by
Louvain-style local moves over nodes, then over aggregated modules.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ..graph import FeatureGraph
from .partition import INFOMAP, CommunityPartition, canonical_labels, make_partition, singleton_partition, to_matrix

logger = logging.getLogger(__name__)

MAX_LEVELS = 64


def plogp(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log2(np.where(x > 0, x, 1.0)), 0.0)


def stationary_flow(W: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Visit rates of the random walk on W by lazy power iteration.

    Each connected component is iterated from a uniform start and then given
    mass proportional to its total edge weight; isolated nodes get 0.
    """
    n = len(W)
    k = W.sum(axis=1)
    total = k.sum()
    p = np.zeros(n)
    if total == 0:
        return p
    _, comp = connected_components(csr_matrix(W > 0), directed=False)
    for c in np.unique(comp):
        idx = np.flatnonzero(comp == c)
        kc = k[idx]
        if kc.sum() == 0:
            continue
        P = W[np.ix_(idx, idx)] / kc[:, None]
        x = np.full(len(idx), 1.0 / len(idx))
        for _ in range(max_iter):
            nxt = 0.5 * (x + x @ P)
            if np.abs(nxt - x).sum() < tol:
                x = nxt
                break
            x = nxt
        else:
            logger.warning("power iteration did not reach tolerance %g", tol)
        p[idx] = x / x.sum() * (kc.sum() / total)
    return p


def edge_flow(W: np.ndarray, p: np.ndarray) -> np.ndarray:
    k = W.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(k[:, None] > 0, p[:, None] * W / np.where(k > 0, k, 1.0)[:, None], 0.0)
    return 0.5 * (F + F.T)


def _codelength(exit_: np.ndarray, flow: np.ndarray, node_term: float) -> float:
    return float(plogp(exit_.sum()) - 2 * plogp(exit_).sum() + plogp(exit_ + flow).sum() - node_term)


def map_equation(graph: FeatureGraph, assignment) -> float:
    """Two-level description length (bits) of ``assignment`` on ``graph``."""
    names, W = to_matrix(graph)
    p = stationary_flow(W)
    F = edge_flow(W, p)
    labels = canonical_labels([assignment[n] for n in names])
    C = labels.max() + 1
    exit_ = np.zeros(C)
    for a in range(len(names)):
        for b in range(len(names)):
            if labels[a] != labels[b]:
                exit_[labels[a]] += F[a, b]
    flow = np.bincount(labels, weights=p, minlength=C)
    return _codelength(exit_, flow, float(plogp(p).sum()))


def _move(F: np.ndarray, p: np.ndarray, labels: np.ndarray, node_term: float, rng, tol: float):
    n = len(F)
    out = F.sum(axis=1) - np.diag(F)
    flow = np.bincount(labels, weights=p, minlength=n)
    exit_ = np.zeros(n)
    for a in range(n):
        row = F[a].copy()
        row[labels == labels[a]] = 0.0
        exit_[labels[a]] += row.sum()
    total_exit = exit_.sum()
    count = np.bincount(labels, minlength=n)
    improved = False
    while True:
        moved = False
        for a in rng.permutation(n):
            A = labels[a]
            row = F[a].copy()
            row[a] = 0.0
            links = np.bincount(labels, weights=row, minlength=n)
            cand = set(np.flatnonzero(links > 0).tolist())
            cand.discard(A)
            if count[A] > 1:
                cand.add(int(np.flatnonzero(count == 0)[0]))
            if not cand:
                continue
            exit_A = exit_[A] - out[a] + 2 * links[A]
            flow_A = flow[A] - p[a]
            base_rest = total_exit - exit_[A]
            old_terms = -2 * plogp(exit_[A]) + plogp(exit_[A] + flow[A])
            best, best_delta = A, 0.0
            for B in sorted(cand):
                exit_B = exit_[B] + out[a] - 2 * links[B]
                flow_B = flow[B] + p[a]
                new_total = base_rest - exit_[B] + exit_A + exit_B
                delta = (
                    plogp(new_total) - plogp(total_exit)
                    - 2 * (plogp(exit_A) + plogp(exit_B))
                    + plogp(exit_A + flow_A) + plogp(exit_B + flow_B)
                    - old_terms
                    - (-2 * plogp(exit_[B]) + plogp(exit_[B] + flow[B]))
                )
                if delta < best_delta - tol:
                    best, best_delta = B, delta
            if best != A:
                B = best
                exit_B = exit_[B] + out[a] - 2 * links[B]
                total_exit = total_exit - exit_[A] - exit_[B] + exit_A + exit_B
                exit_[A], exit_[B] = exit_A, exit_B
                flow[A], flow[B] = flow_A, flow[B] + p[a]
                count[A] -= 1
                count[B] += 1
                labels[a] = B
                moved = improved = True
        if not moved:
            return labels, improved


def infomap_labels(W: np.ndarray, rng) -> np.ndarray:
    p0 = stationary_flow(W)
    F = edge_flow(W, p0)
    node_term = float(plogp(p0).sum())
    p = p0.copy()
    membership = np.arange(len(W))
    for _ in range(MAX_LEVELS):
        labels, improved = _move(F, p, np.arange(len(F)), node_term, rng, 1e-12)
        if not improved:
            break
        labels = canonical_labels(labels)
        membership = labels[membership]
        C = labels.max() + 1
        P = np.zeros((len(labels), C))
        P[np.arange(len(labels)), labels] = 1.0
        F = P.T @ F @ P
        p = P.T @ p
    return canonical_labels(membership)


def infomap(graph: FeatureGraph, seed=0) -> CommunityPartition:
    """Minimise the two-level map equation; deterministic given ``seed``."""
    if graph.n_edges == 0:
        return singleton_partition(graph, INFOMAP)
    names, W = to_matrix(graph)
    rng = np.random.default_rng(seed)
    return make_partition(graph, names, infomap_labels(W, rng), INFOMAP)
