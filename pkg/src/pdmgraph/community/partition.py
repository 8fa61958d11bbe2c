"""Partition value type, modularity, and dense-matrix helpers shared by the
community-detection algorithms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import UndefinedModularityError
from ..graph import FeatureGraph

LEIDEN = "Leiden"
INFOMAP = "InfoMap"
FAST_GREEDY = "FastGreedy"
LOUVAIN = "Louvain"
ALGORITHMS = (LEIDEN, INFOMAP, FAST_GREEDY, LOUVAIN)

_ALIASES = {a.lower(): a for a in ALGORITHMS}
_ALIASES.update({"fast_greedy": FAST_GREEDY, "fast greedy": FAST_GREEDY})


def algorithm_name(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown community algorithm {name!r}; choose from {ALGORITHMS}") from None


@dataclass
class CommunityPartition:
    assignment: dict
    modularity: float
    threshold: float | None
    algorithm: str

    @property
    def defined(self) -> bool:
        return not math.isnan(self.modularity)

    @property
    def n_communities(self) -> int:
        return len(set(self.assignment.values()))

    def communities(self) -> list:
        """Member lists indexed by community id, members in assignment order."""
        out = [[] for _ in range(self.n_communities)]
        for node, c in self.assignment.items():
            out[c].append(node)
        return out

    def to_json(self) -> dict:
        return {
            "assignment": {k: int(v) for k, v in self.assignment.items()},
            "modularity": None if not self.defined else float(self.modularity),
            "threshold": self.threshold,
            "algorithm": self.algorithm,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CommunityPartition":
        q = data["modularity"]
        return cls(dict(data["assignment"]), float("nan") if q is None else float(q), data["threshold"], data["algorithm"])


def modularity(graph: FeatureGraph, assignment) -> float:
    """Weighted modularity: sum over communities of L_c/m - (D_c/2m)^2."""
    m = sum(graph.edges.values())
    if m <= 0:
        raise UndefinedModularityError("graph has no edge weight; modularity is undefined")
    missing = [n for n in graph.nodes if n not in assignment]
    if missing:
        raise ValueError(f"assignment does not cover nodes {missing}")
    inner = {}
    degree = {}
    for (u, v), w in graph.edges.items():
        cu, cv = assignment[u], assignment[v]
        if cu == cv:
            inner[cu] = inner.get(cu, 0.0) + w
        degree[cu] = degree.get(cu, 0.0) + w
        degree[cv] = degree.get(cv, 0.0) + w
    return sum(inner.get(c, 0.0) / m - (d / (2 * m)) ** 2 for c, d in degree.items())


def canonical_labels(labels) -> np.ndarray:
    """Relabel so community ids are 0..C-1 in order of first appearance."""
    labels = np.asarray(labels)
    seen = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, c in enumerate(labels):
        out[i] = seen.setdefault(c, len(seen))
    return out


def to_matrix(graph: FeatureGraph):
    names = graph.names
    return names, graph.adjacency(names)


def split_disconnected(W: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Split every community into its connected components (never lowers Q)."""
    labels = canonical_labels(labels)
    out = np.empty_like(labels)
    nxt = 0
    for c in range(labels.max() + 1 if len(labels) else 0):
        idx = np.flatnonzero(labels == c)
        sub = W[np.ix_(idx, idx)]
        _, comp = connected_components(csr_matrix(sub > 0), directed=False)
        out[idx] = comp + nxt
        nxt += comp.max() + 1
    return canonical_labels(out)


def aggregate(W: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Community-level weight matrix P^T W P (diagonal holds twice the inner weight)."""
    k = labels.max() + 1
    P = np.zeros((len(labels), k))
    P[np.arange(len(labels)), labels] = 1.0
    return P.T @ W @ P


def make_partition(graph: FeatureGraph, names, labels, algorithm: str, threshold=None) -> CommunityPartition:
    labels = canonical_labels(labels)
    assignment = {n: int(c) for n, c in zip(names, labels)}
    if graph.n_edges == 0:
        q = float("nan")
    else:
        q = modularity(graph, assignment)
    return CommunityPartition(assignment, q, threshold, algorithm)


def singleton_partition(graph: FeatureGraph, algorithm: str, threshold=None) -> CommunityPartition:
    return make_partition(graph, graph.names, np.arange(len(graph.nodes)), algorithm, threshold)
