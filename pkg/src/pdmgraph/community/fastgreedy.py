"""Agglomerative greedy modularity maximisation (Clauset-Newman-Moore style)."""
import numpy as np

from ..graph import FeatureGraph
from .partition import FAST_GREEDY, CommunityPartition, make_partition, singleton_partition, to_matrix


def fast_greedy_labels(W: np.ndarray) -> np.ndarray:
    n = len(W)
    m = W.sum() / 2.0
    E = W.copy()
    D = W.sum(axis=1)
    labels = np.arange(n)
    alive = np.ones(n, dtype=bool)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    while True:
        # merging a and b changes Q by w_ab/m - D_a D_b / (2 m^2)
        dq = E / m - np.outer(D, D) / (2.0 * m * m)
        valid = upper & (E > 0) & alive[:, None] & alive[None, :]
        if not valid.any():
            break
        dq = np.where(valid, dq, -np.inf)
        flat = int(np.argmax(dq))  # first maximum in row-major order: lowest (a, b)
        if not dq.flat[flat] > 0:
            break
        a, b = divmod(flat, n)
        E[a] += E[b]
        E[:, a] += E[:, b]
        E[a, a] = 0.0
        E[b] = 0.0
        E[:, b] = 0.0
        D[a] += D[b]
        D[b] = 0.0
        alive[b] = False
        labels[labels == b] = a
    return labels


def fast_greedy(graph: FeatureGraph) -> CommunityPartition:
    """Start from singletons and keep merging the pair with the largest
    positive modularity gain. Deterministic."""
    if graph.n_edges == 0:
        return singleton_partition(graph, FAST_GREEDY)
    names, W = to_matrix(graph)
    return make_partition(graph, names, fast_greedy_labels(W), FAST_GREEDY)
