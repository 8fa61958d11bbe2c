"""Threshold sweep: run every algorithm on every thresholded copy of a graph
and keep the partition with the highest modularity."""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import NoStructureError
from ..graph import FeatureGraph, remove_edges
from .fastgreedy import fast_greedy
from .infomap import infomap
from .louvain import leiden, louvain
from .partition import (
    FAST_GREEDY,
    INFOMAP,
    LEIDEN,
    LOUVAIN,
    ALGORITHMS,
    CommunityPartition,
    algorithm_name,
    modularity,
)

DEFAULT_THRESHOLDS = tuple(round(0.10 + 0.05 * i, 2) for i in range(18))  # 0.10 .. 0.95


def cell_seed(seed: int, threshold: float, algorithm: str) -> np.random.SeedSequence:
    tag = zlib.crc32(f"{threshold:.6f}|{algorithm}".encode())
    return np.random.SeedSequence([int(seed), tag])


def run_algorithm(graph: FeatureGraph, algorithm: str, seed) -> CommunityPartition:
    algorithm = algorithm_name(algorithm)
    if algorithm == LEIDEN:
        return leiden(graph, seed)
    if algorithm == INFOMAP:
        return infomap(graph, seed)
    if algorithm == FAST_GREEDY:
        return fast_greedy(graph)
    if algorithm == LOUVAIN:
        return louvain(graph, seed)
    raise ValueError(algorithm)


@dataclass
class SweepResult:
    best: CommunityPartition
    threshold: float
    algorithm: str
    table: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scores": self.table,
            "best": self.best.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SweepResult":
        best = CommunityPartition.from_json(data["best"])
        return cls(best, best.threshold, best.algorithm, list(data["scores"]))


def _cell(args):
    graph, threshold, algorithm, seed = args
    g = remove_edges(graph, threshold)
    if g.n_edges == 0:
        return None
    part = run_algorithm(g, algorithm, cell_seed(seed, threshold, algorithm))
    part.modularity = modularity(g, part.assignment)
    part.threshold = threshold
    return part


def detect_dynamic(
    graph: FeatureGraph,
    thresholds=DEFAULT_THRESHOLDS,
    algorithms=ALGORITHMS,
    seed: int = 0,
    max_workers: int = 1,
) -> SweepResult:
    """Sweep ``thresholds`` (ascending) x ``algorithms``; return the maximum-modularity cell.

    Modularity is evaluated on the thresholded graph each partition was found
    on. Ties go to the lower threshold, then to the earlier algorithm in
    ``algorithms``. Results do not depend on ``max_workers``.
    """
    thresholds = [float(t) for t in thresholds]
    algorithms = [algorithm_name(a) for a in algorithms]
    if not thresholds or not algorithms:
        raise ValueError("thresholds and algorithms must be nonempty")
    if any(not 0.0 <= t <= 1.0 for t in thresholds) or thresholds != sorted(thresholds):
        raise ValueError("thresholds must be ascending values in [0, 1]")
    cells = [(graph, t, a, seed) for t in thresholds for a in algorithms]
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(_cell, cells))
    else:
        parts = [_cell(c) for c in cells]

    table = []
    best = None
    for (_, t, a, _), part in zip(cells, parts):
        if part is None:
            table.append({"threshold": t, "algorithm": a, "modularity": None, "n_communities": None})
            continue
        table.append({"threshold": t, "algorithm": a, "modularity": part.modularity, "n_communities": part.n_communities})
        if best is None or part.modularity > best.modularity:
            best = part
    if best is None:
        raise NoStructureError("every thresholded graph is edgeless")
    return SweepResult(best, best.threshold, best.algorithm, table)
