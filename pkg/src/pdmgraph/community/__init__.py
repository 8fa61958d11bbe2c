"""Community detection: Leiden, InfoMap, Fast Greedy, Louvain and the
dynamic-threshold sweep that picks among them."""
from .dynamic import DEFAULT_THRESHOLDS, SweepResult, cell_seed, detect_dynamic, run_algorithm
from .fastgreedy import fast_greedy
from .infomap import infomap, map_equation
from .louvain import leiden, louvain
from .partition import (
    ALGORITHMS,
    FAST_GREEDY,
    INFOMAP,
    LEIDEN,
    LOUVAIN,
    CommunityPartition,
    algorithm_name,
    modularity,
)

__all__ = [
    "ALGORITHMS",
    "CommunityPartition",
    "DEFAULT_THRESHOLDS",
    "FAST_GREEDY",
    "INFOMAP",
    "LEIDEN",
    "LOUVAIN",
    "SweepResult",
    "algorithm_name",
    "cell_seed",
    "detect_dynamic",
    "fast_greedy",
    "infomap",
    "leiden",
    "louvain",
    "map_equation",
    "modularity",
    "run_algorithm",
]
