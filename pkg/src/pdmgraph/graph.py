"""Weighted feature graphs: construction, thresholding and export."""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGraphError, IoError
from .ingest import CATEGORICAL, CONTINUOUS
from .serialize import dumps, read_json, write_text
from .stats import PEARSON, AssociationMatrix, TargetRelevance


def edge_key(u, v):
    return (u, v) if u <= v else (v, u)


@dataclass
class FeatureGraph:
    """Undirected weighted graph over feature names.

    ``nodes`` maps name -> node weight (ANOVA F against ``target``);
    ``edges`` maps a sorted name pair -> association strength in [0, 1].
    """

    nodes: dict
    edges: dict = field(default_factory=dict)
    target: str | None = None
    kind: str = CONTINUOUS
    warnings: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        clean = {}
        for (u, v), w in self.edges.items():
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            if u not in self.nodes or v not in self.nodes:
                raise ValueError(f"edge ({u!r}, {v!r}) references an unknown node")
            clean[edge_key(u, v)] = float(w)
        self.edges = clean

    @property
    def names(self) -> list:
        return list(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def copy(self) -> "FeatureGraph":
        return FeatureGraph(dict(self.nodes), dict(self.edges), self.target, self.kind, list(self.warnings))

    def weight(self, u, v) -> float:
        return self.edges.get(edge_key(u, v), 0.0)

    def adjacency(self, order=None) -> np.ndarray:
        order = list(order) if order is not None else self.names
        index = {n: i for i, n in enumerate(order)}
        A = np.zeros((len(order), len(order)))
        for (u, v), w in self.edges.items():
            if u in index and v in index:
                A[index[u], index[v]] = A[index[v], index[u]] = w
        return A

    def subgraph(self, members) -> "FeatureGraph":
        keep = [n for n in self.nodes if n in set(members)]
        ks = set(keep)
        return FeatureGraph(
            {n: self.nodes[n] for n in keep},
            {e: w for e, w in self.edges.items() if e[0] in ks and e[1] in ks},
            self.target,
            self.kind,
        )

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "kind": self.kind,
            "nodes": [{"name": n, "weight": float(self.nodes[n])} for n in sorted(self.nodes)],
            "edges": [{"u": u, "v": v, "weight": float(w)} for (u, v), w in sorted(self.edges.items())],
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeatureGraph":
        nodes = {d["name"]: float(d["weight"]) for d in data["nodes"]}
        edges = {(d["u"], d["v"]): float(d["weight"]) for d in data["edges"]}
        return cls(nodes, edges, data.get("target"), data.get("kind", CONTINUOUS))

    def structurally_equal(self, other: "FeatureGraph") -> bool:
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.target == other.target
            and self.kind == other.kind
        )


def build_feature_graph(assoc: AssociationMatrix, relevance: TargetRelevance, kind: str | None = None) -> FeatureGraph:
    """One node per feature, one edge per nonzero association.

    Pearson associations enter as |r|. Features without a relevance score
    get node weight 0 and a warning on ``graph.warnings``.
    """
    names = list(assoc.feature_names)
    if not names:
        raise EmptyGraphError("association matrix has no features")
    if kind is None:
        kind = CONTINUOUS if assoc.method == PEARSON else CATEGORICAL
    warnings = []
    nodes = {}
    for n in names:
        if n in relevance.scores:
            nodes[n] = float(relevance.scores[n])
        else:
            nodes[n] = 0.0
            warnings.append(f"no relevance score for {n!r}; node weight set to 0")
    edges = {}
    V = np.abs(np.asarray(assoc.values, dtype=float))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if V[i, j] != 0:
                edges[edge_key(names[i], names[j])] = float(min(V[i, j], 1.0))
    return FeatureGraph(nodes, edges, relevance.target, kind, warnings)


def remove_edges(graph: FeatureGraph, threshold: float) -> FeatureGraph:
    """Copy of ``graph`` without edges lighter than ``threshold`` (strict <)."""
    out = graph.copy()
    out.edges = {e: w for e, w in graph.edges.items() if not w < threshold}
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def to_graphml(graph: FeatureGraph) -> str:
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    ET.SubElement(root, "key", {"id": "nodeWeight", "for": "node", "attr.name": "nodeWeight", "attr.type": "double"})
    ET.SubElement(root, "key", {"id": "edgeWeight", "for": "edge", "attr.name": "edgeWeight", "attr.type": "double"})
    g = ET.SubElement(root, "graph", {"id": str(graph.target or "G"), "edgedefault": "undirected"})
    for n in sorted(graph.nodes):
        node = ET.SubElement(g, "node", {"id": n})
        ET.SubElement(node, "data", {"key": "nodeWeight"}).text = _fmt(graph.nodes[n])
    for (u, v), w in sorted(graph.edges.items()):
        edge = ET.SubElement(g, "edge", {"source": u, "target": v})
        ET.SubElement(edge, "data", {"key": "edgeWeight"}).text = _fmt(w)
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def _dot_id(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: FeatureGraph) -> str:
    # width scales node weight into [0.3, 1.5] inches; penwidth scales edge weight into [1, 5]
    top = max(graph.nodes.values(), default=0.0)
    lines = [f"graph {_dot_id(str(graph.target or 'G'))} {{"]
    for n in sorted(graph.nodes):
        w = graph.nodes[n]
        width = 0.3 + 1.2 * (w / top if top > 0 else 0.0)
        lines.append(f"  {_dot_id(n)} [width={width:.4f}, nodeWeight={_fmt(w)}];")
    for (u, v), w in sorted(graph.edges.items()):
        lines.append(f"  {_dot_id(u)} -- {_dot_id(v)} [penwidth={1 + 4 * w:.4f}, edgeWeight={_fmt(w)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: FeatureGraph, fmt: str, dest=None) -> str:
    """Render ``graph`` as ``graphml``, ``dot`` or ``json``; write to ``dest`` if given."""
    fmt = fmt.lower()
    if fmt == "graphml":
        text = to_graphml(graph)
    elif fmt == "dot":
        text = to_dot(graph)
    elif fmt == "json":
        text = dumps(graph.to_json())
    else:
        raise ValueError(f"unknown graph format {fmt!r}")
    if dest is not None:
        write_text(dest, text)
    return text


def read_graph(path) -> FeatureGraph:
    try:
        return FeatureGraph.from_json(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise IoError(f"{path} is not a serialized feature graph: {exc}") from exc
