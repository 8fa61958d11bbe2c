from pathlib import Path

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdmgraph.errors import EmptyGraphError, IoError
from pdmgraph.graph import FeatureGraph, build_feature_graph, export_graph, read_graph, remove_edges, to_dot
from pdmgraph.ingest import TimeTable
from pdmgraph.stats import AssociationMatrix, TargetRelevance, pearson, pearson_matrix

GOLDEN = Path(__file__).parent / "golden"


def test_negative_correlation_becomes_positive_edge():
    assoc = AssociationMatrix(["a", "b"], np.array([[1.0, -0.9], [-0.9, 1.0]]), "pearson")
    g = build_feature_graph(assoc, TargetRelevance("alarm", {"a": 1.0, "b": 2.0}))
    assert g.edges == {("a", "b"): 0.9}
    assert g.target == "alarm" and g.kind == "continuous"


def test_zero_associations_give_no_edges():
    assoc = AssociationMatrix(list("abc"), np.eye(3), "cramers_v")
    g = build_feature_graph(assoc, TargetRelevance("alarm", dict.fromkeys("abc", 1.0)))
    assert len(g.nodes) == 3 and g.n_edges == 0 and g.kind == "categorical"


def test_missing_relevance_gives_zero_weight_and_warning():
    assoc = AssociationMatrix(["a", "b"], np.eye(2), "pearson")
    g = build_feature_graph(assoc, TargetRelevance("alarm", {"a": 3.0}))
    assert g.nodes == {"a": 3.0, "b": 0.0}
    assert len(g.warnings) == 1 and "'b'" in g.warnings[0]


def test_empty_matrix_rejected():
    with pytest.raises(EmptyGraphError):
        build_feature_graph(AssociationMatrix([], np.zeros((0, 0)), "pearson"), TargetRelevance("alarm"))


def test_edges_equal_pairwise_pearson():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 4))
    X[:, 1] += X[:, 0]
    X[:, 3] -= 0.5 * X[:, 2]
    names = ["w", "x", "y", "z"]
    t = TimeTable(np.arange(200), {n: X[:, i] for i, n in enumerate(names)})
    g = build_feature_graph(pearson_matrix(t, names), TargetRelevance("alarm", dict.fromkeys(names, 1.0)))
    expected = {(names[i], names[j]): abs(pearson(X[:, i], X[:, j])) for i in range(4) for j in range(i + 1, 4)}
    assert g.edges.keys() == expected.keys()
    for e, w in expected.items():
        assert g.edges[e] == pytest.approx(w, abs=1e-12)


def chain(weights):
    nodes = {f"n{i}": 1.0 for i in range(len(weights) + 1)}
    return FeatureGraph(nodes, {(f"n{i}", f"n{i + 1}"): w for i, w in enumerate(weights)}, "alarm")


def test_remove_edges_examples():
    g = chain([0.1, 0.3, 0.5])
    assert remove_edges(g, 0.0).edges == g.edges
    assert sorted(remove_edges(g, 0.3).edges.values()) == [0.3, 0.5]
    assert remove_edges(chain([1.0, 0.99]), 1.0).edges == {("n0", "n1"): 1.0}
    assert len(remove_edges(g, 0.9).nodes) == 4


def test_self_loop_and_unknown_node_rejected():
    with pytest.raises(ValueError):
        FeatureGraph({"a": 1.0}, {("a", "a"): 0.5})
    with pytest.raises(ValueError):
        FeatureGraph({"a": 1.0}, {("a", "b"): 0.5})


def test_graphml_nodes_only_and_weights_via_networkx(tmp_path):
    g = FeatureGraph({"b": 2.0, "a": 1.5}, {}, "alarm")
    path = tmp_path / "g.graphml"
    export_graph(g, "graphml", path)
    h = nx.read_graphml(path)
    assert sorted(h.nodes) == ["a", "b"] and h.number_of_edges() == 0
    assert h.nodes["b"]["nodeWeight"] == 2.0

    g2 = chain([0.25, 0.75])
    export_graph(g2, "graphml", path)
    h2 = nx.read_graphml(path)
    assert h2.edges["n1", "n2"]["edgeWeight"] == 0.75


def test_json_round_trip(tmp_path):
    g = FeatureGraph({"speed": 4.0, "soc": 2.0}, {("speed", "soc"): 0.5}, "alarm", "continuous")
    path = tmp_path / "g.json"
    export_graph(g, "json", path)
    assert read_graph(path).structurally_equal(g)


def test_dot_matches_golden_file():
    g = FeatureGraph({"speed": 4.0, "soc": 2.0, "temp": 0.0}, {("speed", "soc"): 0.5, ("soc", "temp"): 0.25}, "alarm")
    assert to_dot(g) == (GOLDEN / "three_node.dot").read_text()


def test_export_errors(tmp_path):
    g = chain([0.5])
    with pytest.raises(ValueError):
        export_graph(g, "png")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        export_graph(g, "dot", blocker / "g.dot")
    with pytest.raises(IoError):
        read_graph(blocker)


@st.composite
def weighted_graphs(draw):
    n = draw(st.integers(1, 8))
    nodes = {f"v{i}": draw(st.floats(0, 100)) for i in range(n)}
    edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            if draw(st.booleans()):
                edges[(f"v{i}", f"v{j}")] = draw(st.floats(0.01, 1.0))
    return FeatureGraph(nodes, edges, "alarm")


@settings(max_examples=60, deadline=None)
@given(weighted_graphs(), st.floats(0, 1), st.floats(0, 1))
def test_remove_edges_monotone_and_keeps_nodes(g, t1, t2):
    lo, hi = sorted((t1, t2))
    a, b = remove_edges(g, lo), remove_edges(g, hi)
    assert set(b.edges) <= set(a.edges)
    assert a.nodes == g.nodes and b.nodes == g.nodes


@settings(max_examples=60, deadline=None)
@given(weighted_graphs())
def test_json_round_trip_property(g):
    assert FeatureGraph.from_json(g.to_json()).structurally_equal(g)
