"""Within-community feature scoring (SPEC, modified K-shell), distinctive
feature selection, and Laplacian-spectrum distance between graphs."""
from __future__ import annotations

import csv
import fnmatch
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .community.partition import CommunityPartition
from .errors import EmptyCommunityError, EmptyGraphError, NotSymmetricError
from .graph import FeatureGraph

SYM_TOL = 1e-12


def symmetric_eigen(matrix, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as orthonormal columns. Sweeps stop once the off-diagonal
    Frobenius norm falls below ``tol`` times ``max(1, ||A||_F)``.
    """
    A = np.array(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - A.T).max(initial=0.0) > SYM_TOL * scale:
        raise NotSymmetricError("matrix is not symmetric within 1e-12")
    A = 0.5 * (A + A.T)
    n = len(A)
    V = np.eye(n)
    stop = tol * max(1.0, float(np.linalg.norm(A)))
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off < stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(diff) > 1e15 * abs(apq):
                    # theta^2 would overflow; tan of the rotation angle ~ 1 / (2 theta)
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = A[p, p], A[q, q]
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                A[p, :] = A[:, p]
                A[q, :] = A[:, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    values = np.diag(A).copy()
    order = np.argsort(values, kind="stable")
    return values[order], V[:, order]


def community_laplacian(graph: FeatureGraph, members) -> np.ndarray:
    """L = D - A of the subgraph induced by ``members`` (rows in ``members`` order)."""
    members = list(members)
    if not members:
        raise EmptyCommunityError("community has no members")
    unknown = [m for m in members if m not in graph.nodes]
    if unknown:
        raise ValueError(f"members not in graph: {unknown}")
    A = graph.adjacency(members)
    return np.diag(A.sum(axis=1)) - A


def _relevance(graph: FeatureGraph, relevance):
    if relevance is None:
        return graph.nodes
    return relevance.scores if hasattr(relevance, "scores") else relevance


def spec_scores(graph: FeatureGraph, members, relevance=None) -> dict:
    """SPEC(i) = F_i * sum_j lambda_j * u_j[i]^2 over the community Laplacian.

    ``relevance`` (a TargetRelevance or name -> F mapping) defaults to the
    graph's node weights.
    """
    members = list(members)
    F = _relevance(graph, relevance)
    lam, U = symmetric_eigen(community_laplacian(graph, members))
    structural = (U**2) @ lam
    return {m: max(0.0, float(F.get(m, 0.0)) * float(structural[i])) for i, m in enumerate(members)}


def kshell_value(degree: int, node_weight: float, strength: float) -> int:
    """floor(sqrt(k * W_node * sum W_edges)); the tiny relative nudge keeps
    exact squares from flooring one below after rounding."""
    x = degree * node_weight * strength
    if x <= 0:
        return 0
    return int(math.floor(math.sqrt(x) * (1.0 + 1e-12)))


def _kprime(A: np.ndarray, weights: np.ndarray, alive: np.ndarray) -> np.ndarray:
    sub = A * alive[None, :]
    deg = (sub > 0).sum(axis=1)
    strength = sub.sum(axis=1)
    return np.array([kshell_value(int(deg[i]), weights[i], strength[i]) for i in range(len(A))])


def kshell_scores(graph: FeatureGraph, members, relevance=None) -> dict:
    """Modified K-shell: returns name -> (initial k', shell index).

    Shell s = 1, 2, ...: nodes whose k' (recomputed on the surviving subgraph
    after every removal wave) is at most s are peeled into shell s.
    """
    members = list(members)
    if not members:
        raise EmptyCommunityError("community has no members")
    F = _relevance(graph, relevance)
    A = graph.adjacency(members)
    w = np.array([float(F.get(m, 0.0)) for m in members])
    alive = np.ones(len(members), dtype=bool)
    initial = _kprime(A, w, alive)
    shell = np.zeros(len(members), dtype=np.int64)
    s = 1
    while alive.any():
        k = _kprime(A, w, alive)
        wave = alive & (k <= s)
        if not wave.any():
            # no removal can happen before s reaches the smallest surviving k'
            s = max(s + 1, int(k[alive].min()))
            continue
        shell[wave] = s
        alive &= ~wave
    return {m: (int(initial[i]), int(shell[i])) for i, m in enumerate(members)}


@dataclass
class CommunityScores:
    community: int
    spec: dict
    kshell_value: dict
    shell_index: dict

    def rows(self):
        for name in self.spec:
            yield {
                "community": self.community,
                "feature": name,
                "spec": self.spec[name],
                "kprime": self.kshell_value[name],
                "shell": self.shell_index[name],
            }


def score_community(graph: FeatureGraph, community: int, members, relevance=None) -> CommunityScores:
    spec = spec_scores(graph, members, relevance)
    ks = kshell_scores(graph, members, relevance)
    return CommunityScores(
        community,
        spec,
        {m: ks[m][0] for m in members},
        {m: ks[m][1] for m in members},
    )


def score_partition(graph: FeatureGraph, partition: CommunityPartition, relevance=None) -> dict:
    """Per-community scores on the graph the partition was found on."""
    return {
        c: score_community(graph, c, members, relevance)
        for c, members in enumerate(partition.communities())
        if members
    }


def scores_csv(scores: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["community", "feature", "spec", "kprime", "shell"], lineterminator="\n")
    writer.writeheader()
    for c in sorted(scores):
        for row in scores[c].rows():
            writer.writerow({**row, "spec": repr(float(row["spec"]))})
    return buf.getvalue()


@dataclass
class SelectedFeature:
    name: str
    community: int
    spec: float
    shell_index: int
    kshell_value: int
    rule: str


@dataclass
class SelectedFeatureSet:
    target: str | None
    features: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)

    @property
    def names(self) -> list:
        return [f.name for f in self.features]

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "features": [
                {
                    "name": f.name,
                    "community": f.community,
                    "spec": float(f.spec),
                    "shell_index": f.shell_index,
                    "kprime": f.kshell_value,
                    "rule": f.rule,
                }
                for f in self.features
            ],
            "exclusions": [{"name": n, "reason": r} for n, r in self.exclusions],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SelectedFeatureSet":
        feats = [
            SelectedFeature(d["name"], d["community"], d["spec"], d["shell_index"], d["kprime"], d["rule"])
            for d in data["features"]
        ]
        return cls(data["target"], feats, [(e["name"], e["reason"]) for e in data["exclusions"]])

    def to_text(self) -> str:
        return "".join(f"{n}\n" for n in self.names)


def _tied(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(abs(a), abs(b))


def _rank_community(cs: CommunityScores):
    """Members with positive SPEC, best first, plus the rule that placed each."""
    members = sorted((m for m in cs.spec if cs.spec[m] > 0), key=lambda m: -cs.spec[m])
    groups = []
    for m in members:
        if groups and _tied(cs.spec[groups[-1][0]], cs.spec[m]):
            groups[-1].append(m)
        else:
            groups.append([m])
    ranked = []
    for g in groups:
        g.sort(key=lambda m: (-cs.shell_index[m], -cs.kshell_value[m], m))
        for i, m in enumerate(g):
            if len(g) == 1:
                rule = "max-spec"
            elif i + 1 < len(g) and (cs.shell_index[m], cs.kshell_value[m]) == (
                cs.shell_index[g[i + 1]],
                cs.kshell_value[g[i + 1]],
            ) or i > 0 and (cs.shell_index[m], cs.kshell_value[m]) == (
                cs.shell_index[g[i - 1]],
                cs.kshell_value[g[i - 1]],
            ):
                rule = "spec-tie:name"
            else:
                rule = "spec-tie:kshell"
            ranked.append((m, rule))
    return ranked


def select_distinctive(
    partition: CommunityPartition,
    scores: dict,
    exclusions=(),
    top_k: int = 1,
    target: str | None = None,
) -> SelectedFeatureSet:
    """Pick up to ``top_k`` features per community by SPEC, breaking SPEC ties
    by shell index, then k', then name. Communities whose members all score
    SPEC 0 contribute nothing. Exclusion patterns are applied last."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    chosen = []
    for c in sorted(scores):
        cs = scores[c]
        for name, rule in _rank_community(cs)[:top_k]:
            chosen.append(
                SelectedFeature(name, c, cs.spec[name], cs.shell_index[name], cs.kshell_value[name], rule)
            )
    kept, dropped = [], []
    for f in chosen:
        hit = next((p for p in exclusions if fnmatch.fnmatchcase(f.name, p)), None)
        if hit is None:
            kept.append(f)
        else:
            dropped.append((f.name, f"excluded by pattern {hit!r}"))
    return SelectedFeatureSet(target, kept, dropped)


def laplacian_spectrum(graph: FeatureGraph) -> np.ndarray:
    if not graph.nodes:
        raise EmptyGraphError("graph has no nodes")
    lam, _ = symmetric_eigen(community_laplacian(graph, graph.names))
    return np.clip(lam, 0.0, None)


def spectral_similarity(g1: FeatureGraph, g2: FeatureGraph) -> float:
    """Euclidean distance between ascending Laplacian spectra.

    The shorter spectrum is padded with leading zeros (the eigenvalues that
    extra isolated nodes would add), so the result is a pseudometric.
    """
    a, b = laplacian_spectrum(g1), laplacian_spectrum(g2)
    n = max(len(a), len(b))
    a = np.concatenate([np.zeros(n - len(a)), a])
    b = np.concatenate([np.zeros(n - len(b)), b])
    return float(np.linalg.norm(a - b))
