"""Stage-by-stage orchestration over an artifact directory.

Every stage reads its inputs from files written by earlier stages and records
what it wrote (with content hashes) in ``manifest.json``. A stage whose inputs
hash and outputs are unchanged can be skipped on resume. Wall-clock durations
go to ``timings.log`` so that the JSON artifacts stay byte-identical across
runs.
"""
from __future__ import annotations

import hashlib
import logging
import time
from pathlib import Path

import numpy as np

from .community.dynamic import SweepResult, detect_dynamic
from .community.partition import CommunityPartition
from .config import PipelineConfig
from .errors import EmptyDatasetError, IoError, NoStructureError, PdmError, SchemaError
from .evaluate import ForestModel, evaluate, grid_search, lime_explain, permutation_importance, train_forest
from .graph import FeatureGraph, build_feature_graph, export_graph, read_graph, remove_edges
from .ingest import (
    CATEGORICAL,
    CONTINUOUS,
    FeatureKind,
    describe,
    drop_uninformative,
    filter_stationary,
    impute,
    infer_feature_kinds,
    parse_table,
    serialize_table,
)
from .sampling import (
    SamplingReport,
    balance_dataset,
    find_optimal_interval,
    load_dataset,
    save_dataset,
    shift_labels,
    split_dataset,
    standardize,
    time_interval_undersample,
)
from .scoring import SelectedFeatureSet, score_partition, scores_csv, select_distinctive, spectral_similarity
from .serialize import dumps, read_json, sha256_file, write_json, write_text
from .stats import (
    AssociationMatrix,
    TargetRelevance,
    alarm_active_intervals,
    anomaly_overlap_report,
    cramers_v_matrix,
    overlap_report_csv,
    pearson_matrix,
    target_relevance,
    zscore_anomalies,
)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "stats", "graph", "communities", "select", "sample", "train", "explain")
KINDS = (CONTINUOUS, CATEGORICAL)

# config keys each stage depends on, beyond the outputs of earlier stages
STAGE_KEYS = {
    "ingest": (
        "timestamp_column",
        "targets",
        "stationary_predicate",
        "impute_before_filter",
        "protocol_patterns",
        "categorical_cap",
    ),
    "stats": ("targets", "stats"),
    "graph": ("targets",),
    "communities": ("targets", "thresholds", "algorithms", "seed"),
    "select": ("targets", "exclusions", "top_k"),
    "sample": ("targets", "horizon", "sampling", "seed"),
    "train": ("targets", "sampling", "model", "seed"),
    "explain": ("targets", "explain", "seed"),
}


class StageError(PdmError):
    """Raised (chained to the cause) when a stage fails."""


def _hash_json(obj) -> str:
    return hashlib.sha256(dumps(obj).encode()).hexdigest()


class ArtifactDir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def rel(self, p: Path) -> str:
        return p.relative_to(self.root).as_posix()

    def manifest(self) -> dict:
        p = self.path("manifest.json")
        return read_json(p) if p.exists() else {"stages": {}}

    def save_manifest(self, manifest: dict) -> None:
        write_json(self.path("manifest.json"), manifest)

    def require(self, p: Path) -> Path:
        if not p.exists():
            raise IoError(f"missing artifact {self.rel(p)}; run the earlier stages first")
        return p


# loaders shared by stages


def load_table(art: ArtifactDir):
    table = parse_table(art.require(art.path("ingest", "table.csv")))
    meta = read_json(art.path("ingest", "schema.json"))
    schema = {n: FeatureKind(k["kind"], k["cardinality"]) for n, k in meta["schema"].items()}
    # textual categoricals come back as text; numeric ones as floats
    return table.with_schema(schema)


def _features(table, targets) -> dict:
    out = {CONTINUOUS: [], CATEGORICAL: []}
    for name in table.names:
        if name not in targets:
            out[table.schema[name].kind].append(name)
    return out


# stages


def stage_ingest(cfg: PipelineConfig, art: ArtifactDir) -> list:
    table = parse_table(cfg.input, cfg.timestamp_column)
    n_raw = table.n_rows
    missing = [t for t in cfg.targets if t not in table.columns]
    if missing:
        raise SchemaError(f"target columns not in input: {missing}")
    predicate = [tuple(c) for c in cfg.stationary_predicate]
    table = table.with_schema(infer_feature_kinds(table, cfg.categorical_cap, cfg.targets))
    if cfg.impute_before_filter:
        table = filter_stationary(impute(table), predicate)
    else:
        table = filter_stationary(table, predicate)
    if table.n_rows == 0:
        raise EmptyDatasetError("every row matched the stationary predicate")
    table, dropped = drop_uninformative(table, cfg.protocol_patterns, keep=cfg.targets)
    if not cfg.impute_before_filter:
        table = impute(table)
    out = [art.path("ingest", "table.csv"), art.path("ingest", "schema.json"), art.path("ingest", "summary.json")]
    write_text(out[0], serialize_table(table))
    write_json(
        out[1],
        {
            "schema": {n: {"kind": k.kind, "cardinality": k.cardinality} for n, k in table.schema.items()},
            "dropped": dropped,
            "rows_read": n_raw,
            "rows_kept": table.n_rows,
        },
    )
    continuous = [n for n in table.names if not table.schema[n].is_categorical]
    summary = describe(table, continuous) if continuous else {}
    write_json(out[2], {n: vars(s) for n, s in summary.items()})
    return out


def stage_stats(cfg: PipelineConfig, art: ArtifactDir) -> list:
    table = load_table(art)
    feats = _features(table, cfg.targets)
    out = []
    if len(feats[CONTINUOUS]) >= 2:
        p = art.path("stats", "associations_continuous.json")
        write_json(p, pearson_matrix(table, feats[CONTINUOUS]).to_json())
        out.append(p)
    if len(feats[CATEGORICAL]) >= 2:
        p = art.path("stats", "associations_categorical.json")
        write_json(p, cramers_v_matrix(table, feats[CATEGORICAL]).to_json())
        out.append(p)
    anomalies = {
        n: zscore_anomalies(table.timestamps, table[n], cfg.stats["zscore_threshold"], f"anomaly:{n}")
        for n in feats[CONTINUOUS]
    }
    for target in cfg.targets:
        rel = target_relevance(table, target, feats[CONTINUOUS] + feats[CATEGORICAL], table.schema)
        p = art.path("stats", f"{target}_relevance.json")
        write_json(p, rel.to_json())
        alarms = alarm_active_intervals(table, target, cfg.stats["min_alarm_duration"], cfg.stats["cadence"])
        q = art.path("stats", f"{target}_alarms.json")
        write_json(q, alarms.to_json())
        r = art.path("stats", f"{target}_anomaly_overlap.csv")
        write_text(r, overlap_report_csv(anomaly_overlap_report(alarms, anomalies)))
        out += [p, q, r]
    return out


def stage_graph(cfg: PipelineConfig, art: ArtifactDir) -> list:
    out = []
    for target in cfg.targets:
        rel = TargetRelevance.from_json(read_json(art.require(art.path("stats", f"{target}_relevance.json"))))
        for kind in KINDS:
            src = art.path("stats", f"associations_{kind}.json")
            if not src.exists():
                continue
            g = build_feature_graph(AssociationMatrix.from_json(read_json(src)), rel, kind)
            for fmt in ("json", "graphml", "dot"):
                p = art.path("graph", f"{target}_{kind}.{fmt}")
                export_graph(g, fmt, p)
                out.append(p)
    return out


def _graphs(cfg, art, target):
    for kind in KINDS:
        p = art.path("graph", f"{target}_{kind}.json")
        if p.exists():
            yield kind, read_graph(p)


def stage_communities(cfg: PipelineConfig, art: ArtifactDir) -> list:
    out = []
    for target in cfg.targets:
        for kind, g in _graphs(cfg, art, target):
            p = art.path("communities", f"{target}_{kind}.json")
            try:
                sweep = detect_dynamic(g, cfg.thresholds, cfg.algorithms, cfg.seed, cfg.max_workers)
                write_json(p, sweep.to_json())
            except NoStructureError as exc:
                logger.warning("%s/%s: %s", target, kind, exc)
                write_json(p, {"scores": [], "best": None, "reason": str(exc)})
            out.append(p)
    return out


def stage_select(cfg: PipelineConfig, art: ArtifactDir) -> list:
    out = []
    for target in cfg.targets:
        parts = []
        for kind, g in _graphs(cfg, art, target):
            data = read_json(art.require(art.path("communities", f"{target}_{kind}.json")))
            if data["best"] is None:
                continue
            sweep = SweepResult.from_json(data)
            thresholded = remove_edges(g, sweep.threshold)
            scores = score_partition(thresholded, sweep.best)
            p = art.path("select", f"{target}_{kind}_scores.csv")
            write_text(p, scores_csv(scores))
            sel = select_distinctive(sweep.best, scores, cfg.exclusions, cfg.top_k, target)
            q = art.path("select", f"{target}_{kind}.json")
            write_json(q, sel.to_json())
            out += [p, q]
            parts.append(sel)
        combined = SelectedFeatureSet(
            target,
            [f for s in parts for f in s.features],
            [e for s in parts for e in s.exclusions],
        )
        if not combined.features:
            raise EmptyDatasetError(f"no distinctive features selected for {target!r}")
        p = art.path("select", f"{target}.json")
        q = art.path("select", f"{target}.txt")
        write_json(p, combined.to_json())
        write_text(q, combined.to_text())
        out += [p, q]
    return out


def load_selection(art: ArtifactDir, target: str) -> SelectedFeatureSet:
    return SelectedFeatureSet.from_json(read_json(art.require(art.path("select", f"{target}.json"))))


def stage_sample(cfg: PipelineConfig, art: ArtifactDir) -> list:
    table = load_table(art)
    s = cfg.sampling
    out = []
    for target in cfg.targets:
        names = load_selection(art, target).names
        data = shift_labels(table, target, names, cfg.horizon)
        search = find_optimal_interval(data, None, s["min_interval"], s["max_interval"], s["num_sample"])
        under = time_interval_undersample(data, search.interval, s["num_sample"], cfg.seed)
        if s["balance_before_split"]:
            scaled = standardize(under)
            balanced, counts = balance_dataset(scaled, s["k_neighbors"], s["enn_n_neighbors"], cfg.seed, s["ratio"])
            train, test = split_dataset(balanced, s["train_fraction"], cfg.seed)
        else:
            train, test = standardize(*split_dataset(under, s["train_fraction"], cfg.seed))
            _, counts = balance_dataset(train, s["k_neighbors"], s["enn_n_neighbors"], cfg.seed, s["ratio"])
        report = SamplingReport(
            {str(k): v for k, v in data.class_counts().items()},
            {str(k): v for k, v in under.class_counts().items()},
            counts,
            search.interval,
            search.feasible,
            search.trace,
        )
        out += save_dataset(train, art.path("sample"), f"{target}_train", report)
        out += save_dataset(test, art.path("sample"), f"{target}_test")
    return out


def stage_train(cfg: PipelineConfig, art: ArtifactDir) -> list:
    s, m = cfg.sampling, cfg.model
    resample = not s["balance_before_split"]
    out = []
    for target in cfg.targets:
        train = load_dataset(art.require(art.path("sample")), f"{target}_train")
        test = load_dataset(art.path("sample"), f"{target}_test")
        base = {"k_neighbors": s["k_neighbors"], "enn_n_neighbors": s["enn_n_neighbors"], "n_trees": 50, "max_depth": 8}
        result = grid_search(train, m["grid"], m["cv_folds"], cfg.seed, m["n_iter"], base, resample)
        best = result.best_params
        fit_on = train
        if resample:
            fit_on, _ = balance_dataset(train, best["k_neighbors"], best["enn_n_neighbors"], cfg.seed, s["ratio"])
        model = train_forest(fit_on, best["n_trees"], best["max_depth"], best.get("min_leaf", 1), cfg.seed)
        report = evaluate(model, test)
        report.params = dict(best)
        paths = [art.path("train", f"{target}_{k}") for k in ("model.json", "eval.json", "grid.json", "cv.csv")]
        write_json(paths[0], model.to_json())
        write_json(paths[1], report.to_json())
        write_json(paths[2], result.to_json())
        write_text(paths[3], result.to_csv())
        out += paths
    return out


def boundary_rows(scores: np.ndarray, n: int) -> np.ndarray:
    """Rows whose vote fraction is closest to one half (ties by row index)."""
    return np.lexsort((np.arange(len(scores)), np.abs(scores - 0.5)))[:n]


def stage_explain(cfg: PipelineConfig, art: ArtifactDir) -> list:
    e = cfg.explain
    out = []
    for target in cfg.targets:
        model = ForestModel.from_json(read_json(art.require(art.path("train", f"{target}_model.json"))))
        train = load_dataset(art.path("sample"), f"{target}_train")
        test = load_dataset(art.path("sample"), f"{target}_test")
        ranking = permutation_importance(model, test, e["n_repeats"], cfg.seed)
        p = art.path("explain", f"{target}_importance.json")
        write_json(p, [{"feature": f, "f1_drop": d} for f, d in ranking])
        rows = boundary_rows(model.predict_proba(test.X), e["n_instances"])
        explanations = [
            lime_explain(
                model,
                test.X[r],
                train,
                e["n_perturb"],
                e["kernel_width"],
                e["top_k"],
                seed=int(np.random.SeedSequence([cfg.seed, int(r)]).generate_state(1)[0]),
                instance_id=int(r),
            ).to_json()
            for r in rows
        ]
        q = art.path("explain", f"{target}_lime.json")
        write_json(q, explanations)
        out += [p, q]
    return out


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "stats": stage_stats,
    "graph": stage_graph,
    "communities": stage_communities,
    "select": stage_select,
    "sample": stage_sample,
    "train": stage_train,
    "explain": stage_explain,
}


def _inputs_hash(cfg: PipelineConfig, stage: str, manifest: dict) -> str:
    idx = STAGES.index(stage)
    upstream = {s: manifest["stages"].get(s, {}).get("outputs", {}) for s in STAGES[:idx]}
    if stage == "ingest":
        upstream = {"input": sha256_file(cfg.input)}
    return _hash_json({"config": cfg.section(*STAGE_KEYS[stage]), "upstream": upstream})


def _up_to_date(art: ArtifactDir, entry: dict | None, inputs_hash: str) -> bool:
    if not entry or entry.get("inputs_hash") != inputs_hash:
        return False
    for rel, digest in entry["outputs"].items():
        p = art.path(rel)
        if not p.exists() or sha256_file(p) != digest:
            return False
    return True


def run_stage(cfg: PipelineConfig, stage: str, resume: bool = False) -> bool:
    """Run one stage; returns False when ``resume`` found it up to date."""
    if stage not in STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}")
    cfg.validate()
    art = ArtifactDir(cfg.output_dir)
    manifest = art.manifest()
    if stage != "ingest" and STAGES[STAGES.index(stage) - 1] not in manifest["stages"]:
        raise IoError(f"stage {stage!r} needs {STAGES[STAGES.index(stage) - 1]!r} to have run in {art.root}")
    digest = _inputs_hash(cfg, stage, manifest)
    if resume and _up_to_date(art, manifest["stages"].get(stage), digest):
        logger.info("stage %s up to date", stage)
        return False
    start = time.perf_counter()
    try:
        paths = STAGE_FUNCS[stage](cfg, art)
    except PdmError as exc:
        exc.stage = stage
        raise
    except Exception as exc:
        raise StageError(f"stage {stage!r} failed: {exc}") from exc
    manifest["stages"][stage] = {
        "stage": stage,
        "inputs_hash": digest,
        "seed": cfg.seed,
        "outputs": {art.rel(p): sha256_file(p) for p in sorted(paths)},
    }
    # later stages were computed from the previous outputs of this one
    for later in STAGES[STAGES.index(stage) + 1:]:
        entry = manifest["stages"].get(later)
        if entry and entry["inputs_hash"] != _inputs_hash(cfg, later, manifest):
            entry["inputs_hash"] = None
    art.save_manifest(manifest)
    art.root.mkdir(parents=True, exist_ok=True)
    with open(art.path("timings.log"), "a", encoding="utf-8") as fh:
        fh.write(f"{stage}\t{time.perf_counter() - start:.3f}s\n")
    return True


def run_pipeline(cfg: PipelineConfig, stages=STAGES, resume: bool = False) -> Path:
    """Run ``stages`` in order; returns the artifact directory."""
    cfg.validate()
    for stage in stages:
        run_stage(cfg, stage, resume)
    return Path(cfg.output_dir)


def compare_datasets(graph_a, graph_b, sweep_a=None, sweep_b=None, thresholds=None, algorithms=None, seed: int = 0) -> dict:
    """Spectral distance between two saved graphs plus each one's best community sweep.

    Sweeps are read from ``sweep_a``/``sweep_b`` when given, otherwise run.
    """
    graphs = [read_graph(graph_a), read_graph(graph_b)]
    summaries = []
    for path, g, sweep_path in zip((graph_a, graph_b), graphs, (sweep_a, sweep_b)):
        if sweep_path is not None:
            best = CommunityPartition.from_json(read_json(sweep_path)["best"])
        else:
            kw = {}
            if thresholds is not None:
                kw["thresholds"] = thresholds
            if algorithms is not None:
                kw["algorithms"] = algorithms
            best = detect_dynamic(g, seed=seed, **kw).best
        summaries.append(
            {
                "graph": Path(path).name,
                "n_nodes": len(g.nodes),
                "n_edges": g.n_edges,
                "best_threshold": best.threshold,
                "best_algorithm": best.algorithm,
                "best_modularity": best.modularity,
                "n_communities": best.n_communities,
            }
        )
    return {"spectral_similarity": spectral_similarity(*graphs), "graphs": summaries}


def graph_from_table(table, target: str, kind: str = CONTINUOUS) -> FeatureGraph:
    """Convenience: typed table -> feature graph of one kind for ``target``."""
    feats = _features(table, [target])[kind]
    rel = target_relevance(table, target, feats, table.schema)
    assoc = pearson_matrix(table, feats) if kind == CONTINUOUS else cramers_v_matrix(table, feats)
    return build_feature_graph(assoc, rel, kind)
