"""Pipeline stages.

Each stage reads its inputs from flat files in the output directory and
writes its outputs there, so any stage can be rerun on its own. `shared`
only carries artifact paths and small summaries.
"""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np

from cyclopref import Node, PipelineEngine
from cyclopref.clustering import (
    clustering_agreement,
    contingency,
    contingency_difference,
    group_names,
    kmeans,
    relieff,
    select_top_features,
    sse_sweep,
)
from cyclopref.config import PipelineConfig
from cyclopref.decomposition import (
    build_model,
    consistency_category,
    group_aggregate,
    sweep_group,
)
from cyclopref.errors import DataError, UnmatchableTrajectoryError, UsageError
from cyclopref.features import (
    FeatureMatrix,
    LandUseMap,
    build_feature_matrix,
    extract_features,
    load_landuse,
    znormalize,
)
from cyclopref.matching import MapMatcher, MatchedPath, coverage, load_trajectories
from cyclopref.network import RoadNetwork, load_network
from cyclopref.preference import analyze_group, build_classification
from cyclopref.reports import (
    read_csv,
    read_json,
    render_report,
    write_csv,
    write_json,
    write_weighted_network,
)
from cyclopref.utils import FileSystemStorage

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

HAS_ACTIVITIES = "shared.get('has_activities', False)"


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int) -> List[R]:
    """Map in input order, on up to `threads` worker threads."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def network_from_config(config: PipelineConfig) -> RoadNetwork:
    return load_network(config.network, config.forbidden_types, config.network_nodes)


def read_matched(config: PipelineConfig) -> Dict[str, MatchedPath]:
    data = read_json(config.out_path / "matched.json")
    return {m["trajectory_id"]: MatchedPath.from_dict(m) for m in data["matched"]}


def read_activities(config: PipelineConfig) -> Dict[str, Optional[str]]:
    path = config.out_path / "activities.csv"
    if not path.exists():
        return {}
    return {row["trajectory_id"]: row["activity"] or None for row in read_csv(path)}


def read_groups(config: PipelineConfig) -> Dict[str, List[str]]:
    return read_json(config.out_path / "groups.json")["groups"]


def read_feature_matrix(config: PipelineConfig) -> FeatureMatrix:
    rows = read_csv(config.out_path / "features.csv")
    if not rows:
        raise DataError("feature matrix is empty")
    names = [name for name in rows[0] if name != "trajectory_id"]
    values = np.array([[float(row[n]) for n in names] for row in rows], dtype=float)
    return FeatureMatrix([row["trajectory_id"] for row in rows], names, values)


class Stage(Node):
    """A pipeline stage; `self.config` is the PipelineConfig."""

    stage_id = ""
    outputs: Tuple[str, ...] = ()

    @classmethod
    def complete(cls, config: PipelineConfig) -> bool:
        return bool(cls.outputs) and all((config.out_path / name).exists() for name in cls.outputs)

    @property
    def out(self) -> Path:
        return self.config.out_path

    @property
    def provenance(self) -> Dict[str, Any]:
        return self.config.provenance

    def prepare(self, shared: Dict[str, Any]) -> PipelineConfig:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.config

    def record(self, shared: Dict[str, Any], summary: Dict[str, Any], artifacts: Iterable[Path]) -> None:
        shared.setdefault("summary", {})[self.stage_id] = summary
        shared.setdefault("artifacts", {}).update({p.name: str(p) for p in artifacts})


class MatchStage(Stage):
    stage_id = "match"
    outputs = ("matched.json", "activities.csv")

    def prepare(self, shared):
        config = super().prepare(shared)
        config.validate(["network", "trajectories"])
        return config

    def execute(self, config: PipelineConfig) -> Dict[str, Any]:
        network = network_from_config(config)
        trajectories = load_trajectories(config.trajectories, config.activities)
        if not trajectories:
            raise DataError("no trajectories")
        matcher = MapMatcher(network, config.matching_params())

        def match(traj):
            try:
                return matcher.match(traj)
            except UnmatchableTrajectoryError as e:
                logger.warning("%s", e)
                return e

        results = parallel_map(match, trajectories, config.threads)
        matched = [r for r in results if isinstance(r, MatchedPath)]
        unmatchable = [
            {"trajectory_id": r.trajectory_id, "reason": r.reason, "point_index": r.point_index}
            for r in results
            if isinstance(r, UnmatchableTrajectoryError)
        ]
        if not matched:
            raise DataError(f"none of {len(trajectories)} trajectories could be matched")

        cov = coverage(network, matched)
        matched_ids = {m.trajectory_id for m in matched}
        paths = [
            write_json(
                self.out / "matched.json",
                {
                    "matched": [m.to_dict() for m in matched],
                    "unmatchable": unmatchable,
                    "coverage": cov.to_dict(),
                },
                self.provenance,
            ),
            write_csv(
                self.out / "activities.csv",
                ["trajectory_id", "activity"],
                [(t.trajectory_id, t.declared_activity) for t in trajectories if t.trajectory_id in matched_ids],
                self.provenance,
            ),
        ]
        logger.info(
            "matched %d of %d trajectories; %.1f%% of edges unused",
            len(matched),
            len(trajectories),
            100 * (1 - cov.edge_fraction),
        )
        has_activities = any(t.declared_activity for t in trajectories if t.trajectory_id in matched_ids)
        return {
            "summary": {
                "matched": len(matched),
                "unmatchable": len(unmatchable),
                "coverage": cov.to_dict(),
            },
            "paths": paths,
            "has_activities": has_activities,
        }

    def cleanup(self, shared, prepared, result):
        self.record(shared, result["summary"], result["paths"])
        shared["has_activities"] = result["has_activities"]


class FeatureStage(Stage):
    stage_id = "features"
    outputs = ("features.csv", "features_meta.json")

    def prepare(self, shared):
        config = super().prepare(shared)
        config.validate(["network", "trajectories"])
        return config

    def execute(self, config: PipelineConfig) -> Dict[str, Any]:
        network = network_from_config(config)
        matched = read_matched(config)
        trajectories = [
            t for t in load_trajectories(config.trajectories, config.activities) if t.trajectory_id in matched
        ]
        landuse = load_landuse(config.landuse) if config.landuse else LandUseMap()
        params = config.feature_params()

        vectors = parallel_map(
            lambda t: extract_features(t, matched[t.trajectory_id], network, landuse, params),
            trajectories,
            config.threads,
        )
        categories = sorted(set(params.landuse_categories) | set(landuse.categories))
        matrix = build_feature_matrix(vectors, road_types=sorted(network.road_types), categories=categories)
        paths = [
            write_csv(
                self.out / "features.csv",
                ["trajectory_id", *matrix.names],
                ([tid, *row] for tid, row in zip(matrix.trajectory_ids, matrix.values.tolist())),
                self.provenance,
            ),
            write_json(
                self.out / "features_meta.json",
                {
                    "features": matrix.names,
                    "trajectories": len(matrix.trajectory_ids),
                    "elevation_missing": sorted(v.trajectory_id for v in vectors if v.elevation_missing),
                    "detour_capped": sorted(v.trajectory_id for v in vectors if v.detour_capped),
                    "landuse_categories": categories,
                },
                self.provenance,
            ),
        ]
        return {"summary": {"trajectories": len(vectors), "features": len(matrix.names)}, "paths": paths}

    def cleanup(self, shared, prepared, result):
        self.record(shared, result["summary"], result["paths"])


class ClusterStage(Stage):
    stage_id = "cluster"
    outputs = ("clusters.csv", "feature_weights.csv", "kmeans_sweep.csv", "cluster_summary.json", "groups.json")

    def execute(self, config: PipelineConfig) -> Dict[str, Any]:
        matrix = read_feature_matrix(config)
        n = len(matrix.trajectory_ids)
        if n < config.k:
            raise UsageError(f"cannot form {config.k} clusters from {n} trajectories")
        if n < 2:
            raise DataError("clustering needs at least 2 trajectories")

        norm = znormalize(matrix.values)
        ids = matrix.trajectory_ids
        model = kmeans(norm.values, config.k, config.restarts, config.seed, ids, config.threads)
        sweep = sse_sweep(norm.values, config.k_sweep, config.restarts, config.seed, ids, config.threads)

        weights = np.zeros(len(matrix.names))
        selected: List[int] = list(range(len(matrix.names)))
        selected_assignment = model.assignment
        agreement = 1.0
        k_lowered = False
        if config.k >= 2:
            relief = relieff(norm.values, model.labels, config.k_neighbors)
            weights, k_lowered = relief.weights, relief.k_lowered
            selected = select_top_features(weights, config.quantile)
            reclustered = kmeans(
                norm.values[:, selected], config.k, config.restarts, config.seed, ids, config.threads
            )
            selected_assignment = reclustered.assignment
            agreement = clustering_agreement(model.assignment, selected_assignment)
        else:
            logger.info("single cluster: feature importance skipped")

        activities = read_activities(config)
        has_activities = any(activities.get(t) for t in ids)
        if has_activities:
            table = contingency(activities, model.assignment, config.k)
            for label, clusters in table.shared_labels().items():
                logger.warning(
                    "clusters %s all map to %s; each stays a separate group", clusters, label
                )
            names = group_names(table.mapping, config.k)
        else:
            logger.info("no declared activities: contingency skipped, clusters stay numbered")
            names = group_names({}, config.k)

        groups: Dict[str, List[str]] = {}
        for tid in sorted(ids):
            groups.setdefault(names[model.assignment[tid]], []).append(tid)

        selected_set = set(selected)
        paths = [
            write_csv(
                self.out / "clusters.csv",
                ["trajectory_id", "cluster", "activity_label"],
                [(tid, model.assignment[tid], names[model.assignment[tid]]) for tid in sorted(ids)],
                self.provenance,
            ),
            write_csv(
                self.out / "feature_weights.csv",
                ["feature", "weight", "selected"],
                [(name, float(w), i in selected_set) for i, (name, w) in enumerate(zip(matrix.names, weights))],
                self.provenance,
            ),
            write_csv(
                self.out / "kmeans_sweep.csv", ["k", "sse"], sorted(sweep.items()), self.provenance
            ),
            write_json(
                self.out / "cluster_summary.json",
                {
                    "k": model.k,
                    "restarts": model.restarts,
                    "seed": model.seed,
                    "compactness": model.compactness,
                    "sizes": model.sizes(),
                    "zero_variance_features": [
                        name for name, flag in zip(matrix.names, norm.zero_variance) if flag
                    ],
                    "selected_features": [matrix.names[i] for i in selected],
                    "relieff_k_lowered": bool(k_lowered),
                    "selected_feature_agreement": agreement,
                    "selected_assignment": {t: selected_assignment[t] for t in sorted(ids)},
                },
                self.provenance,
            ),
            write_json(self.out / "groups.json", {"groups": groups}, self.provenance),
        ]
        logger.info(
            "k-means k=%d: sizes %s; selected features agree on %.1f%%",
            model.k,
            model.sizes(),
            100 * agreement,
        )
        return {
            "summary": {"k": model.k, "groups": sorted(groups), "agreement_selected": agreement},
            "paths": paths,
            "has_activities": has_activities,
        }

    def cleanup(self, shared, prepared, result):
        self.record(shared, result["summary"], result["paths"])
        shared["has_activities"] = result["has_activities"]


class ContingencyStage(Stage):
    stage_id = "contingency"
    outputs = ("contingency.csv", "contingency.txt")

    def execute(self, config: PipelineConfig) -> Dict[str, Any]:
        activities = read_activities(config)
        assignment = {row["trajectory_id"]: int(row["cluster"]) for row in read_csv(self.out / "clusters.csv")}
        summary = read_json(self.out / "cluster_summary.json")
        table = contingency(activities, assignment, config.k)
        if table.total == 0:
            raise DataError("no trajectory has a declared activity")

        selected = {t: int(c) for t, c in summary["selected_assignment"].items()}
        selected_table = contingency(activities, selected, config.k)
        difference = contingency_difference(table, selected_table)

        header = ["activity", *[f"cluster{c}" for c in table.clusters], "sum", "recall"]
        recall = table.recall()
        precision = table.precision()
        rows: List[List[Any]] = [
            [label, *table.counts[r].tolist(), int(table.row_sums[r]), recall[label]]
            for r, label in enumerate(table.labels)
        ]
        rows.append(["sum", *table.col_sums.tolist(), table.total, table.agreement])
        rows.append(["precision", *[precision[c] for c in table.clusters], "", ""])
        rows.append(["mapped_label", *[table.mapping[c] for c in table.clusters], table.policy, ""])
        paths = [
            write_csv(self.out / "contingency.csv", header, rows, self.provenance),
            render_report(
                "contingency.txt.j2",
                self.out / "contingency.txt",
                self.provenance,
                table=table,
                recall=recall,
                precision=precision,
                selected_agreement=summary.get("selected_feature_agreement"),
                difference=difference,
            ),
        ]
        logger.info("contingency agreement %.3f (%s mapping)", table.agreement, table.policy)
        return {
            "summary": {"agreement": table.agreement, "policy": table.policy, "difference": difference},
            "paths": paths,
        }

    def cleanup(self, shared, prepared, result):
        self.record(shared, result["summary"], result["paths"])


class ClassifyStage(Stage):
    stage_id = "classify"

    @classmethod
    def complete(cls, config: PipelineConfig) -> bool:
        groups_file = config.out_path / "groups.json"
        if not groups_file.exists():
            return False
        return all((config.out_path / f"preference_{g}.json").exists() for g in read_groups(config))

    def prepare(self, shared):
        config = super().prepare(shared)
        config.validate(["network"])
        return config

    def execute(self, config: PipelineConfig) -> Dict[str, Any]:
        network = network_from_config(config)
        matched = read_matched(config)
        groups = read_groups(config)
        paths, favored = [], {}
        for group, ids in sorted(groups.items()):
            report = analyze_group(network, group, [matched[t] for t in ids], config.threads)
            favored[group] = sorted(report.favored_types)
            paths.append(
                write_csv(
                    self.out / f"preference_{group}.csv",
                    ["road_type", "r_user", "r_shortest", "classification"],
                    report.rows(),
                    self.provenance,
                )
            )
            paths.append(write_json(self.out / f"preference_{group}.json", report.to_dict(), self.provenance))
            logger.info("group %s favors %s", group, ", ".join(favored[group]) or "nothing")
        return {"summary": {"favored_types": favored}, "paths": paths}

    def cleanup(self, shared, prepared, result):
        self.record(shared, result["summary"], result["paths"])


class InferStage(Stage):
    stage_id = "infer"

    def prepare(self, shared):
        config = super().prepare(shared)
        config.validate(["network"])
        groups = read_groups(config)
        wanted = shared.get("group")
        if wanted is not None and wanted not in groups:
            raise UsageError(f"unknown group '{wanted}'; available groups: {', '.join(sorted(groups))}")
        selected = [wanted] if wanted is not None else sorted(groups)
        return config, {g: groups[g] for g in selected}

    def execute(self, prepared) -> Dict[str, Any]:
        config, groups = prepared
        network = network_from_config(config)
        matched = read_matched(config)
        grid = config.alpha_grid()

        paths, alphas = [], {}
        for group, ids in groups.items():
            if not ids:
                raise DataError(f"group {group} has no trajectories")
            preference = read_json(self.out / f"preference_{group}.json")
            classification = build_classification(network, preference["favored_types"])
            profiles = sweep_group(network, classification, {t: matched[t] for t in ids}, grid, config.threads)
            aggregate = group_aggregate(profiles)
            model = build_model(group, preference["favored_types"], aggregate)
            alphas[group] = float(model.alpha)

            paths.append(
                write_csv(
                    self.out / f"profiles_{group}.csv",
                    ["trajectory_id", "alpha", "milestones"],
                    (
                        (p.trajectory_id, a, m)
                        for p in profiles
                        for a, m in zip(p.grid, p.milestones)
                    ),
                    self.provenance,
                )
            )
            paths.append(
                write_csv(
                    self.out / f"profile_summary_{group}.csv",
                    [
                        "trajectory_id",
                        "min_milestones",
                        "alpha_low",
                        "alpha_high",
                        "category",
                        "favored_share",
                        "atom_alphas",
                    ],
                    (
                        (
                            p.trajectory_id,
                            p.min_milestones,
                            *p.alpha_interval,
                            consistency_category(p).value,
                            p.favored_share,
                            sum(1 for a in p.atoms if a),
                        )
                        for p in profiles
                    ),
                    self.provenance,
                )
            )
            paths.append(
                write_csv(
                    self.out / f"curve_{group}.csv",
                    ["alpha", "mean_relative_percent"],
                    aggregate.curve_points(),
                    self.provenance,
                )
            )
            paths.append(
                write_json(
                    self.out / f"model_{group}.json",
                    dict(model.to_dict(), trajectories=len(profiles)),
                    self.provenance,
                )
            )
            paths.append(
                render_report(
                    "model.txt.j2",
                    self.out / f"model_{group}.txt",
                    self.provenance,
                    model=model,
                    preference=preference,
                    rows=read_csv(self.out / f"preference_{group}.csv"),
                )
            )
            paths.append(
                write_weighted_network(
                    self.out / f"weighted_network_{group}.geojson",
                    network,
                    model.weighting,
                    group,
                    self.provenance,
                )
            )
            logger.info("group %s: alpha %.3f (%s)", group, float(model.alpha), model.note)
        return {"summary": {"alpha": alphas}, "paths": paths}

    def cleanup(self, shared, prepared, result):
        self.record(shared, result["summary"], result["paths"])


# ======= Planning =======

CHAIN: Tuple[Type[Stage], ...] = (MatchStage, FeatureStage, ClusterStage, ClassifyStage, InferStage)

TARGETS: Dict[str, Type[Stage]] = {
    "match": MatchStage,
    "features": FeatureStage,
    "cluster": ClusterStage,
    "classify": ClassifyStage,
    "infer": InferStage,
    "all": InferStage,
}


def plan(target: str, config: PipelineConfig, full: bool = False) -> List[Type[Stage]]:
    """Stages to run for `target`, prepending prerequisites whose outputs are missing.

    With `full` (and for `all`) the chain starts from matching.
    """
    if target not in TARGETS:
        raise UsageError(f"unknown stage '{target}'")
    last = CHAIN.index(TARGETS[target])
    first = last
    if full or target == "all":
        first = 0
    else:
        while first > 0 and not CHAIN[first - 1].complete(config):
            first -= 1
    return list(CHAIN[first : last + 1])


def build_pipeline(stages: Sequence[Type[Stage]], config: PipelineConfig) -> List[Node]:
    """Instantiate and link stages; contingency hangs off clustering behind a condition."""
    stages = list(stages)
    nodes = [Node.from_dict({"class": s.__name__, "id": s.stage_id}, config) for s in stages]
    for a, b in zip(nodes, nodes[1:]):
        a > b
    if ClusterStage in stages:
        i = stages.index(ClusterStage)
        report = Node.from_dict({"class": ContingencyStage.__name__, "id": ContingencyStage.stage_id}, config)
        nodes[i] - HAS_ACTIVITIES > report
        if i + 1 < len(nodes):
            report > nodes[i + 1]
        nodes.append(report)
    return nodes


def run_pipeline(
    target: str,
    config: PipelineConfig,
    run_id: Optional[str] = None,
    group: Optional[str] = None,
) -> PipelineEngine:
    """Plan, link and run the stages for `target`, journaling under `<out_dir>/runs`."""
    config.out_path.mkdir(parents=True, exist_ok=True)
    stages = plan(target, config, full=run_id is not None)
    logger.info("running %s", " > ".join(s.stage_id for s in stages))
    nodes = build_pipeline(stages, config)
    engine = PipelineEngine(
        nodes=nodes,
        pipeline_id=target,
        run_id=run_id,
        storage_backend=FileSystemStorage(str(config.out_path / "runs")),
        initial_shared_state={
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "group": group,
            "artifacts": {},
            "summary": {},
        },
    )
    asyncio.run(engine.run())
    return engine
