import logging

import numpy as np
import pytest

from cyclopref.clustering import (
    ContingencyTable,
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
from cyclopref.errors import ClusteringError
from cyclopref.reports import read_json, write_csv, write_json
from cyclopref.stages import ClusterStage

# Published contingency counts: rows are clusters, columns are declared activities,
# both in the order mountainbiking, racingbiking, biking.
PUBLISHED_COUNTS = [[125, 20, 39], [10, 135, 47], [17, 63, 141]]
ACTIVITY_ORDER = ["mountainbiking", "racingbiking", "biking"]


def blobs(rng, per_blob=100, sigma=1.0):
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 10.0]])
    X = np.vstack([rng.normal(c, sigma, size=(per_blob, 2)) for c in centers])
    truth = np.repeat(np.arange(3), per_blob)
    return X, truth


def as_assignment(labels):
    return {f"t{i:04d}": int(c) for i, c in enumerate(labels)}


@pytest.fixture
def published():
    return ContingencyTable.from_counts(np.array(PUBLISHED_COUNTS).T, ACTIVITY_ORDER)


class TestKMeans:
    def test_recovers_separated_blobs(self):
        good = 0
        for seed in range(100):
            X, truth = blobs(np.random.default_rng(seed))
            model = kmeans(X, 3, restarts=20, seed=seed)
            if clustering_agreement(as_assignment(truth), as_assignment(model.labels)) >= 0.99:
                good += 1
        assert good >= 95

    def test_same_seed_same_result(self, rng):
        X, _ = blobs(rng, per_blob=20, sigma=3.0)
        ids = [f"r{i:03d}" for i in range(len(X))]

        a = kmeans(X, 3, restarts=5, seed=42, ids=ids)
        b = kmeans(X, 3, restarts=5, seed=42, ids=ids, threads=4)
        assert a.assignment == b.assignment
        assert a.compactness == b.compactness

    def test_row_order_does_not_matter(self, rng):
        X, _ = blobs(rng, per_blob=15, sigma=2.0)
        ids = [f"r{i:03d}" for i in range(len(X))]
        perm = rng.permutation(len(X))

        a = kmeans(X, 3, restarts=5, seed=1, ids=ids)
        b = kmeans(X[perm], 3, restarts=5, seed=1, ids=[ids[i] for i in perm])
        assert a.assignment == b.assignment

    def test_canonical_numbering(self, rng):
        X, _ = blobs(rng, per_blob=10)
        model = kmeans(X, 3, restarts=3, seed=0)

        first_seen = []
        for c in model.labels:
            if c not in first_seen:
                first_seen.append(int(c))
        assert first_seen == [0, 1, 2]
        assert sum(model.sizes()) == len(X)

    def test_k_larger_than_rows(self):
        with pytest.raises(ClusteringError):
            kmeans(np.zeros((3, 2)), 5)

    def test_duplicate_points_still_fill_every_cluster(self, caplog):
        X = np.array([[0.0, 0.0]] * 4 + [[1.0, 1.0]])
        with caplog.at_level(logging.WARNING):
            model = kmeans(X, 3, restarts=2, seed=0)
        assert all(size > 0 for size in model.sizes())

    def test_sse_never_increases_between_iterations(self):
        for seed in range(20):
            X, _ = blobs(np.random.default_rng(seed), per_blob=30, sigma=3.0)
            model = kmeans(X, 3, restarts=1, seed=seed)

            history = model.sse_history
            assert len(history) >= 1
            assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(history, history[1:]))
            assert history[-1] == pytest.approx(model.compactness)

    def test_final_centroids_are_a_fixed_point(self, rng):
        X, _ = blobs(rng, per_blob=25, sigma=2.5)
        model = kmeans(X, 3, restarts=5, seed=2)

        nearest = np.argmin(((X[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2), axis=1)
        assert np.array_equal(nearest, model.labels)
        for j in range(3):
            assert model.centroids[j] == pytest.approx(X[model.labels == j].mean(axis=0))

    def test_sse_sweep_is_non_increasing_and_skips_large_k(self, rng):
        X, _ = blobs(rng, per_blob=5)
        sweep = sse_sweep(X, [1, 2, 3, 4, 20], restarts=10, seed=0)

        assert sorted(sweep) == [1, 2, 3, 4]
        assert sweep[1] >= sweep[2] >= sweep[3] >= sweep[4]


class TestReliefF:
    def test_planted_separator_outranks_noise(self):
        good = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            y = np.repeat([0, 1, 2], 20)
            separator = y * 10.0 + rng.normal(0, 0.5, size=len(y))
            noise = rng.normal(size=(len(y), 5))
            X = np.column_stack([noise[:, :2], separator, noise[:, 2:]])

            result = relieff(X, y, k_neighbors=10)
            if all(result.weights[2] > w for i, w in enumerate(result.weights) if i != 2):
                good += 1
        assert good >= 95

    def test_small_classes_lower_k(self, caplog):
        X = np.array([[0.0], [0.1], [0.2], [5.0], [5.1]])
        with caplog.at_level(logging.WARNING):
            result = relieff(X, ["a", "a", "a", "b", "b"], k_neighbors=100)

        assert result.k_lowered
        assert result.k_used == {"a": 2, "b": 1}
        assert result.weights[0] > 0

    def test_single_class(self):
        with pytest.raises(ClusteringError):
            relieff(np.zeros((4, 2)), [1, 1, 1, 1])

    def test_deterministic_with_tied_distances(self):
        # the hits of (0, 0) and the misses of (1, 1) tie; the lower row wins both times
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        labels = ["a", "a", "a", "b"]

        first = relieff(X, labels, k_neighbors=1)
        again = relieff(X, labels, k_neighbors=1)

        np.testing.assert_allclose(first.weights, [0.0, 0.5])
        np.testing.assert_array_equal(first.weights, again.weights)

    def test_top_decile(self):
        weights = np.arange(20, dtype=float)
        assert select_top_features(weights, 0.9) == [18, 19]
        assert select_top_features([0.5, 0.5, 0.5], 0.9) == [0, 1, 2]


class TestContingency:
    def test_published_agreement(self, published):
        assert published.total == 597
        assert published.policy == "optimal"
        assert published.agreement == pytest.approx(0.672, abs=0.001)

    def test_published_recall_and_precision(self, published):
        recall = published.recall()
        precision = published.precision()

        assert recall["mountainbiking"] == pytest.approx(125 / 152)
        assert [round(100 * recall[a]) for a in ACTIVITY_ORDER] == [82, 62, 62]
        assert [round(100 * precision[c]) for c in range(3)] == [68, 70, 64]

    def test_mapping_follows_the_diagonal(self, published):
        assert published.mapping == {0: "mountainbiking", 1: "racingbiking", 2: "biking"}

    def test_majority_mapping_when_k_differs(self):
        table = ContingencyTable.from_counts([[5, 4], [1, 0], [0, 3]], ["biking", "mountainbiking", "racingbiking"])

        assert table.policy == "majority"
        assert table.mapping == {0: "biking", 1: "biking"}
        assert table.agreement == pytest.approx(9 / 13)

    def test_shared_labels_under_majority_mapping(self):
        table = ContingencyTable.from_counts([[5, 4], [1, 0], [0, 3]], ["biking", "mountainbiking", "racingbiking"])

        assert table.shared_labels() == {"biking": [0, 1]}

    def test_optimal_mapping_shares_no_label(self, published):
        assert published.shared_labels() == {}


class TestGroupNames:
    def test_distinct_labels_are_kept(self):
        assert group_names({0: "biking", 1: "racingbiking"}, 2) == {0: "biking", 1: "racingbiking"}

    def test_shared_label_gets_cluster_suffix(self):
        mapping = {0: "biking", 1: "racingbiking", 2: "mountainbiking", 3: "biking"}

        names = group_names(mapping, 4)
        assert names == {0: "biking_0", 1: "racingbiking", 2: "mountainbiking", 3: "biking_3"}
        assert len(set(names.values())) == 4

    def test_unmapped_clusters_stay_numbered(self):
        assert group_names({}, 3) == {0: "cluster0", 1: "cluster1", 2: "cluster2"}
        assert group_names({1: "biking"}, 2) == {0: "cluster0", 1: "biking"}

    async def test_cluster_stage_keeps_clusters_apart(self, tmp_path):
        # four tight, well separated blobs; two of them declared as biking
        centers = {"a": (0.0, 0.0), "b": (10.0, 0.0), "c": (0.0, 10.0), "d": (10.0, 10.0)}
        declared = {"a": "biking", "b": "racingbiking", "c": "mountainbiking", "d": "biking"}
        offsets = [(0.0, 0.0), (0.1, 0.0), (0.0, 0.1)]
        rows, activities = [], []
        for blob, (x, y) in centers.items():
            for i, (dx, dy) in enumerate(offsets):
                rows.append((f"{blob}{i}", x + dx, y + dy))
                activities.append((f"{blob}{i}", declared[blob]))

        config = PipelineConfig(out_dir=str(tmp_path), k=4, restarts=10, k_sweep=[1, 2, 3, 4])
        provenance = config.provenance
        write_csv(tmp_path / "features.csv", ["trajectory_id", "f1", "f2"], rows, provenance)
        write_csv(tmp_path / "activities.csv", ["trajectory_id", "activity"], activities, provenance)
        write_json(tmp_path / "features_meta.json", {}, provenance)

        await ClusterStage(id="cluster", config=config).run_standalone()

        groups = read_json(tmp_path / "groups.json")["groups"]
        assert groups == {
            "biking_0": ["a0", "a1", "a2"],
            "biking_3": ["d0", "d1", "d2"],
            "mountainbiking": ["c0", "c1", "c2"],
            "racingbiking": ["b0", "b1", "b2"],
        }

    def test_from_assignments(self):
        labels = {"a": "biking", "b": "biking", "c": "racingbiking", "d": None, "e": "racingbiking"}
        assignment = {"a": 1, "b": 1, "c": 0, "d": 0, "e": 1}
        table = contingency(labels, assignment, k=2)

        assert table.labels == ["biking", "racingbiking"]
        assert table.counts.tolist() == [[0, 2], [1, 1]]
        assert table.unlabeled == 1
        assert table.mapping == {0: "racingbiking", 1: "biking"}
        assert table.agreement == pytest.approx(3 / 4)

    def test_difference_of_identical_tables_is_zero(self, published):
        assert contingency_difference(published, published) == 0.0

    def test_difference_in_percent(self):
        a = ContingencyTable.from_counts([[5, 0], [0, 5]], ["x", "y"])
        b = ContingencyTable.from_counts([[4, 1], [0, 5]], ["x", "y"])
        assert contingency_difference(a, b) == pytest.approx(100 * (0.1 + 0.1) / 4)


class TestAgreement:
    def test_permuted_labels_agree_fully(self):
        a = {"x": 0, "y": 1, "z": 2}
        b = {"x": 2, "y": 0, "z": 1}
        assert clustering_agreement(a, b) == 1.0

    def test_partial_agreement(self):
        a = {"p": 0, "q": 0, "r": 1, "s": 1}
        b = {"p": 1, "q": 1, "r": 1, "s": 0}
        assert clustering_agreement(a, b) == pytest.approx(0.75)
