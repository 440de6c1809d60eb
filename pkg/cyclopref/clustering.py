"""k-means clustering, reliefF feature weights and contingency analysis."""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from cyclopref.errors import ClusteringError

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 300


# ======= k-means =======


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    labels: np.ndarray  # cluster per input row, in input order
    trajectory_ids: List[str]
    compactness: float
    seed: int
    restarts: int
    iterations: int = 0
    sse_history: List[float] = field(default_factory=list)  # SSE after each update of the winning restart

    @property
    def assignment(self) -> Dict[str, int]:
        return {tid: int(c) for tid, c in zip(self.trajectory_ids, self.labels)}

    def sizes(self) -> List[int]:
        return [int(np.count_nonzero(self.labels == j)) for j in range(self.k)]


@dataclass
class _Restart:
    labels: np.ndarray
    centroids: np.ndarray
    sse: float
    iterations: int
    history: List[float] = field(default_factory=list)


def _kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = cdist(X, X[centers], "sqeuclidean").min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(idx)
        closest = np.minimum(closest, cdist(X, X[[idx]], "sqeuclidean")[:, 0])
    return X[centers].astype(float)


def _fill_empty(labels: np.ndarray, dist: np.ndarray, k: int) -> np.ndarray:
    """Move the point farthest from its centroid into each empty cluster."""
    labels = labels.copy()
    own = dist[np.arange(len(labels)), labels].copy()
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        movable = sizes[labels] > 1
        candidates = np.where(movable, own, -np.inf)
        idx = int(np.argmax(candidates))
        logger.warning("k-means: cluster %d empty, reseeded at row %d", j, idx)
        labels[idx] = j
        own[idx] = -np.inf
    return labels


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator) -> _Restart:
    centroids = _kmeans_plus_plus(X, k, rng)
    labels: Optional[np.ndarray] = None
    history: List[float] = []
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        dist = cdist(X, centroids, "sqeuclidean")
        new = _fill_empty(dist.argmin(axis=1), dist, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
        history.append(float(((X - centroids[labels]) ** 2).sum()))
    return _Restart(labels, centroids, history[-1], iterations, history)


def _canonical(labels: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Number clusters by first appearance so equal partitions get equal labels."""
    order: List[int] = []
    for c in labels:
        if int(c) not in order:
            order.append(int(c))
    remap = np.empty(len(order), dtype=int)
    remap[order] = np.arange(len(order))
    return remap[labels], centroids[order]


def kmeans(
    X: np.ndarray,
    k: int,
    restarts: int = 20,
    seed: int = 0,
    ids: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> ClusterModel:
    """Lloyd's k-means with k-means++ seeding; the restart with the lowest SSE wins.

    Rows are processed in sorted-id order, so the result does not depend on
    the order rows are given in. Restart `i` draws from the `i`-th child of
    `SeedSequence(seed)`; ties in SSE go to the lower restart index.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("kmeans needs a 2-D matrix")
    n = X.shape[0]
    if k < 1:
        raise ClusteringError(f"k must be at least 1, got {k}")
    if k > n:
        raise ClusteringError(f"cannot form {k} clusters from {n} trajectories")
    if restarts < 1:
        raise ClusteringError("restarts must be at least 1")

    ids = [str(i) for i in ids] if ids is not None else [f"{i:08d}" for i in range(n)]
    order = sorted(range(n), key=lambda i: ids[i])
    Xs = X[order]

    children = np.random.SeedSequence(seed).spawn(restarts)

    def run(child: np.random.SeedSequence) -> _Restart:
        return _lloyd(Xs, k, np.random.default_rng(child))

    if threads > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, children))
    else:
        results = [run(child) for child in children]

    best = min(range(restarts), key=lambda i: (results[i].sse, i))
    chosen = results[best]
    sorted_labels, centroids = _canonical(chosen.labels, chosen.centroids)

    labels = np.empty(n, dtype=int)
    labels[order] = sorted_labels
    logger.debug("k-means k=%d: best restart %d of %d, SSE %.6f", k, best, restarts, chosen.sse)
    return ClusterModel(
        k=k,
        centroids=centroids,
        labels=labels,
        trajectory_ids=list(ids),
        compactness=chosen.sse,
        seed=seed,
        restarts=restarts,
        iterations=chosen.iterations,
        sse_history=list(chosen.history),
    )


def sse_sweep(
    X: np.ndarray,
    ks: Iterable[int],
    restarts: int = 20,
    seed: int = 0,
    ids: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> Dict[int, float]:
    """Best SSE for each k; values of k larger than the row count are skipped."""
    n = np.asarray(X).shape[0]
    return {
        k: kmeans(X, k, restarts, seed, ids, threads).compactness
        for k in sorted(set(ks))
        if 1 <= k <= n
    }


# ======= Feature importance =======


@dataclass
class ReliefResult:
    weights: np.ndarray
    classes: List[str]
    k_used: Dict[str, int]
    k_lowered: bool


def relieff(X: np.ndarray, labels: Sequence, k_neighbors: int = 100) -> ReliefResult:
    """ReliefF over every instance, with Manhattan distance on range-scaled features.

    Misses are weighted by the prior of their class relative to all classes
    other than the instance's own. Every instance is visited and neighbour ties go
    to the lower row, so the result is deterministic and needs no seed.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    classes, y = np.unique(np.asarray([str(label) for label in labels]), return_inverse=True)
    if len(classes) < 2:
        raise ClusteringError("feature importance is undefined for a single class")
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be at least 1")

    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    scaled = np.where(span > 0, (X - lo) / np.where(span > 0, span, 1.0), 0.0)
    dist = cdist(scaled, scaled, "cityblock")

    counts = np.bincount(y, minlength=len(classes))
    prior = counts / n
    members = [np.flatnonzero(y == c) for c in range(len(classes))]

    k_used = {}
    for c, name in enumerate(classes):
        k_used[str(name)] = min(k_neighbors, int(counts[c]) - 1)
    lowered = any(k < k_neighbors for k in k_used.values())
    if lowered:
        logger.warning("reliefF: k lowered for small classes: %s", k_used)

    weights = np.zeros(d)
    for i in range(n):
        own = y[i]
        for c, rows in enumerate(members):
            rows = rows[rows != i]
            kc = min(k_neighbors, len(rows))
            if kc == 0:
                continue
            nearest = rows[np.lexsort((rows, dist[i, rows]))[:kc]]
            diff = np.abs(scaled[nearest] - scaled[i]).sum(axis=0) / kc
            if c == own:
                weights -= diff / n
            else:
                weights += prior[c] / (1.0 - prior[own]) * diff / n

    return ReliefResult(weights, [str(c) for c in classes], k_used, lowered)


def select_top_features(weights: Sequence[float], quantile: float = 0.9) -> List[int]:
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        raise ValueError("no feature weights given")
    if not 0 < quantile < 1:
        raise ValueError(f"quantile must lie in (0, 1), got {quantile}")
    threshold = np.quantile(weights, quantile)
    return [int(i) for i in np.flatnonzero(weights >= threshold)]


# ======= Contingency =======


@dataclass
class ContingencyTable:
    """Counts of user label (rows) against cluster (columns)."""

    labels: List[str]
    clusters: List[int]
    counts: np.ndarray
    mapping: Dict[int, str] = field(default_factory=dict)
    policy: str = ""
    unlabeled: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if not self.mapping:
            self.mapping, self.policy = _map_clusters(self.counts, self.labels, self.clusters)

    @classmethod
    def from_counts(
        cls, counts: Sequence[Sequence[int]], labels: Sequence[str], clusters: Optional[Sequence[int]] = None
    ) -> "ContingencyTable":
        counts = np.asarray(counts, dtype=int)
        clusters = list(clusters) if clusters is not None else list(range(counts.shape[1]))
        return cls(list(labels), clusters, counts)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _row(self, label: str) -> int:
        return self.labels.index(label)

    def correct(self, cluster: int) -> int:
        col = self.clusters.index(cluster)
        return int(self.counts[self._row(self.mapping[cluster]), col])

    @property
    def agreement(self) -> float:
        if self.total == 0:
            return 0.0
        return sum(self.correct(c) for c in self.clusters) / self.total

    def recall(self) -> Dict[str, float]:
        """Per user label: share of its trajectories that landed in a cluster mapped to it."""
        out = {}
        for row, label in enumerate(self.labels):
            hit = sum(self.correct(c) for c in self.clusters if self.mapping[c] == label)
            size = int(self.row_sums[row])
            out[label] = hit / size if size else 0.0
        return out

    def precision(self) -> Dict[int, float]:
        """Per cluster: share of its trajectories whose user label matches the mapped label."""
        out = {}
        for col, cluster in enumerate(self.clusters):
            size = int(self.col_sums[col])
            out[cluster] = self.correct(cluster) / size if size else 0.0
        return out

    def shared_labels(self) -> Dict[str, List[int]]:
        """Labels the mapping gives to more than one cluster."""
        by_label: Dict[str, List[int]] = {}
        for cluster in self.clusters:
            if cluster in self.mapping:
                by_label.setdefault(self.mapping[cluster], []).append(cluster)
        return {label: clusters for label, clusters in sorted(by_label.items()) if len(clusters) > 1}

    def by_mapped_label(self) -> np.ndarray:
        """Collapse clusters onto their mapped labels: a label x label matrix."""
        out = np.zeros((len(self.labels), len(self.labels)), dtype=int)
        for col, cluster in enumerate(self.clusters):
            out[:, self._row(self.mapping[cluster])] += self.counts[:, col]
        return out

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "clusters": list(self.clusters),
            "counts": self.counts.tolist(),
            "mapping": {str(c): label for c, label in self.mapping.items()},
            "policy": self.policy,
            "agreement": round(self.agreement, 6),
            "recall": {k: round(v, 6) for k, v in self.recall().items()},
            "precision": {str(k): round(v, 6) for k, v in self.precision().items()},
            "unlabeled": self.unlabeled,
            "shared_labels": self.shared_labels(),
        }


def _map_clusters(counts: np.ndarray, labels: List[str], clusters: List[int]) -> Tuple[Dict[int, str], str]:
    if len(labels) == 0:
        return {}, "none"
    if len(clusters) == len(labels):
        rows, cols = linear_sum_assignment(counts, maximize=True)
        return {clusters[c]: labels[r] for r, c in zip(rows, cols)}, "optimal"
    # argmax picks the first (lowest) label on ties
    return {c: labels[int(np.argmax(counts[:, j]))] for j, c in enumerate(clusters)}, "majority"


def contingency(
    user_labels: Mapping[str, Optional[str]],
    assignment: Mapping[str, int],
    k: Optional[int] = None,
) -> ContingencyTable:
    """Cross-tabulate declared activities against clusters.

    Trajectories without a declared activity are left out and counted in
    `unlabeled`. With `k`, every cluster 0..k-1 gets a column even if no
    labeled trajectory fell into it.
    """
    labeled = {tid: lab for tid, lab in user_labels.items() if lab and tid in assignment}
    unlabeled = sum(1 for tid in assignment if not user_labels.get(tid))
    labels = sorted(set(labeled.values()))
    clusters = list(range(k)) if k is not None else sorted({assignment[t] for t in labeled})
    counts = np.zeros((len(labels), len(clusters)), dtype=int)
    for tid in sorted(labeled):
        counts[labels.index(labeled[tid]), clusters.index(assignment[tid])] += 1
    return ContingencyTable(labels, clusters, counts, unlabeled=unlabeled)


def group_names(mapping: Mapping[int, str], k: int) -> Dict[int, str]:
    """One distinct group name per cluster 0..k-1.

    Unmapped clusters are `cluster<c>`. A label mapped to several clusters
    names each of them `<label>_<c>`, so no two clusters share a group.
    """
    shared = Counter(mapping[c] for c in range(k) if c in mapping)
    names = {}
    for c in range(k):
        label = mapping.get(c)
        if label is None:
            names[c] = f"cluster{c}"
        elif shared[label] > 1:
            names[c] = f"{label}_{c}"
        else:
            names[c] = label
    return names


def contingency_difference(a: ContingencyTable, b: ContingencyTable) -> float:
    """Mean absolute difference of cell shares, in percent, between two tables over the same labels."""
    if a.labels != b.labels:
        raise ValueError("contingency tables cover different labels")
    if a.total == 0 or b.total == 0:
        raise ValueError("cannot compare an empty contingency table")
    share_a = a.by_mapped_label() / a.total
    share_b = b.by_mapped_label() / b.total
    return float(np.abs(share_a - share_b).mean() * 100)


def clustering_agreement(a: Mapping[str, int], b: Mapping[str, int]) -> float:
    """Fraction of trajectories on which two clusterings agree after the best cluster matching."""
    common = sorted(set(a) & set(b))
    if not common:
        raise ValueError("clusterings share no trajectories")
    left = sorted({a[t] for t in common})
    right = sorted({b[t] for t in common})
    counts = np.zeros((len(left), len(right)), dtype=int)
    for t in common:
        counts[left.index(a[t]), right.index(b[t])] += 1
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum()) / len(common)
