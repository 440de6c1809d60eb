"""Per-trajectory feature extraction and feature-matrix preparation."""

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from shapely.geometry import LineString, Polygon

from cyclopref.errors import DataError
from cyclopref.geo import Coordinate, LocalProjection, haversine
from cyclopref.matching import MatchedPath, Trajectory, length_by_type
from cyclopref.network import RoadNetwork, geometric_cost, shortest_path

logger = logging.getLogger(__name__)

ALTITUDE_FEATURES = ("climb", "descent", "altitude_range")

BASE_FEATURES = (
    "total_length",
    "climb",
    "descent",
    "altitude_range",
    "elevation_missing",
    "is_circular",
    "detour_difference",
    "detour_factor",
    "detour_capped",
    "snap_mean",
    "snap_max",
)


@dataclass(frozen=True)
class LandUsePolygon:
    category: str
    ring: Tuple[Coordinate, ...]


@dataclass(frozen=True)
class LandUseMap:
    polygons: Tuple[LandUsePolygon, ...] = ()

    @property
    def categories(self) -> List[str]:
        return sorted({p.category for p in self.polygons})

    def rings_by_category(self) -> Dict[str, List[Tuple[Coordinate, ...]]]:
        out: Dict[str, List[Tuple[Coordinate, ...]]] = defaultdict(list)
        for polygon in self.polygons:
            out[polygon.category].append(polygon.ring)
        return dict(out)


def load_landuse(source: Union[str, Path]) -> LandUseMap:
    """Read a GeoJSON FeatureCollection of Polygon features with a `category`."""
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"No land-use file found at {source}")
    try:
        with open(source, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{source}: cannot parse GeoJSON: {e}") from e

    polygons = []
    for index, feature in enumerate(data.get("features", [])):
        geometry = feature.get("geometry") or {}
        category = str((feature.get("properties") or {}).get("category", "")).strip().lower()
        if not category:
            raise DataError(f"{source}: feature {index} has no category")
        if geometry.get("type") != "Polygon":
            raise DataError(f"{source}: feature {index} is not a Polygon")
        ring = [tuple(float(c) for c in pt[:2]) for pt in geometry["coordinates"][0]]
        if len(ring) < 3:
            raise DataError(f"{source}: feature {index} has a degenerate ring")
        if ring[0] != ring[-1]:
            ring.append(ring[0])
        polygons.append(LandUsePolygon(category, tuple(ring)))
    return LandUseMap(tuple(polygons))


def landuse_shares(
    traj: Trajectory,
    landuse: LandUseMap,
    buffer_radius: float = 50.0,
    sample_step: float = 10.0,
    projection: Optional[LocalProjection] = None,
    categories: Sequence[str] = (),
) -> Dict[str, float]:
    """Fraction of sample points along the trajectory within `buffer_radius` of each category.

    Every category in `categories` gets a share even when the map holds no polygon of it.
    """
    if buffer_radius < 0 or sample_step <= 0:
        raise ValueError("buffer_radius must be >= 0 and sample_step > 0")
    shares = {category: 0.0 for category in sorted(set(categories))}
    if not landuse.polygons:
        return shares

    projection = projection or LocalProjection.around(traj.coords)
    line = LineString(projection.forward_many(traj.coords))
    distances = np.arange(0.0, line.length, sample_step)
    distances = np.append(distances, line.length)
    samples = shapely.line_interpolate_point(line, distances)

    for category, rings in sorted(landuse.rings_by_category().items()):
        area = shapely.union_all([Polygon(projection.forward_many(ring)) for ring in rings])
        within = shapely.distance(area, samples) <= buffer_radius
        shares[category] = float(np.count_nonzero(within)) / len(samples)
    return dict(sorted(shares.items()))


@dataclass(frozen=True)
class FeatureParams:
    buffer_radius: float = 50.0
    sample_step: float = 10.0
    circular_min_gap: float = 200.0
    circular_fraction: float = 0.01
    detour_cap: float = 1e4
    landuse_categories: Tuple[str, ...] = ()


@dataclass(frozen=True)
class FeatureVector:
    trajectory_id: str
    total_length: float
    climb: Optional[float]
    descent: Optional[float]
    altitude_range: Optional[float]
    is_circular: int
    detour_difference: float
    detour_factor: float
    detour_capped: int
    snap_mean: float
    snap_max: float
    road_type_shares: Dict[str, float] = field(default_factory=dict)
    landuse_shares: Dict[str, float] = field(default_factory=dict)

    @property
    def elevation_missing(self) -> int:
        return int(any(getattr(self, name) is None for name in ALTITUDE_FEATURES))

    def value(self, name: str) -> float:
        if name.startswith("share_"):
            return self.road_type_shares.get(name[len("share_"):], 0.0)
        if name.startswith("landuse_"):
            return self.landuse_shares.get(name[len("landuse_"):], 0.0)
        raw = getattr(self, name)
        return math.nan if raw is None else float(raw)


def _climb_descent(elevations: Sequence[float]) -> Tuple[float, float]:
    diffs = np.diff(np.asarray(elevations, dtype=float))
    return float(diffs[diffs > 0].sum()), float(-diffs[diffs < 0].sum())


def extract_features(
    traj: Trajectory,
    matched: MatchedPath,
    network: RoadNetwork,
    landuse: LandUseMap,
    params: Optional[FeatureParams] = None,
) -> FeatureVector:
    params = params or FeatureParams()
    total = float(matched.matched_length)

    elevations = traj.elevations
    if elevations is not None:
        climb, descent = _climb_descent(elevations)
        altitude_range: Optional[float] = max(elevations) - min(elevations)
    else:
        climb, descent, altitude_range = traj.climb, traj.descent, None

    gap = haversine(traj.points[0].coord, traj.points[-1].coord)
    is_circular = int(gap < max(params.circular_min_gap, params.circular_fraction * total))

    capped = 0
    if matched.source == matched.target:
        detour_difference = total
        detour_factor = min(total / 1.0, params.detour_cap)
        capped = 1
    else:
        reference = shortest_path(network, geometric_cost, matched.source, matched.target)
        detour_difference = total - reference.cost
        detour_factor = total / reference.cost

    by_type = length_by_type(matched, network)
    type_shares = {t: length / total for t, length in sorted(by_type.items())}

    snaps = matched.snap_distances or (0.0,)
    return FeatureVector(
        trajectory_id=traj.trajectory_id,
        total_length=total,
        climb=climb,
        descent=descent,
        altitude_range=altitude_range,
        is_circular=is_circular,
        detour_difference=float(detour_difference),
        detour_factor=float(detour_factor),
        detour_capped=capped,
        snap_mean=float(np.mean(snaps)),
        snap_max=float(np.max(snaps)),
        road_type_shares=type_shares,
        landuse_shares=landuse_shares(
            traj,
            landuse,
            params.buffer_radius,
            params.sample_step,
            projection=network.projection,
            categories=params.landuse_categories,
        ),
    )


@dataclass
class FeatureMatrix:
    trajectory_ids: List[str]
    names: List[str]
    values: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, indices: Sequence[int]) -> "FeatureMatrix":
        indices = list(indices)
        return FeatureMatrix(
            trajectory_ids=list(self.trajectory_ids),
            names=[self.names[i] for i in indices],
            values=self.values[:, indices],
        )


def build_feature_matrix(
    vectors: Sequence[FeatureVector],
    road_types: Optional[Sequence[str]] = None,
    categories: Optional[Sequence[str]] = None,
) -> FeatureMatrix:
    """Dense trajectories x features matrix; missing altitude values are imputed by the column mean."""
    vectors = sorted(vectors, key=lambda v: v.trajectory_id)
    if road_types is None:
        road_types = sorted({t for v in vectors for t in v.road_type_shares})
    if categories is None:
        categories = sorted({c for v in vectors for c in v.landuse_shares})
    names = (
        list(BASE_FEATURES)
        + [f"share_{t}" for t in road_types]
        + [f"landuse_{c}" for c in categories]
    )
    values = np.array([[v.value(name) for name in names] for v in vectors], dtype=float)
    values = values.reshape(len(vectors), len(names))

    for name in ALTITUDE_FEATURES:
        col = names.index(name)
        missing = np.isnan(values[:, col])
        if missing.any():
            fill = float(np.mean(values[~missing, col])) if (~missing).any() else 0.0
            values[missing, col] = fill
            logger.info("imputed %s for %d trajectories", name, int(missing.sum()))

    return FeatureMatrix([v.trajectory_id for v in vectors], names, values)


@dataclass
class Normalization:
    values: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray


def znormalize(matrix: np.ndarray) -> Normalization:
    """Column-wise zero mean and unit population standard deviation."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise ValueError("znormalize needs a 2-D matrix with at least 2 rows")
    if np.isnan(matrix).any():
        raise ValueError("znormalize needs imputed values, found NaN")

    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    scale = np.maximum(1.0, np.abs(matrix).max(axis=0))
    zero_variance = std <= 1e-12 * scale
    safe_std = np.where(zero_variance, 1.0, std)
    normalized = np.where(zero_variance, 0.0, (matrix - mean) / safe_std)
    return Normalization(normalized, mean, std, zero_variance)
