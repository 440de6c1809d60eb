"""Synthetic networks and trajectories with a planted preference.

Used by the acceptance tests and by `cyclopref sample`, which writes a
small dataset: three groups of riders, each taking w_alpha-shortest routes
that favor one road type.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import gpxpy
import gpxpy.gpx
import numpy as np

from cyclopref.geo import LocalProjection, haversine, round_half_up
from cyclopref.network import (
    EdgeClassification,
    NetworkNode,
    RoadEdge,
    RoadNetwork,
    ShortestPath,
    Walk,
    Weighting,
    shortest_path,
)

logger = logging.getLogger(__name__)

DEFAULT_ORIGIN = (7.10, 50.73)


def grid_network(
    rows: int,
    cols: int,
    road_types: Sequence[str],
    rng: np.random.Generator,
    spacing: float = 100.0,
    jitter: float = 0.0,
    origin: Tuple[float, float] = DEFAULT_ORIGIN,
    diagonal_type: Optional[str] = None,
    diagonal_fraction: float = 0.0,
) -> RoadNetwork:
    """A rows x cols grid with uniformly drawn road types.

    Nodes are moved by up to `jitter` meters so that edge lengths differ.
    With `diagonal_type`, that fraction of the cells gets one diagonal edge
    of that type.
    """
    projection = LocalProjection(*origin)
    nodes: Dict[Tuple[int, int], NetworkNode] = {}
    for r in range(rows):
        for c in range(cols):
            dx, dy = rng.uniform(-jitter, jitter, size=2) if jitter > 0 else (0.0, 0.0)
            lon, lat = projection.inverse(c * spacing + dx, r * spacing + dy)
            nodes[(r, c)] = NetworkNode(f"v{r:03d}_{c:03d}", lon, lat)

    edges: List[RoadEdge] = []

    def connect(a: Tuple[int, int], b: Tuple[int, int], road_type: str) -> None:
        u, v = nodes[a], nodes[b]
        length = max(1, round_half_up(haversine(u.coord, v.coord)))
        edges.append(
            RoadEdge(f"e{len(edges):05d}", u.node_id, v.node_id, length, road_type, (u.coord, v.coord))
        )

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                connect((r, c), (r, c + 1), str(rng.choice(road_types)))
            if r + 1 < rows:
                connect((r, c), (r + 1, c), str(rng.choice(road_types)))
    if diagonal_type:
        for r in range(rows - 1):
            for c in range(cols - 1):
                if rng.random() < diagonal_fraction:
                    connect((r, c), (r + 1, c + 1), diagonal_type)
    return RoadNetwork(nodes.values(), edges)


def random_pairs(
    network: RoadNetwork, count: int, rng: np.random.Generator, min_distance: float = 0.0
) -> List[Tuple[str, str]]:
    """Distinct node pairs at least `min_distance` meters apart (straight line)."""
    ids = sorted(network.nodes)
    pairs: List[Tuple[str, str]] = []
    for _ in range(count * 100):
        if len(pairs) == count:
            break
        s, t = (ids[i] for i in rng.choice(len(ids), size=2, replace=False))
        if haversine(network.nodes[s].coord, network.nodes[t].coord) >= min_distance:
            pairs.append((s, t))
    if len(pairs) < count:
        raise ValueError(f"found only {len(pairs)} node pairs {min_distance:g} m apart")
    return pairs


def planted_paths(
    network: RoadNetwork,
    favored_types: Sequence[str],
    alpha: Union[Fraction, float],
    pairs: Sequence[Tuple[str, str]],
) -> List[ShortestPath]:
    """Exact w_alpha-shortest paths between the given pairs."""
    weighting = Weighting(alpha, EdgeClassification(frozenset(favored_types)))
    paths = []
    for s, t in pairs:
        path = shortest_path(network, weighting.scaled_cost, s, t)
        if not path.reachable:
            raise ValueError(f"{t} is not reachable from {s}")
        paths.append(path)
    return paths


@dataclass(frozen=True)
class SamplePoint:
    lon: float
    lat: float
    elevation: float
    time: datetime


def sample_walk(
    network: RoadNetwork,
    walk: Walk,
    rng: np.random.Generator,
    step: float = 20.0,
    noise: float = 3.0,
    base_elevation: float = 60.0,
    amplitude: float = 0.0,
    period: float = 1500.0,
    speed: float = 5.0,
    start: datetime = datetime(2020, 6, 1, 8, 0, tzinfo=timezone.utc),
) -> List[SamplePoint]:
    """GPS-like fixes every `step` meters along a walk, with Gaussian noise."""
    projection = network.projection
    coords: List[Tuple[float, float]] = []
    for i, edge_id in enumerate(walk.edges):
        part = projection.forward_many(network.edge_coords(edge_id, start=walk.nodes[i]))
        coords.extend(part if not coords else part[1:])
    xy = np.asarray(coords, dtype=float)
    seg = np.hypot(*np.diff(xy, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    stations = np.append(np.arange(0.0, cum[-1], step), cum[-1])

    points = []
    for d in stations:
        x = np.interp(d, cum, xy[:, 0]) + rng.normal(0.0, noise)
        y = np.interp(d, cum, xy[:, 1]) + rng.normal(0.0, noise)
        lon, lat = projection.inverse(float(x), float(y))
        elevation = base_elevation + amplitude * math.sin(2 * math.pi * d / period)
        points.append(
            SamplePoint(lon, lat, round(elevation, 1), start + timedelta(seconds=float(d) / speed))
        )
    return points


def write_gpx(path: Path, name: str, points: Sequence[SamplePoint], activity: Optional[str] = None) -> Path:
    gpx = gpxpy.gpx.GPX()
    track = gpxpy.gpx.GPXTrack(name=name)
    track.type = activity
    segment = gpxpy.gpx.GPXTrackSegment()
    for p in points:
        segment.points.append(
            gpxpy.gpx.GPXTrackPoint(round(p.lat, 7), round(p.lon, 7), elevation=p.elevation, time=p.time)
        )
    track.segments.append(segment)
    gpx.tracks.append(track)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(gpx.to_xml())
    return path


def network_geojson(network: RoadNetwork) -> dict:
    features = []
    for edge_id in sorted(network.edges):
        edge = network.edges[edge_id]
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [list(c) for c in network.edge_coords(edge_id)],
                },
                "properties": {"edge_id": edge_id, "road_type": edge.road_type, "length_m": edge.length},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def _rectangle(projection: LocalProjection, x0: float, y0: float, x1: float, y1: float) -> List[List[float]]:
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
    return [list(projection.inverse(x, y)) for x, y in corners]


# activity, favored road type, elevation amplitude (m)
SAMPLE_GROUPS = (
    ("biking", "cycleway", 2.0),
    ("racingbiking", "secondary", 40.0),
    ("mountainbiking", "track_grade5", 150.0),
)
SAMPLE_ALPHA = Fraction(3, 10)
SAMPLE_PER_GROUP = 4
SAMPLE_FORBIDDEN = ("motorway",)


def write_sample_dataset(dest: Union[str, Path], seed: int = 0) -> Path:
    """Write network, land use, 12 GPX tracks, activities and a config; returns the config path."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    road_types = ("cycleway", "secondary", "track_grade5", "residential")
    full = grid_network(
        8,
        8,
        road_types,
        rng,
        spacing=150.0,
        jitter=15.0,
        diagonal_type="motorway",
        diagonal_fraction=0.25,
    )
    rideable = full.without_types(SAMPLE_FORBIDDEN)
    with open(dest / "network.geojson", "w") as f:
        json.dump(network_geojson(full), f, indent=1)
        f.write("\n")

    projection = full.projection
    extent = 7 * 150.0
    # the network projection is centered on the grid
    lo_x = lo_y = -extent / 2
    landuse = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [_rectangle(projection, lo_x, lo_y, lo_x + 400, lo_y + extent)]},
                "properties": {"category": "woodland"},
            },
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [_rectangle(projection, lo_x + 650, lo_y, lo_x + extent, lo_y + 500)]},
                "properties": {"category": "settled_land"},
            },
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [_rectangle(projection, lo_x + 650, lo_y + 600, lo_x + extent, lo_y + extent)]},
                "properties": {"category": "arable_land"},
            },
        ],
    }
    with open(dest / "landuse.geojson", "w") as f:
        json.dump(landuse, f, indent=1)
        f.write("\n")

    activities = []
    for activity, favored, amplitude in SAMPLE_GROUPS:
        pairs = random_pairs(rideable, SAMPLE_PER_GROUP, rng, min_distance=600.0)
        for i, path in enumerate(planted_paths(rideable, [favored], SAMPLE_ALPHA, pairs)):
            trajectory_id = f"{activity}_{i:02d}"
            points = sample_walk(rideable, path, rng, amplitude=amplitude)
            write_gpx(dest / "trajectories" / f"{trajectory_id}.gpx", trajectory_id, points, activity)
            activities.append((trajectory_id, activity))

    with open(dest / "activities.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["trajectory_id", "activity"])
        writer.writerows(sorted(activities))

    config_file = dest / "config.toml"
    config_file.write_text(
        "\n".join(
            [
                'network = "network.geojson"',
                'landuse = "landuse.geojson"',
                'trajectories = "trajectories"',
                'activities = "activities.csv"',
                'out_dir = "out"',
                f"forbidden_types = {json.dumps(list(SAMPLE_FORBIDDEN))}",
                "k = 3",
                f"seed = {seed}",
                "",
            ]
        )
    )
    logger.info("sample dataset with %d trajectories written to %s", len(activities), dest)
    return config_file
