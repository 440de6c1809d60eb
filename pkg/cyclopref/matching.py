"""Trajectory ingestion and hidden-Markov map matching."""

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import gpxpy
import gpxpy.gpx
from shapely.geometry import LineString, Point
from shapely.strtree import STRtree

from cyclopref.errors import TrajectoryFormatError, UnmatchableTrajectoryError
from cyclopref.geo import haversine
from cyclopref.network import (
    RoadNetwork,
    RoadType,
    ShortestPathTree,
    Walk,
    geometric_cost,
    lengths_by_type,
    shortest_path,
    shortest_path_tree,
)

logger = logging.getLogger(__name__)

ACTIVITIES = ("biking", "mountainbiking", "racingbiking", "other")


def normalize_activity(label: Optional[str]) -> Optional[str]:
    if label is None or not str(label).strip():
        return None
    label = str(label).strip().lower().replace(" ", "").replace("_", "")
    return label if label in ACTIVITIES else "other"


@dataclass(frozen=True)
class TrajectoryPoint:
    lon: float
    lat: float
    elevation: Optional[float] = None
    time: Optional[datetime] = None

    @property
    def coord(self) -> Tuple[float, float]:
        return (self.lon, self.lat)


@dataclass(frozen=True)
class Trajectory:
    trajectory_id: str
    points: Tuple[TrajectoryPoint, ...]
    declared_activity: Optional[str] = None
    total_length: Optional[float] = None
    climb: Optional[float] = None
    descent: Optional[float] = None

    @property
    def coords(self) -> List[Tuple[float, float]]:
        return [p.coord for p in self.points]

    @property
    def elevations(self) -> Optional[List[float]]:
        values = [p.elevation for p in self.points]
        if any(v is None for v in values):
            return None
        return values


@dataclass(frozen=True)
class MatchedPath(Walk):
    """The walk a trajectory followed.

    `snap_distances` holds one entry per matched point, in point order;
    points that could not be matched are listed in `dropped_points`.
    """

    trajectory_id: str = ""
    matched_length: int = 0
    snap_distances: Tuple[float, ...] = ()
    dropped_points: Tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "nodes": list(self.nodes),
            "edges": list(self.edges),
            "matched_length": self.matched_length,
            "snap_distances": [round(d, 3) for d in self.snap_distances],
            "dropped_points": list(self.dropped_points),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MatchedPath":
        return cls(
            nodes=tuple(data["nodes"]),
            edges=tuple(data["edges"]),
            trajectory_id=data["trajectory_id"],
            matched_length=int(data["matched_length"]),
            snap_distances=tuple(float(d) for d in data.get("snap_distances", [])),
            dropped_points=tuple(int(i) for i in data.get("dropped_points", [])),
        )


@dataclass(frozen=True)
class MatchingParams:
    max_snap_distance: float = 30.0
    sigma_gps: float = 10.0
    candidates: int = 5
    transition_scale: float = 50.0
    low_sampling_gap: float = 500.0


# ======= Loading =======


def load_trajectories(
    sources: Union[str, Path, Sequence[Union[str, Path]]],
    activities: Optional[Union[str, Path]] = None,
) -> List[Trajectory]:
    """Read GPX and trajectory-CSV files (or directories of them).

    Trajectories with fewer than two distinct points are skipped with a
    warning. Returned in trajectory id order.
    """
    if isinstance(sources, (str, Path)):
        sources = [sources]
    files: List[Path] = []
    for source in map(Path, sources):
        if source.is_dir():
            files.extend(sorted(p for p in source.iterdir() if p.suffix.lower() in (".gpx", ".csv")))
        elif source.exists():
            files.append(source)
        else:
            raise FileNotFoundError(f"No trajectory file found at {source}")

    raw: List[Trajectory] = []
    for path in files:
        if path.suffix.lower() == ".gpx":
            raw.extend(_read_gpx(path))
        else:
            raw.extend(_read_trajectory_csv(path))

    sidecar = _read_activities(Path(activities)) if activities else {}

    trajectories: Dict[str, Trajectory] = {}
    for traj in raw:
        if traj.trajectory_id in trajectories:
            raise TrajectoryFormatError(f"duplicate trajectory id {traj.trajectory_id}")
        points = _collapse_duplicates(traj.points)
        if len(points) < 2:
            logger.warning("trajectory %s skipped: fewer than 2 distinct points", traj.trajectory_id)
            continue
        extra = sidecar.get(traj.trajectory_id, {})
        trajectories[traj.trajectory_id] = Trajectory(
            trajectory_id=traj.trajectory_id,
            points=points,
            declared_activity=extra.get("activity") or traj.declared_activity,
            total_length=extra.get("total_length", traj.total_length),
            climb=extra.get("climb", traj.climb),
            descent=extra.get("descent", traj.descent),
        )
    return [trajectories[k] for k in sorted(trajectories)]


def _collapse_duplicates(points: Sequence[TrajectoryPoint]) -> Tuple[TrajectoryPoint, ...]:
    out: List[TrajectoryPoint] = []
    for p in points:
        if out and out[-1].coord == p.coord:
            continue
        out.append(p)
    return tuple(out)


def _check_times(points: Sequence[TrajectoryPoint], source: str) -> None:
    times = [p.time for p in points if p.time is not None]
    if any(b < a for a, b in zip(times, times[1:])):
        raise TrajectoryFormatError("timestamps decrease", source=source)


def _read_gpx(path: Path) -> List[Trajectory]:
    try:
        with open(path, "r") as f:
            gpx = gpxpy.parse(f)
    except (OSError, gpxpy.gpx.GPXException) as e:
        raise TrajectoryFormatError(f"cannot parse GPX: {e}", source=str(path)) from e

    tracks = gpx.tracks
    out = []
    for index, track in enumerate(tracks):
        points = [
            TrajectoryPoint(p.longitude, p.latitude, p.elevation, p.time)
            for segment in track.segments
            for p in segment.points
        ]
        _check_times(points, str(path))
        trajectory_id = path.stem if len(tracks) == 1 else f"{path.stem}-{index}"
        out.append(
            Trajectory(
                trajectory_id=trajectory_id,
                points=tuple(points),
                declared_activity=normalize_activity(track.type),
            )
        )
    return out


def _read_trajectory_csv(path: Path) -> List[Trajectory]:
    rows: Dict[str, List[Tuple[int, TrajectoryPoint]]] = defaultdict(list)
    with open(path, newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        for row_no, row in enumerate(reader, start=2):
            try:
                ele = row.get("ele")
                time = row.get("time")
                point = TrajectoryPoint(
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    elevation=float(ele) if ele not in (None, "") else None,
                    time=datetime.fromisoformat(time) if time not in (None, "") else None,
                )
                if not (-180 <= point.lon <= 180 and -90 <= point.lat <= 90):
                    raise ValueError("coordinate out of range")
                rows[str(row["trajectory_id"])].append((int(row["seq"]), point))
            except (KeyError, TypeError, ValueError) as e:
                raise TrajectoryFormatError(f"malformed row: {e}", source=str(path), row=row_no) from e

    out = []
    for trajectory_id, seq_points in rows.items():
        points = [p for _, p in sorted(seq_points, key=lambda item: item[0])]
        _check_times(points, str(path))
        out.append(Trajectory(trajectory_id=trajectory_id, points=tuple(points)))
    return out


def _read_activities(path: Path) -> Dict[str, dict]:
    if not path.exists():
        raise FileNotFoundError(f"No activity file found at {path}")
    out: Dict[str, dict] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        for row_no, row in enumerate(reader, start=2):
            try:
                entry = {"activity": normalize_activity(row.get("activity"))}
                for key in ("total_length", "climb", "descent"):
                    if row.get(key) not in (None, ""):
                        entry[key] = float(row[key])
                out[str(row["trajectory_id"])] = entry
            except (KeyError, ValueError) as e:
                raise TrajectoryFormatError(f"malformed row: {e}", source=str(path), row=row_no) from e
    return out


# ======= Map matching =======


@dataclass(frozen=True)
class _Candidate:
    edge_id: str
    along: float  # meters from edge.u
    distance: float


@dataclass
class _Route:
    length: float
    exit_node: Optional[str] = None
    entry_node: Optional[str] = None


class MapMatcher:
    """Map matcher bound to one network; safe to share between threads."""

    def __init__(self, network: RoadNetwork, params: Optional[MatchingParams] = None):
        if not network.edges:
            raise ValueError("cannot match against an empty network")
        self.network = network
        self.params = params or MatchingParams()
        self.projection = network.projection
        self._edge_ids = sorted(network.edges)
        self._lines = [
            LineString(self.projection.forward_many(network.edge_coords(e))) for e in self._edge_ids
        ]
        self._tree = STRtree(self._lines)

    def candidates(self, lon: float, lat: float) -> List[_Candidate]:
        pt = Point(self.projection.forward(lon, lat))
        radius = self.params.max_snap_distance
        found = []
        for idx in self._tree.query(pt.buffer(radius)):
            line = self._lines[int(idx)]
            d = line.distance(pt)
            if d > radius:
                continue
            edge = self.network.edges[self._edge_ids[int(idx)]]
            fraction = line.project(pt) / line.length if line.length > 0 else 0.0
            found.append(_Candidate(edge.edge_id, fraction * edge.length, d))
        found.sort(key=lambda c: (c.distance, c.edge_id))
        return found[: self.params.candidates]

    def match(self, traj: Trajectory) -> MatchedPath:
        cands = [self.candidates(p.lon, p.lat) for p in traj.points]

        fragments: List[List[int]] = [[]]
        dropped = []
        for i, c in enumerate(cands):
            if c:
                fragments[-1].append(i)
            else:
                dropped.append(i)
                fragments.append([])
        # every fragment around an unmatchable point needs two points of its own
        if dropped and any(len(f) < 2 for f in fragments):
            raise UnmatchableTrajectoryError(
                traj.trajectory_id, "point farther than max_snap_distance from every edge", dropped[0]
            )

        steps = [
            haversine(traj.points[i].coord, traj.points[i + 1].coord) for i in range(len(cands) - 1)
        ]
        max_step = max(steps) if steps else 0.0
        cutoff = max(4 * max_step, max_step + 2000.0)
        trees: Dict[str, ShortestPathTree] = {}

        def tree(node_id: str) -> ShortestPathTree:
            if node_id not in trees:
                trees[node_id] = shortest_path_tree(self.network, geometric_cost, node_id, cutoff=cutoff)
            return trees[node_id]

        walks: List[Walk] = []
        snaps: List[float] = []
        for fragment in fragments:
            states = self._viterbi(traj, fragment, cands, tree)
            snaps.extend(s.distance for s in states)
            walks.append(self._walk_from_states(traj, fragment, states, tree))

        nodes, edges = list(walks[0].nodes), list(walks[0].edges)
        for walk in walks[1:]:
            if walk.source != nodes[-1]:
                bridge = shortest_path(self.network, geometric_cost, nodes[-1], walk.source)
                if not bridge.reachable:
                    raise UnmatchableTrajectoryError(traj.trajectory_id, "fragments are disconnected")
                nodes.extend(bridge.nodes[1:])
                edges.extend(bridge.edges)
            nodes.extend(walk.nodes[1:])
            edges.extend(walk.edges)

        if not edges:
            raise UnmatchableTrajectoryError(traj.trajectory_id, "matched to a single node")

        return MatchedPath(
            nodes=tuple(nodes),
            edges=tuple(edges),
            trajectory_id=traj.trajectory_id,
            matched_length=sum(self.network.edges[e].length for e in edges),
            snap_distances=tuple(snaps),
            dropped_points=tuple(dropped),
        )

    def _route(self, a: _Candidate, b: _Candidate, tree) -> _Route:
        if a.edge_id == b.edge_id:
            return _Route(abs(a.along - b.along))
        ea = self.network.edges[a.edge_id]
        eb = self.network.edges[b.edge_id]
        best = _Route(math.inf)
        for x, dx in ((ea.u, a.along), (ea.v, ea.length - a.along)):
            dist = tree(x).dist
            for y, dy in ((eb.u, b.along), (eb.v, eb.length - b.along)):
                if y not in dist:
                    continue
                total = dx + dist[y] + dy
                if total < best.length:
                    best = _Route(total, x, y)
        return best

    def _viterbi(self, traj: Trajectory, fragment: List[int], cands, tree) -> List[_Candidate]:
        params = self.params
        two_sigma_sq = 2 * params.sigma_gps ** 2

        def emission(c: _Candidate) -> float:
            return -(c.distance ** 2) / two_sigma_sq

        first = cands[fragment[0]]
        scores = [emission(c) for c in first]
        back: List[List[int]] = []

        for prev_i, i in zip(fragment, fragment[1:]):
            straight = haversine(traj.points[prev_i].coord, traj.points[i].coord)
            new_scores, pointers = [], []
            for b in cands[i]:
                best, arg = -math.inf, 0
                for k, a in enumerate(cands[prev_i]):
                    if scores[k] == -math.inf:
                        continue
                    route = self._route(a, b, tree)
                    if math.isinf(route.length):
                        continue
                    if straight > params.low_sampling_gap:
                        transition = 0.0
                    else:
                        transition = -abs(route.length - straight) / params.transition_scale
                    score = scores[k] + transition
                    if score > best:
                        best, arg = score, k
                new_scores.append(best + emission(b) if best > -math.inf else -math.inf)
                pointers.append(arg)
            if all(s == -math.inf for s in new_scores):
                raise UnmatchableTrajectoryError(
                    traj.trajectory_id, "no connected candidates between consecutive points", i
                )
            scores = new_scores
            back.append(pointers)

        k = max(range(len(scores)), key=lambda j: (scores[j], -j))
        chosen = [k]
        for pointers in reversed(back):
            k = pointers[k]
            chosen.append(k)
        chosen.reverse()
        return [cands[i][k] for i, k in zip(fragment, chosen)]

    def _walk_from_states(self, traj: Trajectory, fragment, states: List[_Candidate], tree) -> Walk:
        net = self.network
        runs: List[List[_Candidate]] = []
        for state in states:
            if runs and runs[-1][-1].edge_id == state.edge_id:
                runs[-1].append(state)
            else:
                runs.append([state])

        links = []
        for last_run, next_run in zip(runs, runs[1:]):
            route = self._route(last_run[-1], next_run[0], tree)
            bridge = tree(route.exit_node).walk_to(route.entry_node)
            links.append((route.exit_node, route.entry_node, bridge))

        def nearest_end(edge_id: str, along: float) -> str:
            edge = net.edges[edge_id]
            return edge.u if along <= edge.length / 2 else edge.v

        nodes: List[str] = []
        edges: List[str] = []
        for i, run in enumerate(runs):
            edge_id = run[0].edge_id
            entry = links[i - 1][1] if i > 0 else nearest_end(edge_id, run[0].along)
            exit_ = links[i][0] if i < len(links) else nearest_end(edge_id, run[-1].along)
            if i == 0:
                nodes.append(entry)
            for node in self._traversals(edge_id, run, entry, exit_):
                edges.append(edge_id)
                nodes.append(node)

            if i < len(links):
                bridge = links[i][2]
                edges.extend(bridge.edges)
                nodes.extend(bridge.nodes[1:])

        return Walk(tuple(nodes), tuple(edges))

    def _traversals(self, edge_id: str, run: Sequence[_Candidate], start: str, end: str) -> List[str]:
        """Nodes reached by riding along one edge, from `start` to `end`.

        A run that passes the far side of the midpoint by more than the band
        and comes back is ridden out and back, so the edge is traversed
        twice (or more).
        """
        edge = self.network.edges[edge_id]
        band = min(self.params.sigma_gps, edge.length / 4)
        side = start
        reached: List[str] = []
        for state in run:
            from_side = state.along if side == edge.u else edge.length - state.along
            if from_side > edge.length / 2 + band:
                side = edge.other(side)
                reached.append(side)
        if side != end:
            reached.append(end)
        return reached


def map_match(
    network: RoadNetwork,
    traj: Trajectory,
    params: Optional[MatchingParams] = None,
    matcher: Optional[MapMatcher] = None,
) -> MatchedPath:
    """Match one trajectory; pass a shared `matcher` to reuse its spatial index."""
    matcher = matcher or MapMatcher(network, params)
    return matcher.match(traj)


def length_by_type(matched: Walk, network: RoadNetwork) -> Dict[RoadType, int]:
    return lengths_by_type(network, matched.edges)


@dataclass(frozen=True)
class Coverage:
    edges_used: int
    edges_total: int
    length_used: int
    length_total: int

    @property
    def edge_fraction(self) -> float:
        return self.edges_used / self.edges_total if self.edges_total else 0.0

    @property
    def length_fraction(self) -> float:
        return self.length_used / self.length_total if self.length_total else 0.0

    def to_dict(self) -> dict:
        return {
            "edges_used": self.edges_used,
            "edges_total": self.edges_total,
            "edge_fraction": round(self.edge_fraction, 6),
            "length_used_m": self.length_used,
            "length_total_m": self.length_total,
            "length_fraction": round(self.length_fraction, 6),
            "unused_edge_fraction": round(1 - self.edge_fraction, 6),
        }


def coverage(network: RoadNetwork, matched: Iterable[Walk]) -> Coverage:
    """How much of the network at least one trajectory uses."""
    used = set()
    for path in matched:
        used.update(path.edges)
    return Coverage(
        edges_used=len(used),
        edges_total=len(network.edges),
        length_used=sum(network.edges[e].length for e in used),
        length_total=network.total_length,
    )
