"""Road network model, loaders, shortest paths and the bicriteria edge weighting.

The network is an undirected multigraph: every edge can be ridden in both
directions and parallel edges between the same pair of nodes are allowed.
Lengths are stored as integer meters so that weighted path costs can be
compared exactly.
"""

import csv
import heapq
import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import (
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

from cyclopref.errors import DataError, NetworkFormatError, NonContiguousPathError, UnsnappableError
from cyclopref.geo import Coordinate, LocalProjection, haversine, polyline_length, round_half_up

logger = logging.getLogger(__name__)

RoadType = str

KNOWN_ROAD_TYPES: FrozenSet[RoadType] = frozenset(
    {
        "cycleway",
        "residential",
        "secondary",
        "tertiary",
        "primary",
        "footway",
        "service",
        "path",
        "track_grade1",
        "track_grade2",
        "track_grade3",
        "track_grade4",
        "track_grade5",
        "unknown",
    }
)

SNAP_GRID_M = 0.1

_TRACK_GRADE = re.compile(r"^track_?grade_?(\d)$")


def normalize_road_type(tag: Optional[str]) -> RoadType:
    """Case-normalize a road type tag. Unknown tags are kept as they are."""
    if tag is None or not str(tag).strip():
        return "unknown"
    norm = re.sub(r"[\s\-]+", "_", str(tag).strip().lower())
    match = _TRACK_GRADE.match(norm)
    if match:
        return f"track_grade{match.group(1)}"
    return norm


@dataclass(frozen=True)
class NetworkNode:
    node_id: str
    lon: float
    lat: float
    elevation: Optional[float] = None

    @property
    def coord(self) -> Coordinate:
        return (self.lon, self.lat)


@dataclass(frozen=True)
class RoadEdge:
    edge_id: str
    u: str
    v: str
    length: int
    road_type: RoadType
    geometry: Optional[Tuple[Coordinate, ...]] = None

    def other(self, node_id: str) -> str:
        if node_id == self.u:
            return self.v
        if node_id == self.v:
            return self.u
        raise KeyError(f"node {node_id} is not an endpoint of edge {self.edge_id}")

    def connects(self, a: str, b: str) -> bool:
        return (self.u == a and self.v == b) or (self.u == b and self.v == a)


class RoadNetwork:
    """Immutable undirected road graph G = (V, E)."""

    def __init__(self, nodes: Iterable[NetworkNode], edges: Iterable[RoadEdge]):
        node_map: Dict[str, NetworkNode] = {}
        for node in nodes:
            node_map[node.node_id] = node
        edge_map: Dict[str, RoadEdge] = {}
        adjacency: Dict[str, List[str]] = defaultdict(list)
        for edge in edges:
            if edge.edge_id in edge_map:
                raise NetworkFormatError("duplicate edge id", edge.edge_id)
            for endpoint in (edge.u, edge.v):
                if endpoint not in node_map:
                    raise NetworkFormatError(f"references missing node {endpoint}", edge.edge_id)
            if edge.u == edge.v:
                raise NetworkFormatError("endpoints are not distinct", edge.edge_id)
            if edge.length <= 0:
                raise NetworkFormatError(f"non-positive length {edge.length}", edge.edge_id)
            edge_map[edge.edge_id] = edge
            adjacency[edge.u].append(edge.edge_id)
            adjacency[edge.v].append(edge.edge_id)
        self._nodes = node_map
        self._edges = edge_map
        self._adjacency = {n: tuple(sorted(ids)) for n, ids in adjacency.items()}

    @property
    def nodes(self) -> Mapping[str, NetworkNode]:
        return self._nodes

    @property
    def edges(self) -> Mapping[str, RoadEdge]:
        return self._edges

    def incident(self, node_id: str) -> Tuple[str, ...]:
        return self._adjacency.get(node_id, ())

    def neighbors(self, node_id: str) -> Iterator[Tuple[RoadEdge, str]]:
        for edge_id in self.incident(node_id):
            edge = self._edges[edge_id]
            yield edge, edge.other(node_id)

    @property
    def total_length(self) -> int:
        return sum(edge.length for edge in self._edges.values())

    @property
    def road_types(self) -> FrozenSet[RoadType]:
        return frozenset(edge.road_type for edge in self._edges.values())

    @cached_property
    def projection(self) -> LocalProjection:
        return LocalProjection.around(node.coord for node in self._nodes.values())

    def edge_coords(self, edge_id: str, start: Optional[str] = None) -> List[Coordinate]:
        """Polyline of an edge, oriented to begin at `start` (default: edge.u)."""
        edge = self._edges[edge_id]
        if edge.geometry:
            coords = list(edge.geometry)
        else:
            coords = [self._nodes[edge.u].coord, self._nodes[edge.v].coord]
        if start is not None and start == edge.v:
            coords.reverse()
        return coords

    def without_types(self, forbidden: Iterable[RoadType]) -> "RoadNetwork":
        forbidden = {normalize_road_type(t) for t in forbidden}
        edges = [e for e in self._edges.values() if e.road_type not in forbidden]
        used = {e.u for e in edges} | {e.v for e in edges}
        nodes = [n for n in self._nodes.values() if n.node_id in used]
        return RoadNetwork(nodes, edges)

    def __repr__(self) -> str:
        return f"RoadNetwork(nodes={len(self._nodes)}, edges={len(self._edges)})"


# ======= Loading =======


def load_network(
    source: Union[str, Path],
    forbidden_types: Iterable[RoadType] = (),
    nodes_source: Optional[Union[str, Path]] = None,
) -> RoadNetwork:
    """Load a network file, drop forbidden road types and isolated nodes.

    GeoJSON (`.geojson`/`.json`) carries the geometry and derives node ids by
    snapping endpoints to a 0.1 m grid. A CSV edge list needs the node CSV as
    `nodes_source`.
    """
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"No network file found at {source}")

    if source.suffix.lower() in (".geojson", ".json"):
        nodes, edges = _read_geojson_network(source)
    elif source.suffix.lower() == ".csv":
        if nodes_source is None:
            raise NetworkFormatError(f"{source}: a CSV edge list needs a node CSV")
        nodes, edges = _read_csv_network(source, Path(nodes_source))
    else:
        raise NetworkFormatError(f"{source}: unsupported network format '{source.suffix}'")

    network = RoadNetwork(nodes, edges).without_types(forbidden_types)
    logger.info(
        "loaded %s from %s (%d edges before filtering)", network, source.name, len(edges)
    )
    return network


def _checked_length(edge_id: str, declared: Optional[float], coords: Sequence[Coordinate]) -> int:
    geodesic = polyline_length(coords) if len(coords) >= 2 else None
    length = declared
    if declared is not None and declared < 0:
        raise NetworkFormatError(f"negative length {declared}", edge_id)
    if geodesic is not None:
        if declared is None:
            length = geodesic
        elif abs(declared - geodesic) > 0.01 * geodesic:
            logger.warning(
                "edge %s: declared length %.1f m differs from geometry %.1f m, using geometry",
                edge_id,
                declared,
                geodesic,
            )
            length = geodesic
    if length is None:
        raise NetworkFormatError("no length and no geometry", edge_id)
    rounded = round_half_up(length)
    if rounded <= 0:
        raise NetworkFormatError(f"length {length:.2f} m rounds to {rounded}", edge_id)
    return rounded


def _read_geojson_network(source: Path) -> Tuple[List[NetworkNode], List[RoadEdge]]:
    try:
        with open(source, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise NetworkFormatError(f"{source}: cannot parse GeoJSON: {e}") from e

    if data.get("type") != "FeatureCollection":
        raise NetworkFormatError(f"{source}: expected a FeatureCollection")

    lines = []
    for index, feature in enumerate(data.get("features", [])):
        geometry = feature.get("geometry") or {}
        props = feature.get("properties") or {}
        edge_id = str(props.get("edge_id", feature.get("id", f"e{index}")))
        if geometry.get("type") != "LineString":
            raise NetworkFormatError(f"geometry type {geometry.get('type')} is not a LineString", edge_id)
        coords = geometry.get("coordinates") or []
        if len(coords) < 2:
            raise NetworkFormatError("LineString with fewer than 2 coordinates", edge_id)
        try:
            coords = [tuple(float(c) for c in pt) for pt in coords]
        except (TypeError, ValueError) as e:
            raise NetworkFormatError(f"malformed coordinate: {e}", edge_id) from e
        lines.append((edge_id, coords, props))

    projection = LocalProjection.around(pt[:2] for _, coords, _ in lines for pt in (coords[0], coords[-1]))
    snapped: Dict[Tuple[int, int], NetworkNode] = {}

    def snap(pt: Tuple[float, ...]) -> str:
        x, y = projection.forward(pt[0], pt[1])
        key = (round(x / SNAP_GRID_M), round(y / SNAP_GRID_M))
        node = snapped.get(key)
        if node is None:
            node = NetworkNode(
                node_id=f"n{len(snapped)}",
                lon=pt[0],
                lat=pt[1],
                elevation=pt[2] if len(pt) > 2 else None,
            )
            snapped[key] = node
        return node.node_id

    edges = []
    for edge_id, coords, props in lines:
        u = snap(coords[0])
        v = snap(coords[-1])
        if u == v:
            logger.warning("edge %s: closed loop dropped", edge_id)
            continue
        declared = props.get("length_m")
        try:
            declared = float(declared) if declared is not None else None
        except (TypeError, ValueError) as e:
            raise NetworkFormatError(f"malformed length_m {declared!r}", edge_id) from e
        geometry = tuple((pt[0], pt[1]) for pt in coords)
        edges.append(
            RoadEdge(
                edge_id=edge_id,
                u=u,
                v=v,
                length=_checked_length(edge_id, declared, geometry),
                road_type=normalize_road_type(props.get("road_type")),
                geometry=geometry,
            )
        )
    return list(snapped.values()), edges


def _read_csv_network(edge_source: Path, node_source: Path) -> Tuple[List[NetworkNode], List[RoadEdge]]:
    if not node_source.exists():
        raise FileNotFoundError(f"No node file found at {node_source}")

    nodes: Dict[str, NetworkNode] = {}
    with open(node_source, newline="") as f:
        for row_no, row in enumerate(csv.DictReader(_skip_comments(f)), start=2):
            try:
                ele = row.get("ele")
                node = NetworkNode(
                    node_id=str(row["node_id"]).strip(),
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    elevation=float(ele) if ele not in (None, "") else None,
                )
            except (KeyError, TypeError, ValueError) as e:
                raise NetworkFormatError(f"{node_source}, row {row_no}: malformed node: {e}") from e
            nodes[node.node_id] = node

    edges = []
    with open(edge_source, newline="") as f:
        for row_no, row in enumerate(csv.DictReader(_skip_comments(f)), start=2):
            edge_id = str(row.get("edge_id") or f"row{row_no}").strip()
            u = str(row.get("from_node", "")).strip()
            v = str(row.get("to_node", "")).strip()
            for endpoint in (u, v):
                if endpoint not in nodes:
                    raise NetworkFormatError(f"references missing node '{endpoint}'", edge_id)
            if u == v:
                logger.warning("edge %s: self-loop dropped", edge_id)
                continue
            try:
                declared = float(row["length_m"]) if row.get("length_m") not in (None, "") else None
            except ValueError as e:
                raise NetworkFormatError(f"malformed length_m {row.get('length_m')!r}", edge_id) from e
            if declared is None:
                declared = polyline_length([nodes[u].coord, nodes[v].coord])
            if declared < 0:
                raise NetworkFormatError(f"negative length {declared}", edge_id)
            length = round_half_up(declared)
            if length <= 0:
                raise NetworkFormatError(f"length {declared} rounds to {length}", edge_id)
            edges.append(
                RoadEdge(
                    edge_id=edge_id,
                    u=u,
                    v=v,
                    length=length,
                    road_type=normalize_road_type(row.get("road_type")),
                )
            )
    return list(nodes.values()), edges


def _skip_comments(lines: Iterable[str]) -> Iterator[str]:
    return (line for line in lines if not line.startswith("#"))


# ======= Edge classification and weighting =======


@dataclass(frozen=True)
class EdgeClassification:
    """Binary partition {E-, E+} of the edges, a pure function of the road type."""

    favored_types: FrozenSet[RoadType] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(
            self, "favored_types", frozenset(normalize_road_type(t) for t in self.favored_types)
        )

    def is_favored(self, edge: RoadEdge) -> bool:
        return edge.road_type in self.favored_types

    def label(self, edge: RoadEdge) -> str:
        return "favored" if self.is_favored(edge) else "unfavored"

    def partition(self, network: RoadNetwork) -> Tuple[Set[str], Set[str]]:
        """Return (E+, E-) as sets of edge ids."""
        favored, unfavored = set(), set()
        for edge in network.edges.values():
            (favored if self.is_favored(edge) else unfavored).add(edge.edge_id)
        return favored, unfavored


def as_fraction(alpha: Union[Fraction, float, int, str]) -> Fraction:
    if isinstance(alpha, Fraction):
        return alpha
    if isinstance(alpha, float):
        # 0.35 means 7/20, not its binary expansion
        return Fraction(repr(alpha))
    return Fraction(alpha)


@dataclass(frozen=True)
class Weighting:
    """w = alpha * w1 + (1 - alpha) * w2 for a given classification.

    `alpha` is kept as an exact rational p/q; `scale` is q, and
    `scaled_cost` returns the integer q * w(e) used for exact comparisons.
    """

    alpha: Fraction
    classification: EdgeClassification

    def __post_init__(self):
        alpha = as_fraction(self.alpha)
        if not 0 <= alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def scale(self) -> int:
        return self.alpha.denominator

    def component_weights(self, edge: RoadEdge) -> Tuple[int, int]:
        return component_weights(edge, self.classification)

    def edge_weight(self, edge: RoadEdge) -> float:
        return edge_weight(edge, self)

    def scaled_cost(self, edge: RoadEdge) -> int:
        w1, w2 = self.component_weights(edge)
        p, q = self.alpha.numerator, self.alpha.denominator
        return p * w1 + (q - p) * w2


def component_weights(edge: RoadEdge, classification: EdgeClassification) -> Tuple[int, int]:
    """(w1, w2): favored length and unfavored length of an edge."""
    if classification.is_favored(edge):
        return edge.length, 0
    return 0, edge.length


def edge_weight(edge: RoadEdge, weighting: Weighting) -> float:
    w1, w2 = component_weights(edge, weighting.classification)
    return float(weighting.alpha * w1 + (1 - weighting.alpha) * w2)


def geometric_cost(edge: RoadEdge) -> int:
    return edge.length


# ======= Paths =======

EdgeCost = Callable[[RoadEdge], Union[int, float, Fraction]]


@dataclass(frozen=True)
class Walk:
    """A walk through the network: node sequence and the edges between them."""

    nodes: Tuple[str, ...]
    edges: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.edges and len(self.nodes) != len(self.edges) + 1:
            raise NonContiguousPathError(
                f"walk has {len(self.nodes)} nodes for {len(self.edges)} edges"
            )

    @property
    def source(self) -> Optional[str]:
        return self.nodes[0] if self.nodes else None

    @property
    def target(self) -> Optional[str]:
        return self.nodes[-1] if self.nodes else None

    def validate(self, network: RoadNetwork) -> None:
        for i, edge_id in enumerate(self.edges):
            edge = network.edges.get(edge_id)
            if edge is None:
                raise NonContiguousPathError(f"edge {edge_id} is not in the network")
            if not edge.connects(self.nodes[i], self.nodes[i + 1]):
                raise NonContiguousPathError(
                    f"edge {edge_id} does not connect {self.nodes[i]} and {self.nodes[i + 1]}"
                )

    def length(self, network: RoadNetwork) -> int:
        return sum(network.edges[e].length for e in self.edges)

    @classmethod
    def from_edges(
        cls, network: RoadNetwork, edge_ids: Sequence[str], start: Optional[str] = None
    ) -> "Walk":
        """Derive the node sequence of a contiguous edge sequence."""
        if not edge_ids:
            return cls((start,) if start else (), ())
        first = network.edges[edge_ids[0]]
        if start is None:
            start = first.u
            if len(edge_ids) > 1:
                nxt = network.edges[edge_ids[1]]
                if first.u in (nxt.u, nxt.v) and first.v not in (nxt.u, nxt.v):
                    start = first.v
        nodes = [start]
        for edge_id in edge_ids:
            edge = network.edges.get(edge_id)
            if edge is None:
                raise NonContiguousPathError(f"edge {edge_id} is not in the network")
            try:
                nodes.append(edge.other(nodes[-1]))
            except KeyError:
                raise NonContiguousPathError(
                    f"edge {edge_id} does not continue the walk at node {nodes[-1]}"
                ) from None
        return cls(tuple(nodes), tuple(edge_ids))


@dataclass(frozen=True)
class ShortestPath(Walk):
    cost: Union[int, float, Fraction] = 0
    reachable: bool = True

    @classmethod
    def unreachable(cls, source: str, target: str) -> "ShortestPath":
        return cls(nodes=(), edges=(), cost=math.inf, reachable=False)


@dataclass
class ShortestPathTree:
    source: str
    dist: Dict[str, Union[int, float]]
    pred: Dict[str, Tuple[str, str]]

    def reaches(self, node_id: str) -> bool:
        return node_id in self.dist

    def walk_to(self, target: str) -> Walk:
        if target not in self.dist:
            raise KeyError(target)
        nodes, edges = [target], []
        while nodes[-1] != self.source:
            prev, edge_id = self.pred[nodes[-1]]
            edges.append(edge_id)
            nodes.append(prev)
        return Walk(tuple(reversed(nodes)), tuple(reversed(edges)))


def shortest_path_tree(
    network: RoadNetwork,
    cost: EdgeCost,
    source: str,
    cutoff: Optional[float] = None,
    targets: Optional[Iterable[str]] = None,
) -> ShortestPathTree:
    """Dijkstra from `source`.

    Only settled nodes appear in the result. With `cutoff`, nodes farther
    than the cutoff are not settled; with `targets`, the search stops once
    all of them are settled. Among equal-cost predecessors the one with the
    smaller (node id, edge id) wins, so paths are reproducible.
    """
    if source not in network.nodes:
        raise KeyError(f"node {source} is not in the network")
    pending = set(targets) if targets is not None else None

    tentative: Dict[str, Union[int, float]] = {source: 0}
    pred: Dict[str, Tuple[str, str]] = {}
    settled: Dict[str, Union[int, float]] = {}
    frontier = [(0, source)]

    while frontier:
        d, node = heapq.heappop(frontier)
        if node in settled or d > tentative[node]:
            continue
        if cutoff is not None and d > cutoff:
            break
        settled[node] = d
        if pending is not None:
            pending.discard(node)
            if not pending:
                break
        for edge, other in network.neighbors(node):
            if other in settled:
                continue
            c = cost(edge)
            if c < 0:
                raise DataError(f"negative cost {c} on edge {edge.edge_id}")
            nd = d + c
            known = tentative.get(other)
            if known is None or nd < known:
                tentative[other] = nd
                pred[other] = (node, edge.edge_id)
                heapq.heappush(frontier, (nd, other))
            elif nd == known and (node, edge.edge_id) < pred[other]:
                pred[other] = (node, edge.edge_id)

    return ShortestPathTree(
        source=source,
        dist=settled,
        pred={n: p for n, p in pred.items() if n in settled},
    )


def shortest_path(network: RoadNetwork, cost: EdgeCost, s: str, t: str) -> ShortestPath:
    """Minimum-cost s-t path, or an unreachable result."""
    if t not in network.nodes:
        raise KeyError(f"node {t} is not in the network")
    if s == t:
        return ShortestPath(nodes=(s,), edges=(), cost=0)
    tree = shortest_path_tree(network, cost, s, targets=[t])
    if not tree.reaches(t):
        return ShortestPath.unreachable(s, t)
    walk = tree.walk_to(t)
    return ShortestPath(nodes=walk.nodes, edges=walk.edges, cost=tree.dist[t])


def path_cost(network: RoadNetwork, cost: EdgeCost, path: Union[Walk, Sequence[str]]):
    """Sum of per-edge costs of a contiguous path."""
    if not isinstance(path, Walk):
        path = Walk.from_edges(network, list(path))
    path.validate(network)
    return sum((cost(network.edges[e]) for e in path.edges), 0)


def lengths_by_type(network: RoadNetwork, edge_ids: Iterable[str]) -> Dict[RoadType, int]:
    """Summed length per road type; repeated edges count once per traversal."""
    totals: Dict[RoadType, int] = defaultdict(int)
    for edge_id in edge_ids:
        edge = network.edges[edge_id]
        totals[edge.road_type] += edge.length
    return dict(totals)


def nearest_node(network: RoadNetwork, lon: float, lat: float, max_distance: float) -> str:
    """Closest node within `max_distance` meters; ties go to the smaller node id."""
    best: Optional[Tuple[float, str]] = None
    for node in network.nodes.values():
        d = haversine((lon, lat), node.coord)
        if d <= max_distance and (best is None or (d, node.node_id) < best):
            best = (d, node.node_id)
    if best is None:
        raise UnsnappableError(f"no node within {max_distance:g} m of ({lon}, {lat})")
    return best[1]
