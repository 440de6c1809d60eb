"""Flat-file outputs: CSV, JSON and GeoJSON with provenance, plus text reports.

CSV and text files start with a `# config_hash=... seed=...` line; JSON and
GeoJSON documents carry a `provenance` member. Readers skip the comment line.
"""

import csv
import json
import logging
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

from jinja2 import Environment, PackageLoader, StrictUndefined

from cyclopref.network import RoadNetwork, Walk, Weighting

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_env = Environment(
    loader=PackageLoader("cyclopref", "templates"),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
)


def provenance_line(provenance: Mapping[str, Any]) -> str:
    return f"# config_hash={provenance['config_hash']} seed={provenance['seed']}"


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, Fraction):
        value = float(value)
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(
    path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]], provenance: Mapping[str, Any]
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(provenance_line(provenance) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.debug("wrote %s", path)
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No file found at {path}")
    with open(path, newline="") as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


def write_json(path: PathLike, data: Mapping[str, Any], provenance: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = dict(data)
    document["provenance"] = dict(provenance)
    with open(path, "w") as f:
        json.dump(document, f, indent=2)
        f.write("\n")
    logger.debug("wrote %s", path)
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No file found at {path}")
    with open(path, "r") as f:
        return json.load(f)


def render_report(
    template: str, path: PathLike, provenance: Mapping[str, Any], **context: Any
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = _env.get_template(template).render(provenance=provenance, **context)
    with open(path, "w") as f:
        f.write(text)
    return path


def _edge_feature(network: RoadNetwork, edge_id: str, properties: Dict[str, Any], start: Optional[str] = None) -> dict:
    return {
        "type": "Feature",
        "geometry": {
            "type": "LineString",
            "coordinates": [list(c) for c in network.edge_coords(edge_id, start)],
        },
        "properties": properties,
    }


def write_weighted_network(
    path: PathLike, network: RoadNetwork, weighting: Weighting, group: str, provenance: Mapping[str, Any]
) -> Path:
    """Every edge of the network with its class and w_alpha weight, used or not."""
    features = []
    for edge_id in sorted(network.edges):
        edge = network.edges[edge_id]
        w1, w2 = weighting.component_weights(edge)
        features.append(
            _edge_feature(
                network,
                edge_id,
                {
                    "edge_id": edge_id,
                    "u": edge.u,
                    "v": edge.v,
                    "road_type": edge.road_type,
                    "length_m": edge.length,
                    "class": weighting.classification.label(edge),
                    "w1": w1,
                    "w2": w2,
                    "w_alpha": weighting.edge_weight(edge),
                },
            )
        )
    return write_json(
        path,
        {
            "type": "FeatureCollection",
            "group": group,
            "alpha": float(weighting.alpha),
            "features": features,
        },
        provenance,
    )


def walk_feature(network: RoadNetwork, walk: Walk, properties: Dict[str, Any]) -> dict:
    """A walk as one LineString feature, oriented along the walk."""
    coords: List[List[float]] = []
    for i, edge_id in enumerate(walk.edges):
        part = [list(c) for c in network.edge_coords(edge_id, start=walk.nodes[i])]
        coords.extend(part if not coords else part[1:])
    if not coords and walk.nodes:
        node = network.nodes[walk.nodes[0]]
        coords = [[node.lon, node.lat]]
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": dict(properties, nodes=list(walk.nodes), edges=list(walk.edges)),
    }
