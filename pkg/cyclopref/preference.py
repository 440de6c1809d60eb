"""Road-type shares of actual routes against shortest references, and the favored/unfavored split."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from cyclopref.errors import PreferenceError
from cyclopref.network import (
    EdgeClassification,
    RoadNetwork,
    RoadType,
    ShortestPath,
    Walk,
    geometric_cost,
    lengths_by_type,
    shortest_path,
)

logger = logging.getLogger(__name__)

Share = Union[float, Fraction]


def reference_paths(network: RoadNetwork, paths: Sequence[Walk], threads: int = 1) -> List[ShortestPath]:
    """Geometric shortest path between the matched endpoints of every walk.

    A walk that ends where it started gets an empty reference path.
    """

    def reference(walk: Walk) -> ShortestPath:
        if not walk.nodes:
            raise PreferenceError("empty matched path")
        if walk.source == walk.target:
            return ShortestPath(nodes=(walk.source,), edges=(), cost=0)
        path = shortest_path(network, geometric_cost, walk.source, walk.target)
        if not path.reachable:
            raise PreferenceError(f"no path between {walk.source} and {walk.target}")
        return path

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(reference, paths))
    return [reference(walk) for walk in paths]


def shares_from_lengths(lengths: Mapping[RoadType, int]) -> Dict[RoadType, Fraction]:
    total = sum(lengths.values())
    if total <= 0:
        raise PreferenceError("no data for group")
    return {t: Fraction(length, total) for t, length in sorted(lengths.items())}


def _total_lengths(network: RoadNetwork, paths: Iterable[Walk]) -> Dict[RoadType, int]:
    totals: Dict[RoadType, int] = {}
    for path in paths:
        for road_type, length in lengths_by_type(network, path.edges).items():
            totals[road_type] = totals.get(road_type, 0) + length
    return totals


def type_shares(paths: Sequence[Walk], network: RoadNetwork) -> Dict[RoadType, float]:
    """Share of each road type in the summed length of `paths`."""
    if not paths:
        raise PreferenceError("no data for group")
    return {t: float(s) for t, s in shares_from_lengths(_total_lengths(network, paths)).items()}


def classify_types(
    r_user: Mapping[RoadType, Share],
    r_shortest: Mapping[RoadType, Share],
    road_types: Optional[Iterable[RoadType]] = None,
) -> Tuple[Set[RoadType], Set[RoadType]]:
    """Split road types into (favored, unfavored).

    A type is favored when its share among the actual routes is at least its
    share among the shortest references. Types with no length in either are
    unfavored.
    """
    universe = set(r_user) | set(r_shortest) | set(road_types or ())
    favored, unfavored = set(), set()
    for road_type in sorted(universe):
        user = r_user.get(road_type, 0)
        reference = r_shortest.get(road_type, 0)
        if user == 0 and reference == 0:
            unfavored.add(road_type)
        elif user >= reference:
            favored.add(road_type)
        else:
            unfavored.add(road_type)
    return favored, unfavored


def build_classification(network: RoadNetwork, favored_types: Iterable[RoadType]) -> EdgeClassification:
    classification = EdgeClassification(frozenset(favored_types))
    plus, minus = classification.partition(network)
    logger.debug("classification: %d favored edges, %d unfavored edges", len(plus), len(minus))
    return classification


@dataclass
class TypeShareReport:
    group: str
    r_user: Dict[RoadType, float]
    r_shortest: Dict[RoadType, float]
    user_length: int
    shortest_length: int
    trajectories: int
    excluded_circular: int = 0
    favored_types: FrozenSet[RoadType] = field(default_factory=frozenset)
    unfavored_types: FrozenSet[RoadType] = field(default_factory=frozenset)
    unobserved_types: FrozenSet[RoadType] = field(default_factory=frozenset)

    def rows(self) -> List[Tuple[RoadType, float, float, str]]:
        """(road_type, r_user, r_shortest, classification) for every classified type."""
        out = []
        for road_type in sorted(self.favored_types | self.unfavored_types):
            verdict = "favored" if road_type in self.favored_types else "unfavored"
            out.append(
                (
                    road_type,
                    self.r_user.get(road_type, 0.0),
                    self.r_shortest.get(road_type, 0.0),
                    verdict,
                )
            )
        return out

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "favored_types": sorted(self.favored_types),
            "unfavored_types": sorted(self.unfavored_types),
            "unobserved_types": sorted(self.unobserved_types),
            "excluded_circular_count": self.excluded_circular,
            "trajectories": self.trajectories,
            "user_length_m": self.user_length,
            "shortest_length_m": self.shortest_length,
        }


def analyze_group(
    network: RoadNetwork,
    group: str,
    paths: Sequence[Walk],
    threads: int = 1,
) -> TypeShareReport:
    """Shares, references and the favored/unfavored split for one group of riders.

    Round trips count toward the actual-route shares only.
    """
    if not paths:
        raise PreferenceError(f"group {group} has no trajectories")
    references = reference_paths(network, paths, threads)
    excluded = sum(1 for ref in references if not ref.edges)
    if excluded:
        logger.info("group %s: %d round trips left out of the shortest-path shares", group, excluded)

    user_lengths = _total_lengths(network, paths)
    shortest_lengths = _total_lengths(network, references)
    r_user = shares_from_lengths(user_lengths)
    r_shortest = shares_from_lengths(shortest_lengths) if shortest_lengths else {}

    favored, unfavored = classify_types(r_user, r_shortest, network.road_types)
    unobserved = {t for t in unfavored if t not in user_lengths and t not in shortest_lengths}
    if unobserved:
        logger.warning(
            "group %s: road types never observed classified unfavored: %s",
            group,
            ", ".join(sorted(unobserved)),
        )

    return TypeShareReport(
        group=group,
        r_user={t: float(s) for t, s in r_user.items()},
        r_shortest={t: float(s) for t, s in r_shortest.items()},
        user_length=sum(user_lengths.values()),
        shortest_length=sum(shortest_lengths.values()),
        trajectories=len(paths),
        excluded_circular=excluded,
        favored_types=frozenset(favored),
        unfavored_types=frozenset(unfavored),
        unobserved_types=frozenset(unobserved),
    )
