"""Milestone decomposition of matched paths and inference of the trade-off parameter alpha.

A milestone splits a walk so that every piece is a w_alpha-shortest path
between its endpoints. Fewer milestones at a given alpha mean w_alpha
explains the route better. Costs are compared as integers scaled by the
denominator of alpha, so ties are detected exactly.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from cyclopref.errors import PreferenceError
from cyclopref.network import (
    EdgeClassification,
    RoadNetwork,
    RoadType,
    Walk,
    Weighting,
    as_fraction,
    path_cost,
    shortest_path,
    shortest_path_tree,
)

logger = logging.getLogger(__name__)

HALF = Fraction(1, 2)
ALPHA_FLOOR = Fraction(1, 10)
ALPHA_CEILING = Fraction(9, 10)


@dataclass(frozen=True)
class AlphaGrid:
    values: Tuple[Fraction, ...]

    def __post_init__(self):
        values = tuple(sorted(as_fraction(v) for v in self.values))
        if not values:
            raise ValueError("alpha grid is empty")
        if values[0] < ALPHA_FLOOR or values[-1] > ALPHA_CEILING:
            raise ValueError("alpha grid must stay within [0.1, 0.9]")
        object.__setattr__(self, "values", values)

    @classmethod
    def regular(
        cls,
        alpha_min: Union[float, Fraction] = Fraction(1, 10),
        alpha_max: Union[float, Fraction] = Fraction(9, 10),
        step: Union[float, Fraction] = Fraction(1, 200),
    ) -> "AlphaGrid":
        """Multiples of `step` between `alpha_min` and `alpha_max`, both inclusive."""
        lo, hi, step = as_fraction(alpha_min), as_fraction(alpha_max), as_fraction(step)
        if step <= 0 or lo > hi:
            raise ValueError("alpha grid needs step > 0 and alpha_min <= alpha_max")
        first = -((-lo) // step)  # ceil
        last = hi // step
        return cls(tuple(p * step for p in range(int(first), int(last) + 1)))

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def nearest(self, alpha: Union[float, Fraction]) -> Fraction:
        alpha = as_fraction(alpha)
        return min(self.values, key=lambda a: (abs(a - alpha), a))


# ======= Decomposition =======


@dataclass(frozen=True)
class Decomposition:
    """Milestones of one walk at one alpha.

    `positions` index into the walk's node sequence, so a node visited
    twice can carry two milestones. `atoms` lists positions `i` whose edge
    (node i to node i+1) is not optimal on its own.
    """

    alpha: Fraction
    positions: Tuple[int, ...]
    nodes: Tuple[str, ...]
    atoms: Tuple[int, ...] = ()

    @property
    def milestones(self) -> int:
        return len(self.positions)

    @property
    def subpath_count(self) -> int:
        return len(self.positions) + 1

    def subpaths(self, walk: Walk) -> List[Walk]:
        bounds = [0, *self.positions, len(walk.edges)]
        return [
            Walk(walk.nodes[a : b + 1], walk.edges[a:b]) for a, b in zip(bounds, bounds[1:])
        ]


def min_decomposition(
    network: RoadNetwork,
    classification: EdgeClassification,
    alpha: Union[Fraction, float],
    path: Walk,
) -> Decomposition:
    """Split `path` into the fewest consecutive w_alpha-optimal subpaths.

    Greedy: extend from the current start while the prefix cost equals the
    shortest distance, then cut. A prefix of an optimal subpath is optimal,
    so cutting as late as possible is minimal.
    """
    weighting = Weighting(as_fraction(alpha), classification)
    cost = weighting.scaled_cost
    path.validate(network)
    edge_costs = [cost(network.edges[e]) for e in path.edges]
    n_edges = len(edge_costs)

    positions: List[int] = []
    atoms: List[int] = []
    start = 0
    while start < n_edges:
        remaining = sum(edge_costs[start:])
        tree = shortest_path_tree(network, cost, path.nodes[start], cutoff=remaining)
        prefix = 0
        end = start
        while end < n_edges:
            prefix += edge_costs[end]
            if tree.dist.get(path.nodes[end + 1]) != prefix:
                break
            end += 1
        if end == start:
            logger.debug(
                "edge %s is not optimal at alpha=%s on its own", path.edges[start], weighting.alpha
            )
            atoms.append(start)
            end = start + 1
        if end < n_edges:
            positions.append(end)
        start = end

    return Decomposition(
        alpha=weighting.alpha,
        positions=tuple(positions),
        nodes=tuple(path.nodes[i] for i in positions),
        atoms=tuple(atoms),
    )


def is_optimal_subpath(
    network: RoadNetwork, classification: EdgeClassification, alpha: Union[Fraction, float], walk: Walk
) -> bool:
    """Whether `walk` costs no more than the w_alpha-shortest path between its endpoints."""
    weighting = Weighting(as_fraction(alpha), classification)
    if not walk.edges:
        return True
    best = shortest_path(network, weighting.scaled_cost, walk.source, walk.target)
    return path_cost(network, weighting.scaled_cost, walk) == best.cost


def verify_decomposition(
    network: RoadNetwork, classification: EdgeClassification, path: Walk, decomposition: Decomposition
) -> bool:
    """Check every piece independently; non-optimal atoms must be single edges."""
    for piece, start in zip(
        decomposition.subpaths(path), (0, *decomposition.positions)
    ):
        if start in decomposition.atoms:
            if len(piece.edges) != 1:
                return False
            continue
        if not is_optimal_subpath(network, classification, decomposition.alpha, piece):
            return False
    return True


# ======= Sweeps =======


@dataclass
class AlphaProfile:
    trajectory_id: str
    grid: List[Fraction]
    milestones: List[int]
    atoms: List[int] = field(default_factory=list)
    favored_share: float = 0.0

    @property
    def min_milestones(self) -> int:
        return min(self.milestones)

    @property
    def optimal_alphas(self) -> List[Fraction]:
        best = self.min_milestones
        return [a for a, m in zip(self.grid, self.milestones) if m == best]

    @property
    def alpha_interval(self) -> Tuple[Fraction, Fraction]:
        optimal = self.optimal_alphas
        return optimal[0], optimal[-1]

    def relative(self) -> List[Fraction]:
        """Subpath count per alpha, in percent of the smallest subpath count."""
        base = self.min_milestones + 1
        return [Fraction(100 * (m + 1), base) for m in self.milestones]


def favored_share(network: RoadNetwork, classification: EdgeClassification, path: Walk) -> float:
    total = path.length(network)
    if total == 0:
        return 0.0
    favored = sum(
        network.edges[e].length for e in path.edges if classification.is_favored(network.edges[e])
    )
    return favored / total


def alpha_sweep(
    network: RoadNetwork,
    classification: EdgeClassification,
    path: Walk,
    grid: Optional[AlphaGrid] = None,
    trajectory_id: str = "",
) -> AlphaProfile:
    grid = grid or AlphaGrid.regular()
    decompositions = [min_decomposition(network, classification, a, path) for a in grid]
    return AlphaProfile(
        trajectory_id=trajectory_id,
        grid=list(grid),
        milestones=[d.milestones for d in decompositions],
        atoms=[len(d.atoms) for d in decompositions],
        favored_share=favored_share(network, classification, path),
    )


def sweep_group(
    network: RoadNetwork,
    classification: EdgeClassification,
    paths: Mapping[str, Walk],
    grid: Optional[AlphaGrid] = None,
    threads: int = 1,
) -> List[AlphaProfile]:
    """Sweep every path of a group; profiles come back in trajectory id order."""
    grid = grid or AlphaGrid.regular()
    ids = sorted(paths)

    def sweep(trajectory_id: str) -> AlphaProfile:
        return alpha_sweep(network, classification, paths[trajectory_id], grid, trajectory_id)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            profiles = list(pool.map(sweep, ids))
    else:
        profiles = [sweep(t) for t in ids]

    atoms = sum(1 for p in profiles if any(p.atoms))
    if atoms:
        logger.warning("%d trajectories contain edges that are not optimal on their own", atoms)
    return profiles


class ConsistencyCategory(str, Enum):
    LOW_ONLY = "low_only"
    HIGH_ONLY = "high_only"
    OTHER = "other"


def consistency_category(profile: AlphaProfile) -> ConsistencyCategory:
    optimal = profile.optimal_alphas
    if all(a <= HALF for a in optimal) and any(a < HALF for a in optimal):
        return ConsistencyCategory.LOW_ONLY
    if all(a >= HALF for a in optimal) and any(a > HALF for a in optimal):
        return ConsistencyCategory.HIGH_ONLY
    return ConsistencyCategory.OTHER


# ======= Group aggregation and models =======


@dataclass
class GroupAggregate:
    grid: List[Fraction]
    curve: List[Fraction]
    argmin: Fraction
    distribution: Dict[str, float]
    trajectories: int

    def curve_points(self) -> List[Tuple[Fraction, Fraction]]:
        return list(zip(self.grid, self.curve))


def group_aggregate(profiles: Sequence[AlphaProfile]) -> GroupAggregate:
    """Mean relative subpath count per alpha, its argmin and the category distribution.

    The argmin prefers the alpha closest to 0.5 among equal minima.
    """
    if not profiles:
        raise PreferenceError("cannot aggregate an empty group")
    profiles = sorted(profiles, key=lambda p: p.trajectory_id)
    grid = profiles[0].grid
    if any(p.grid != grid for p in profiles):
        raise ValueError("profiles were swept over different alpha grids")

    n = len(profiles)
    sums = [Fraction(0)] * len(grid)
    for profile in profiles:
        sums = [s + r for s, r in zip(sums, profile.relative())]
    curve = [s / n for s in sums]
    best = min(range(len(grid)), key=lambda i: (curve[i], abs(grid[i] - HALF), grid[i]))

    counts = {c.value: 0 for c in ConsistencyCategory}
    for profile in profiles:
        counts[consistency_category(profile).value] += 1

    return GroupAggregate(
        grid=list(grid),
        curve=curve,
        argmin=grid[best],
        distribution={k: v / n for k, v in counts.items()},
        trajectories=n,
    )


def max_detour_ratio(alpha: Union[Fraction, float]) -> float:
    """Longest favored detour accepted instead of an unfavored direct edge: (1 - alpha) / alpha."""
    alpha = as_fraction(alpha)
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float((1 - alpha) / alpha)


BOUNDARY_NOTE = "classification not outweighing distance"


@dataclass
class GroupPreferenceModel:
    group: str
    favored_types: FrozenSet[RoadType]
    alpha: Fraction
    consistent: bool
    note: str = ""
    distribution: Dict[str, float] = field(default_factory=dict)
    curve: List[Tuple[Fraction, Fraction]] = field(default_factory=list)

    @property
    def classification(self) -> EdgeClassification:
        return EdgeClassification(frozenset(self.favored_types))

    @property
    def weighting(self) -> Weighting:
        return Weighting(self.alpha, self.classification)

    @property
    def max_detour_ratio(self) -> float:
        return max_detour_ratio(self.alpha)

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "favored_types": sorted(self.favored_types),
            "alpha": float(self.alpha),
            "alpha_exact": f"{self.alpha.numerator}/{self.alpha.denominator}",
            "consistent": self.consistent,
            "note": self.note,
            "max_detour_ratio": round(self.max_detour_ratio, 6),
            "distribution": {k: round(v, 6) for k, v in self.distribution.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroupPreferenceModel":
        alpha = Fraction(data["alpha_exact"]) if "alpha_exact" in data else as_fraction(data["alpha"])
        return cls(
            group=data["group"],
            favored_types=frozenset(data.get("favored_types", [])),
            alpha=alpha,
            consistent=bool(data.get("consistent", alpha <= HALF)),
            note=data.get("note", ""),
            distribution=dict(data.get("distribution", {})),
        )


def build_model(group: str, favored_types: Iterable[RoadType], aggregate: GroupAggregate) -> GroupPreferenceModel:
    alpha = aggregate.argmin
    if alpha < HALF:
        note = "favored road types are cheaper per meter"
    elif alpha == HALF:
        note = BOUNDARY_NOTE
    else:
        note = "inconsistent: favored road types weighted above unfavored ones"
        logger.warning("group %s: alpha %s exceeds 0.5", group, float(alpha))
    return GroupPreferenceModel(
        group=group,
        favored_types=frozenset(favored_types),
        alpha=alpha,
        consistent=alpha <= HALF,
        note=note,
        distribution=dict(aggregate.distribution),
        curve=aggregate.curve_points(),
    )
