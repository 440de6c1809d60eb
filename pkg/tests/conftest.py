# tests/conftest.py
import sys
import os
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest

# Add the parent directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from cyclopref.network import (  # noqa: E402
    EdgeClassification,
    NetworkNode,
    RoadEdge,
    RoadNetwork,
    Walk,
    Weighting,
)

# Triangle: A-B is a 100 m residential street, A-C and C-B are 60 m cycleways.
TRIANGLE_NODES = {
    "A": (7.0000, 50.0000),
    "B": (7.0014, 50.0000),
    "C": (7.0007, 50.0004),
}


@pytest.fixture
def triangle():
    nodes = [NetworkNode(n, lon, lat) for n, (lon, lat) in TRIANGLE_NODES.items()]
    edges = [
        RoadEdge("ab", "A", "B", 100, "residential"),
        RoadEdge("ac", "A", "C", 60, "cycleway"),
        RoadEdge("cb", "C", "B", 60, "cycleway"),
    ]
    return RoadNetwork(nodes, edges)


@pytest.fixture
def cycleways():
    return EdgeClassification(frozenset({"cycleway"}))


@pytest.fixture
def detour_walk():
    return Walk(("A", "C", "B"), ("ac", "cb"))


@pytest.fixture
def triangle_csv(tmp_path):
    """The triangle as a CSV edge list plus node file."""
    nodes = tmp_path / "nodes.csv"
    nodes.write_text(
        "node_id,lon,lat\n"
        + "".join(f"{n},{lon},{lat}\n" for n, (lon, lat) in TRIANGLE_NODES.items())
    )
    edges = tmp_path / "edges.csv"
    edges.write_text(
        "edge_id,from_node,to_node,length_m,road_type\n"
        "ab,A,B,100,residential\n"
        "ac,A,C,60,cycleway\n"
        "cb,C,B,60,cycleway\n"
    )
    return edges, nodes


def make_random_graph(rng, max_nodes=12, max_edges=25, types=("cycleway", "residential")):
    """Connected random graph without parallel edges; integer lengths 1-100."""
    n = int(rng.integers(3, max_nodes + 1))
    ids = [f"n{i:02d}" for i in range(n)]
    pairs = set()
    for i in range(1, n):
        j = int(rng.integers(i))
        pairs.add((ids[j], ids[i]))
    all_pairs = [(ids[i], ids[j]) for i in range(n) for j in range(i + 1, n)]
    target = min(max_edges, len(all_pairs))
    extra = int(rng.integers(len(pairs), target + 1))
    for idx in rng.permutation(len(all_pairs)):
        if len(pairs) >= extra:
            break
        pairs.add(all_pairs[int(idx)])
    nodes = [NetworkNode(i, 7.0 + k * 1e-3, 50.0) for k, i in enumerate(ids)]
    edges = [
        RoadEdge(f"e{k:02d}", u, v, int(rng.integers(1, 101)), str(rng.choice(types)))
        for k, (u, v) in enumerate(sorted(pairs))
    ]
    return RoadNetwork(nodes, edges)


def make_random_walk(rng, network, max_edges=10):
    node = str(rng.choice(sorted(network.nodes)))
    nodes, edges = [node], []
    for _ in range(int(rng.integers(1, max_edges + 1))):
        incident = network.incident(nodes[-1])
        edge_id = incident[int(rng.integers(len(incident)))]
        edges.append(edge_id)
        nodes.append(network.edges[edge_id].other(nodes[-1]))
    return Walk(tuple(nodes), tuple(edges))


def to_networkx(network, cost):
    graph = nx.Graph()
    graph.add_nodes_from(network.nodes)
    for edge in network.edges.values():
        graph.add_edge(edge.u, edge.v, cost=cost(edge), edge_id=edge.edge_id)
    return graph


def brute_force_cost(network, cost, s, t):
    """Cheapest simple s-t path by exhaustive enumeration."""
    if s == t:
        return 0
    graph = to_networkx(network, cost)
    best = None
    for path in nx.all_simple_paths(graph, s, t):
        total = sum(graph[a][b]["cost"] for a, b in zip(path, path[1:]))
        if best is None or total < best:
            best = total
    return best


def dp_min_subpaths(network, classification, alpha, walk):
    """Minimum number of consecutive optimal pieces by dynamic programming.

    Single edges are always allowed as pieces.
    """
    weighting = Weighting(Fraction(alpha), classification)
    graph = to_networkx(network, weighting.scaled_cost)
    costs = [weighting.scaled_cost(network.edges[e]) for e in walk.edges]
    n = len(costs)
    best = [0] + [None] * n
    for j in range(1, n + 1):
        for i in range(j):
            if best[i] is None:
                continue
            piece = sum(costs[i:j])
            optimal = j - i == 1 or piece == nx.shortest_path_length(
                graph, walk.nodes[i], walk.nodes[j], weight="cost"
            )
            if optimal and (best[j] is None or best[i] + 1 < best[j]):
                best[j] = best[i] + 1
    return best[n]


@pytest.fixture
def random_graph():
    return make_random_graph


@pytest.fixture
def random_walk():
    return make_random_walk


@pytest.fixture
def oracle_cost():
    return brute_force_cost


@pytest.fixture
def dp_oracle():
    return dp_min_subpaths


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
