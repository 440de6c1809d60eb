"""End to end on synthetic riders who take exact w_alpha-shortest routes with alpha = 0.35."""

from fractions import Fraction

import numpy as np
import pytest

from cyclopref.decomposition import AlphaGrid, build_model, group_aggregate, sweep_group
from cyclopref.preference import analyze_group, build_classification
from cyclopref.synthetic import grid_network, planted_paths, random_pairs

PLANTED_ALPHA = Fraction(7, 20)
ROAD_TYPES = ("cycleway", "residential")


def planted_group(seed, count=50):
    rng = np.random.default_rng(seed)
    network = grid_network(20, 20, ROAD_TYPES, rng, spacing=100.0, jitter=20.0)
    pairs = random_pairs(network, count, rng, min_distance=800.0)
    paths = planted_paths(network, ["cycleway"], PLANTED_ALPHA, pairs)
    return network, {f"t{i:02d}": path for i, path in enumerate(paths)}


@pytest.fixture(scope="module")
def recovered():
    """Favored types recovered from shares alone, one run per seed."""
    runs = []
    for seed in range(50):
        network, paths = planted_group(seed)
        report = analyze_group(network, "planted", list(paths.values()))
        runs.append((seed, network, paths, report.favored_types))
    return runs


def test_favored_types_are_recovered(recovered):
    hits = sum(1 for *_, favored in recovered if favored == {"cycleway"})
    assert hits >= 45


@pytest.fixture(scope="module")
def inferred(recovered):
    seed, network, paths, favored = next(run for run in recovered if run[3] == {"cycleway"})
    classification = build_classification(network, favored)
    grid = AlphaGrid.regular()
    profiles = sweep_group(network, classification, paths, grid)
    return grid, profiles, build_model("planted", favored, group_aggregate(profiles))


def test_planted_alpha_is_optimal_for_every_route(inferred):
    grid, profiles, _ = inferred
    nearest = grid.nearest(PLANTED_ALPHA)

    assert nearest == PLANTED_ALPHA
    assert len(profiles) == 50
    for profile in profiles:
        assert profile.min_milestones == 0
        assert nearest in profile.optimal_alphas


def test_group_alpha_is_close_to_planted(inferred):
    _, _, model = inferred

    assert abs(model.alpha - PLANTED_ALPHA) <= Fraction(1, 50)
    assert model.consistent
    assert model.favored_types == {"cycleway"}
