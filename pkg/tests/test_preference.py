import logging

import pytest

from cyclopref.errors import PreferenceError
from cyclopref.network import Walk
from cyclopref.preference import (
    analyze_group,
    build_classification,
    classify_types,
    reference_paths,
    shares_from_lengths,
    type_shares,
)


class TestShares:
    def test_shares_of_detour(self, triangle, detour_walk):
        assert type_shares([detour_walk], triangle) == {"cycleway": 1.0}

    def test_shares_of_references(self, triangle, detour_walk):
        (reference,) = reference_paths(triangle, [detour_walk])
        assert reference.edges == ("ab",)
        assert type_shares([reference], triangle) == {"residential": 1.0}

    def test_shares_sum_to_one(self, rng):
        types = ["cycleway", "residential", "secondary", "track_grade5", "path"]
        for _ in range(1000):
            lengths = {t: int(rng.integers(0, 10_000)) for t in types[: int(rng.integers(1, 6))]}
            if sum(lengths.values()) == 0:
                continue
            shares = shares_from_lengths(lengths)
            assert sum(shares.values()) == 1
            assert abs(sum(float(s) for s in shares.values()) - 1) <= 1e-9

    def test_empty_group(self, triangle):
        with pytest.raises(PreferenceError, match="no data for group"):
            type_shares([], triangle)

    def test_round_trip_gets_an_empty_reference(self, triangle):
        loop = Walk(("A", "C", "B", "A"), ("ac", "cb", "ab"))
        (reference,) = reference_paths(triangle, [loop])
        assert reference.edges == ()
        assert reference.cost == 0


class TestClassification:
    def test_triangle_split(self):
        favored, unfavored = classify_types({"cycleway": 1.0}, {"residential": 1.0})

        assert favored == {"cycleway"}
        assert unfavored == {"residential"}

    def test_equal_shares_are_favored(self):
        favored, unfavored = classify_types({"a": 0.5, "b": 0.5}, {"a": 0.5, "b": 0.5})
        assert favored == {"a", "b"}
        assert unfavored == set()

    def test_unobserved_types_are_unfavored(self):
        favored, unfavored = classify_types({"a": 1.0}, {"a": 1.0}, road_types=["a", "z"])
        assert favored == {"a"}
        assert unfavored == {"z"}

    def test_invariant_under_scaling_lengths(self, rng):
        types = ["cycleway", "residential", "secondary", "track_grade2"]
        for _ in range(1000):
            user = {t: int(rng.integers(0, 500)) for t in types}
            shortest = {t: int(rng.integers(0, 500)) for t in types}
            if not sum(user.values()) or not sum(shortest.values()):
                continue
            factor = int(rng.integers(2, 1000))
            base = classify_types(shares_from_lengths(user), shares_from_lengths(shortest))
            scaled = classify_types(
                shares_from_lengths({t: v * factor for t, v in user.items()}),
                shares_from_lengths({t: v * factor for t, v in shortest.items()}),
            )
            assert base == scaled

    def test_partition_of_triangle(self, triangle):
        classification = build_classification(triangle, ["Cycleway"])
        favored, unfavored = classification.partition(triangle)

        assert favored == {"ac", "cb"}
        assert unfavored == {"ab"}


class TestGroupAnalysis:
    def test_detour_group(self, triangle, detour_walk):
        report = analyze_group(triangle, "biking", [detour_walk])

        assert report.favored_types == {"cycleway"}
        assert report.unfavored_types == {"residential"}
        assert report.user_length == 120
        assert report.shortest_length == 100
        assert report.rows() == [
            ("cycleway", 1.0, 0.0, "favored"),
            ("residential", 0.0, 1.0, "unfavored"),
        ]

    def test_round_trips_only_count_for_actual_routes(self, triangle, detour_walk):
        loop = Walk(("A", "C", "B", "A"), ("ac", "cb", "ab"))
        report = analyze_group(triangle, "g", [detour_walk, loop])

        assert report.excluded_circular == 1
        assert report.user_length == 340
        assert report.shortest_length == 100
        assert report.to_dict()["excluded_circular_count"] == 1

    def test_unobserved_types_are_logged(self, triangle_csv, caplog):
        from cyclopref.network import load_network

        edges, nodes = triangle_csv
        with open(nodes, "a") as f:
            f.write("D,7.0021,50.0\n")
        with open(edges, "a") as f:
            f.write("bd,B,D,50,track_grade5\n")
        network = load_network(edges, nodes_source=nodes)

        with caplog.at_level(logging.WARNING):
            report = analyze_group(network, "g", [Walk(("A", "C", "B"), ("ac", "cb"))])
        assert report.unobserved_types == {"track_grade5"}
        assert "never observed" in caplog.text

    def test_geometric_shortest_routes_favor_everything(self, triangle):
        report = analyze_group(triangle, "g", [Walk(("A", "B"), ("ab",)), Walk(("A", "C"), ("ac",))])
        assert report.favored_types == {"residential", "cycleway"}

    def test_empty_group(self, triangle):
        with pytest.raises(PreferenceError):
            analyze_group(triangle, "g", [])

    def test_threads_do_not_change_the_report(self, triangle, detour_walk):
        back = Walk(("B", "C", "A"), ("cb", "ac"))
        single = analyze_group(triangle, "g", [detour_walk, back], threads=1)
        pooled = analyze_group(triangle, "g", [detour_walk, back], threads=4)
        assert single == pooled
