from fractions import Fraction

import numpy as np
import pytest

from cyclopref.clustering import ContingencyTable
from cyclopref.decomposition import GroupPreferenceModel
from cyclopref.network import Walk
from cyclopref.reports import (
    format_value,
    provenance_line,
    read_csv,
    read_json,
    render_report,
    walk_feature,
    write_csv,
    write_json,
    write_weighted_network,
)

PROVENANCE = {"config_hash": "ab12", "seed": 3}


class TestValues:
    @pytest.mark.parametrize(
        "value, expected",
        [
            (None, ""),
            (True, "1"),
            (False, "0"),
            (Fraction(7, 20), "0.35"),
            (0.1 + 0.2, "0.3"),
            (120, "120"),
            ("cycleway", "cycleway"),
        ],
    )
    def test_format_value(self, value, expected):
        assert format_value(value) == expected

    def test_provenance_line(self):
        assert provenance_line(PROVENANCE) == "# config_hash=ab12 seed=3"


class TestFiles:
    def test_csv_starts_with_provenance(self, tmp_path):
        path = write_csv(tmp_path / "sub" / "t.csv", ["id", "share"], [("a", 0.5), ("b", None)], PROVENANCE)

        lines = path.read_text().splitlines()
        assert lines[0] == "# config_hash=ab12 seed=3"
        assert lines[1] == "id,share"
        assert read_csv(path) == [{"id": "a", "share": "0.5"}, {"id": "b", "share": ""}]

    def test_json_carries_provenance(self, tmp_path):
        path = write_json(tmp_path / "x.json", {"alpha": 0.35}, PROVENANCE)

        data = read_json(path)
        assert data["alpha"] == 0.35
        assert data["provenance"] == PROVENANCE

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_csv(tmp_path / "none.csv")
        with pytest.raises(FileNotFoundError):
            read_json(tmp_path / "none.json")


class TestReports:
    def test_contingency_report(self, tmp_path):
        table = ContingencyTable.from_counts(
            np.array([[125, 20, 39], [10, 135, 47], [17, 63, 141]]).T,
            ["mountainbiking", "racingbiking", "biking"],
        )
        path = render_report(
            "contingency.txt.j2",
            tmp_path / "contingency.txt",
            PROVENANCE,
            table=table,
            recall=table.recall(),
            precision=table.precision(),
            selected_agreement=0.9,
            difference=None,
        )
        text = path.read_text()

        assert text.startswith("# config_hash=ab12 seed=3\n")
        assert "Agreement: 0.672 over 597" in text
        assert "( 82%)" in text
        assert "90.0% of trajectories" in text
        assert "Mean absolute difference" not in text

    def test_contingency_report_names_shared_labels(self, tmp_path):
        table = ContingencyTable.from_counts([[5, 4], [1, 0], [0, 3]], ["biking", "mountainbiking", "racingbiking"])
        path = render_report(
            "contingency.txt.j2",
            tmp_path / "contingency.txt",
            PROVENANCE,
            table=table,
            recall=table.recall(),
            precision=table.precision(),
            selected_agreement=None,
            difference=None,
        )
        text = path.read_text()

        assert "Cluster mapping: majority" in text
        assert "Clusters 0, 1 all map to biking; each stays a separate group (biking_0, biking_1)" in text

    def test_model_report(self, tmp_path):
        model = GroupPreferenceModel(
            "biking",
            frozenset({"cycleway"}),
            Fraction(7, 20),
            True,
            note="favored road types are cheaper per meter",
            distribution={"low_only": 0.75, "high_only": 0.0, "other": 0.25},
        )
        rows = [
            {"road_type": "cycleway", "r_user": "0.8", "r_shortest": "0.2", "classification": "favored"},
            {"road_type": "residential", "r_user": "0.2", "r_shortest": "0.8", "classification": "unfavored"},
        ]
        path = render_report(
            "model.txt.j2",
            tmp_path / "model.txt",
            PROVENANCE,
            model=model,
            preference={"trajectories": 4, "excluded_circular_count": 1},
            rows=rows,
        )
        text = path.read_text()

        assert "alpha = 0.350 (7/20)" in text
        assert "Consistent: alpha <= 0.5" in text
        assert "1.857 times" in text
        assert "low only 75.0%" in text


class TestGeoJSON:
    def test_weighted_network_lists_every_edge(self, tmp_path, triangle):
        model = GroupPreferenceModel("biking", frozenset({"cycleway"}), Fraction(3, 10), True)
        path = write_weighted_network(tmp_path / "w.geojson", triangle, model.weighting, "biking", PROVENANCE)

        data = read_json(path)
        by_id = {f["properties"]["edge_id"]: f["properties"] for f in data["features"]}
        assert sorted(by_id) == ["ab", "ac", "cb"]
        assert by_id["ac"]["class"] == "favored"
        assert by_id["ac"]["w_alpha"] == pytest.approx(18.0)
        assert by_id["ab"]["w_alpha"] == pytest.approx(70.0)
        assert data["alpha"] == 0.3
        assert data["provenance"] == PROVENANCE

    def test_walk_feature_follows_the_walk(self, triangle):
        feature = walk_feature(triangle, Walk(("B", "C", "A"), ("cb", "ac")), {"group": "g"})

        coords = feature["geometry"]["coordinates"]
        assert coords[0] == list(triangle.nodes["B"].coord)
        assert coords[-1] == list(triangle.nodes["A"].coord)
        assert len(coords) == 3
        assert feature["properties"]["edges"] == ["cb", "ac"]

    def test_empty_walk_is_a_point(self, triangle):
        feature = walk_feature(triangle, Walk(("A",), ()), {})
        assert feature["geometry"]["coordinates"] == [[7.0, 50.0]]
