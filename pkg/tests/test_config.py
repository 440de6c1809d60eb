from fractions import Fraction
from pathlib import Path

import pytest

from cyclopref.config import PipelineConfig, load_config
from cyclopref.errors import UsageError


@pytest.fixture
def config_file(tmp_path):
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "network.geojson").write_text("{}")
    path = tmp_path / "config.toml"
    path.write_text(
        'network = "data/network.geojson"\n'
        'out_dir = "results"\n'
        "\n"
        "[clustering]\n"
        "k = 4\n"
        "seed = 17\n"
        "\n"
        "[inference]\n"
        "alpha_step = 0.01\n"
    )
    return path


class TestDefaults:
    def test_values(self):
        config = PipelineConfig()

        assert config.forbidden_types == ["motorway", "motorway_link", "trunk"]
        assert config.max_snap_distance == 30.0
        assert (config.k, config.restarts, config.seed) == (3, 20, 0)
        assert config.k_sweep == [1, 2, 3, 4, 5, 6]
        assert config.quantile == 0.9
        assert config.out_path == Path("out")

    def test_default_alpha_grid(self):
        grid = PipelineConfig().alpha_grid()

        assert len(grid) == 161
        assert Fraction(7, 20) in grid.values

    def test_parameter_objects(self):
        config = PipelineConfig(max_snap_distance=12.0, buffer_radius=0.0)

        assert config.matching_params().max_snap_distance == 12.0
        assert config.feature_params().buffer_radius == 0.0

    def test_declared_landuse_categories(self):
        config = PipelineConfig(landuse_categories=["Woodland", "settled_land", "woodland"])

        assert config.feature_params().landuse_categories == ("settled_land", "woodland")


class TestOverrides:
    def test_unknown_keys(self):
        with pytest.raises(UsageError, match="colour"):
            PipelineConfig.from_dict({"k": 3, "colour": "red"})

    def test_flags_win_and_none_is_ignored(self):
        config = PipelineConfig(k=4, seed=9).with_overrides(k=5, seed=None)

        assert config.k == 5
        assert config.seed == 9

    def test_round_trip(self):
        config = PipelineConfig(k=5, forbidden_types=["motorway"])
        assert PipelineConfig.from_dict(config.to_dict()) == config


class TestHash:
    def test_stable(self):
        assert PipelineConfig().config_hash() == PipelineConfig().config_hash()
        assert len(PipelineConfig().config_hash()) == 64

    def test_output_location_and_threads_do_not_count(self):
        base = PipelineConfig()
        assert base.config_hash() == base.with_overrides(out_dir="elsewhere", threads=8).config_hash()

    def test_parameters_count(self):
        base = PipelineConfig()
        assert base.config_hash() != base.with_overrides(seed=1).config_hash()
        assert base.config_hash() != base.with_overrides(alpha_step=0.01).config_hash()

    def test_provenance(self):
        config = PipelineConfig(seed=5)
        assert config.provenance == {"config_hash": config.config_hash(), "seed": 5}


class TestLoadConfig:
    def test_sections_are_flattened(self, config_file):
        config = load_config(config_file)

        assert config.k == 4
        assert config.seed == 17
        assert config.alpha_step == 0.01

    def test_relative_paths_resolve_against_the_file(self, config_file, tmp_path, monkeypatch):
        monkeypatch.chdir(Path(tmp_path.anchor))
        config = load_config(config_file)

        assert Path(config.network) == tmp_path / "data" / "network.geojson"
        assert config.out_path == tmp_path / "results"
        config.validate(require=["network"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError, match="no config file"):
            load_config(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("k = = 3\n")
        with pytest.raises(UsageError, match="invalid TOML"):
            load_config(path)

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("clusters = 3\n")
        with pytest.raises(UsageError):
            load_config(path)


class TestValidate:
    def test_missing_required_input(self):
        with pytest.raises(UsageError, match="missing required input 'trajectories'"):
            PipelineConfig().validate(require=["trajectories"])

    def test_missing_input_file(self, tmp_path):
        with pytest.raises(UsageError, match="no such file"):
            PipelineConfig(network=str(tmp_path / "nowhere.geojson")).validate()

    @pytest.mark.parametrize(
        "overrides",
        [
            {"k": 0},
            {"threads": 0},
            {"quantile": 1.0},
            {"max_snap_distance": 0.0},
            {"buffer_radius": -1.0},
            {"alpha_min": 0.05},
            {"alpha_min": 0.6, "alpha_max": 0.4},
        ],
    )
    def test_bad_parameters(self, overrides):
        with pytest.raises(UsageError):
            PipelineConfig(**overrides).validate()

    def test_defaults_are_valid(self):
        PipelineConfig().validate()
