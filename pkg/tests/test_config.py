"""Tests for configuration loading, overrides and validation."""

import pytest
import yaml

from cav.voi.config import (
    EFFECTIVE_CONFIG_NAME,
    apply_overrides,
    build_config,
    check,
    load_config,
    parse_override,
    validate,
    write_effective_config,
)
from cav.voi.data.params import ExperimentConfig
from cav.voi.exceptions import ConfigError


class TestParseOverride:
    """section.key=value parsing."""

    def test_typed_values(self):
        assert parse_override("network.dt=0.02") == (["network", "dt"], 0.02)
        assert parse_override("seed=7") == (["seed"], 7)
        assert parse_override("grid.u=[-1, 1]") == (["grid", "u"], [-1, 1])
        assert parse_override("trajectory_path=") == (["trajectory_path"], None)

    @pytest.mark.parametrize("item", ["seed", "=3", "network..dt=1"])
    def test_malformed(self, item):
        with pytest.raises(ConfigError):
            parse_override(item)


class TestOverrides:
    """Applying --set items."""

    def test_records_applied_items(self):
        config = apply_overrides(ExperimentConfig(), ["network.kappa2=2.5", "seed=4"])
        assert config.network.kappa2 == 2.5
        assert config.seed == 4
        assert config.overrides == {"network.kappa2": 2.5, "seed": 4}

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["network.bandwidth=1"])
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["radio.B=1"])
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["colour=red"])

    def test_whole_section_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["network=1"])

    def test_too_deep(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["network.dt.x=1"])

    def test_precedence(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 1\nepisodes: 5\n")
        config = build_config(str(path), seed=2, overrides=["seed=3"])
        assert config.seed == 3
        assert config.episodes == 5
        assert build_config(str(path), seed=2).seed == 2


class TestValidate:
    """Schema and cross-field checks."""

    def test_defaults_are_valid(self):
        report = validate(ExperimentConfig())
        assert report.valid, report.violations
        assert report.to_dict() == {"valid": True, "violations": []}

    def test_interval_mismatch(self):
        report = validate(apply_overrides(ExperimentConfig(), ["network.dt=0.02"]))
        assert not report.valid
        assert any("dt*T_slots" in v for v in report.violations)

    @pytest.mark.parametrize("seed", [-1, True, 1.5])
    def test_bad_seed(self, seed):
        report = validate(ExperimentConfig(seed=seed))
        assert any(v.startswith("seed:") for v in report.violations)

    def test_several_violations_reported(self):
        report = validate(ExperimentConfig(scenario="nope", episodes=1, gamma=1.0))
        keys = {v.split(":")[0] for v in report.violations}
        assert {"scenario", "episodes", "gamma"} <= keys

    def test_missing_trajectory_file(self, tmp_path):
        report = validate(ExperimentConfig(trajectory_path=str(tmp_path / "none.csv")))
        assert any(v.startswith("trajectory_path") for v in report.violations)

    def test_check_raises_with_violations(self):
        with pytest.raises(ConfigError) as info:
            check(ExperimentConfig(episodes=0))
        assert info.value.violations


class TestLoad:
    """YAML files."""

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.yaml"))

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: [1, 2\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config(str(path)) == ExperimentConfig()

    def test_effective_config_round_trip(self, tmp_path):
        config = apply_overrides(ExperimentConfig(out_dir=str(tmp_path)),
                                 ["network.kappa1=2e-6", "comm.runs=3"])
        path = write_effective_config(config)
        assert path.endswith(EFFECTIVE_CONFIG_NAME)
        with open(path, encoding="utf-8") as f:
            assert yaml.safe_load(f)["network"]["kappa1"] == 2e-6
        loaded = load_config(path)
        assert loaded.network == config.network
        assert loaded.comm == config.comm
        assert loaded.overrides == config.overrides
