"""Tests for configuration templates, overrides and validation"""

from pathlib import Path

import pytest

from gdfm_vol.config import ConfigManager
from gdfm_vol.errors import ConfigError
from gdfm_vol.panel_io import Panel, PipelineConfig, read_json


@pytest.fixture
def manager(configs_dir: Path) -> ConfigManager:
    return ConfigManager(configs_dir)


def test_templates_are_discovered(manager: ConfigManager) -> None:
    names = set(manager.get_available_templates())
    assert {"empirical", "smoke", "sim_q1Q1", "sim_q2Q3", "sim_q3Q2"} <= names
    kinds = {row["name"]: row["kind"] for row in manager.describe_templates()}
    assert kinds["empirical"] == "pipeline"
    assert kinds["smoke"] == "simulation"


def test_missing_config_dir_gives_no_templates(tmp_path: Path) -> None:
    assert ConfigManager(tmp_path / "absent").get_available_templates() == []


def test_load_sources(manager: ConfigManager, config_file: Path) -> None:
    assert manager.load(None) == {}
    assert manager.load(config_file)["q"] == 1

    smoke = manager.load("smoke")
    smoke["dgp"]["n"] = 999
    assert manager.load("smoke")["dgp"]["n"] == 20

    with pytest.raises(ConfigError, match="neither a file nor a known template"):
        manager.load("no_such_template")
    with pytest.raises(ConfigError, match="not found"):
        manager.load("missing.json")


def test_pipeline_config_with_overrides(manager: ConfigManager) -> None:
    data = manager.load("empirical")
    config = manager.pipeline_config(data)
    assert (config.q, config.M_T, config.kappa_T) == (1, 17, 0.25)
    assert config.windows == [126, 252, 504, None]

    overridden = manager.pipeline_config(data, {"M_T": 10, "q": None})
    assert overridden.M_T == 10
    assert overridden.q == 1


def test_invalid_pipeline_config_is_reported(manager: ConfigManager) -> None:
    with pytest.raises(ConfigError, match="q"):
        manager.pipeline_config({"q": 0})
    with pytest.raises(ConfigError, match="alphas"):
        manager.pipeline_config({"alphas": [1.5]})
    with pytest.raises(ConfigError):
        manager.pipeline_config({"unexpected": 1})


def test_simulation_config(manager: ConfigManager) -> None:
    dgp, pipeline, coverage, metrics = manager.simulation_config(manager.load("sim_q2Q3"), {"n": 50, "M_T": 5})
    assert (dgp.n, dgp.q, dgp.Q) == (50, 2, 3)
    assert (pipeline.q, pipeline.Q, pipeline.M_T) == (2, 3, 5)
    assert coverage == {"eval_points": 100, "window": None}
    assert metrics == ["coverage"]


def test_simulation_config_defaults_and_errors(manager: ConfigManager) -> None:
    dgp, pipeline, coverage, metrics = manager.simulation_config({"dgp": {"n": 10, "T": 100, "q": 2}})
    assert pipeline.q == dgp.q == 2
    assert coverage["eval_points"] == 100
    assert metrics == ["errors"]

    with pytest.raises(ConfigError, match="'dgp' section"):
        manager.simulation_config({"pipeline": {}})
    with pytest.raises(ConfigError, match="Invalid dgp"):
        manager.simulation_config({"dgp": {"n": 1}})


def test_create_configuration(manager: ConfigManager, tmp_path: Path) -> None:
    out = tmp_path / "custom.json"
    data = manager.create_configuration("empirical", {"kappa_T": 0.1}, out)
    assert data["pipeline"]["kappa_T"] == 0.1
    assert read_json(out) == data

    simulation = manager.create_configuration("smoke", {"n_perm": 3})
    assert simulation["pipeline"]["n_perm"] == 3
    assert simulation["dgp"]["n"] == 20

    with pytest.raises(ConfigError, match="not found"):
        manager.create_configuration("nope", {})


def test_validate_for_panel(manager: ConfigManager, small_panel: Panel, small_config: PipelineConfig) -> None:
    assert manager.validate_for_panel(small_config, small_panel)
    assert not manager.validate_for_panel(PipelineConfig(M_T=20), small_panel)
    with pytest.raises(ConfigError, match="smaller than n"):
        manager.validate_for_panel(PipelineConfig(q=small_panel.n), small_panel)
    with pytest.raises(ConfigError, match="smaller than T"):
        manager.validate_for_panel(PipelineConfig(B_T=small_panel.T), small_panel)
