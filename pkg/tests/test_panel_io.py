"""Tests for panel ingestion, centering and pipeline configuration"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from gdfm_vol.errors import ConfigError, EstimationError, PanelFormatError
from gdfm_vol.panel_io import (
    OutputFormat,
    Panel,
    PipelineConfig,
    center,
    load_panel,
    read_json,
    save_panel,
    write_frame,
)


def write_csv(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "input.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_load_panel_shape(tmp_path: Path) -> None:
    """A 3-column, 5-row CSV becomes a 3×5 panel with the header as labels"""
    rows = "\n".join(f"{t},{t + 0.5},{-t}" for t in range(5))
    panel = load_panel(write_csv(tmp_path, f"a,b,c\n{rows}\n"))
    assert (panel.n, panel.T) == (3, 5)
    assert panel.labels == ("a", "b", "c")
    np.testing.assert_array_equal(panel.values[1], [0.5, 1.5, 2.5, 3.5, 4.5])


def test_missing_cell_names_location(tmp_path: Path) -> None:
    path = write_csv(tmp_path, "a,b\n1,2\n3,NA\n")
    with pytest.raises(PanelFormatError, match=r"row 2, column 'b'"):
        load_panel(path)


def test_non_numeric_cell_rejected(tmp_path: Path) -> None:
    path = write_csv(tmp_path, "a,b\n1,x\n")
    with pytest.raises(PanelFormatError, match="Non-numeric"):
        load_panel(path)


def test_ragged_rows_rejected(tmp_path: Path) -> None:
    path = write_csv(tmp_path, "a,b\n1,2\n3,4,5,6\n")
    with pytest.raises(PanelFormatError, match="Ragged"):
        load_panel(path)


def test_missing_and_empty_files(tmp_path: Path) -> None:
    with pytest.raises(PanelFormatError, match="not found"):
        load_panel(tmp_path / "nope.csv")
    with pytest.raises(PanelFormatError):
        load_panel(write_csv(tmp_path, ""))


def test_unsupported_format(tmp_path: Path) -> None:
    with pytest.raises(PanelFormatError, match="Unsupported"):
        load_panel(write_csv(tmp_path, "a\n1\n"), fmt="parquet")


def test_saved_panel_reloads_exactly(tmp_path: Path, small_panel: Panel) -> None:
    reloaded = load_panel(save_panel(small_panel, tmp_path / "out" / "panel.csv"))
    assert reloaded.labels == small_panel.labels
    np.testing.assert_array_equal(reloaded.values, small_panel.values)


def test_panel_is_read_only_and_validates_labels() -> None:
    panel = Panel(np.ones((2, 3)))
    assert panel.labels == ("s0", "s1")
    with pytest.raises(ValueError):
        panel.values[0, 0] = 5.0
    with pytest.raises(PanelFormatError):
        Panel(np.ones((2, 3)), ("only-one",))
    with pytest.raises(PanelFormatError, match="Non-finite"):
        Panel(np.array([[1.0, np.nan]]))


def test_small_panels_load_but_are_not_estimable() -> None:
    panel = Panel(np.array([[1.0]]))
    assert (panel.n, panel.T) == (1, 1)
    with pytest.raises(EstimationError, match="too small"):
        panel.require_estimable()


def test_head_bounds() -> None:
    panel = Panel(np.arange(10.0).reshape(2, 5))
    np.testing.assert_array_equal(panel.head(2).values, [[0, 1], [5, 6]])
    with pytest.raises(PanelFormatError):
        panel.head(6)


def test_center_rows() -> None:
    panel = Panel(np.array([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]]))
    centered, means = center(panel)
    np.testing.assert_allclose(centered.values, [[-1, 0, 1], [0, 0, 0]])
    np.testing.assert_allclose(means, [2.0, 4.0])


def test_center_leaves_centered_rows_alone() -> None:
    values = np.array([[-1.0, 0.5, 0.5]])
    centered, means = center(Panel(values))
    np.testing.assert_allclose(centered.values, values, atol=1e-12)
    assert abs(means[0]) < 1e-12


def test_config_defaults() -> None:
    config = PipelineConfig()
    assert (config.B_T, config.M_T, config.kappa_T) == (2, 17, 0.25)
    assert (config.k1_bar, config.k2_bar, config.k1_star, config.k2_star) == (20, 20, 100, 100)
    assert config.n_perm == 10
    assert config.windows == [126, 252, 504, None]


def test_config_rejects_bad_values() -> None:
    with pytest.raises(ValueError):
        PipelineConfig(q=0)
    with pytest.raises(ValueError):
        PipelineConfig(alphas=[1.5])
    with pytest.raises(ValueError):
        PipelineConfig(windows=[0])
    with pytest.raises(ValueError):
        PipelineConfig(unknown=1)


def test_validate_for_sample() -> None:
    assert PipelineConfig(B_T=2, M_T=10).validate_for_sample(400) == []
    warnings = PipelineConfig(M_T=17, kappa_T=0.0).validate_for_sample(100)
    assert any("M_T=17" in w for w in warnings)
    assert any("kappa_T=0" in w for w in warnings)
    with pytest.raises(ConfigError, match="smaller than T"):
        PipelineConfig(B_T=50).validate_for_sample(50)


def test_stage_arguments() -> None:
    config = PipelineConfig(q=2, Q=3)
    assert config.stage_arguments("levels") == {"q": 2, "bandwidth": 2, "k1": 20, "k2": 20}
    assert config.stage_arguments("volatility") == {"q": 3, "bandwidth": 17, "k1": 100, "k2": 100}
    with pytest.raises(ConfigError):
        config.stage_arguments("both")


def test_write_frame_formats(tmp_path: Path) -> None:
    frame = pd.DataFrame({"series": ["a", "b"], "lower": [-1.0, -2.0]})
    csv_path = write_frame(frame, tmp_path / "out.csv")
    assert csv_path.read_text(encoding="utf-8").splitlines()[0] == "series,lower"
    json_path = write_frame(frame, tmp_path / "out.json", OutputFormat.JSON)
    assert json.loads(json_path.read_text(encoding="utf-8"))[1] == {"series": "b", "lower": -2.0}


def test_read_json_errors(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="not found"):
        read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="Invalid JSON"):
        read_json(bad)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="JSON object"):
        read_json(listed)
