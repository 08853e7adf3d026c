"""End-to-end tests for the typer command line"""

from pathlib import Path
from typing import List

import pandas as pd
import pytest
from typer.testing import CliRunner

from gdfm_vol.cli import app
from gdfm_vol.panel_io import Panel, read_json

runner = CliRunner()


def invoke(args: List[str], configs_dir: Path):
    return runner.invoke(app, [*args, "--config-dir", str(configs_dir)])


@pytest.fixture
def model_file(tmp_path: Path, panel_csv: Path, config_file: Path, configs_dir: Path) -> Path:
    out = tmp_path / "model.json"
    result = invoke(["fit", "-i", str(panel_csv), "-c", str(config_file), "-o", str(out)], configs_dir)
    assert result.exit_code == 0, result.output
    return out


def test_list_configs(configs_dir: Path) -> None:
    result = runner.invoke(app, ["list-configs", "--config-dir", str(configs_dir)])
    assert result.exit_code == 0
    assert "smoke" in result.output
    assert "empirical" in result.output


def test_fit_writes_model(model_file: Path) -> None:
    data = read_json(model_file)
    assert set(data) == {"config", "model"}
    assert data["config"]["q"] == 1


def test_forecast_from_saved_model(model_file: Path, tmp_path: Path, configs_dir: Path, small_panel: Panel) -> None:
    out = tmp_path / "intervals.csv"
    result = invoke(["forecast", "--model", str(model_file), "-o", str(out)], configs_dir)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert list(frame["series"]) == list(small_panel.labels)
    assert (frame["lower"] <= frame["upper"]).all()
    assert (frame["var"] >= 0).all()


def test_forecast_from_panel_with_windows(panel_csv: Path, config_file: Path, tmp_path: Path, configs_dir: Path) -> None:
    out = tmp_path / "intervals.json"
    args = ["forecast", "-i", str(panel_csv), "-c", str(config_file), "-a", "0.05", "-w", "all", "-w", "50"]
    result = invoke([*args, "-f", "json", "-o", str(out)], configs_dir)
    assert result.exit_code == 0, result.output
    frame = pd.read_json(out, orient="records")
    assert len(frame) == 2 * 8
    assert set(frame["alpha"]) == {0.05}
    assert set(frame["alpha_minus"]) == {0.025}


def test_forecast_needs_exactly_one_source(model_file: Path, panel_csv: Path, configs_dir: Path) -> None:
    neither = invoke(["forecast"], configs_dir)
    assert neither.exit_code == 1
    assert "✖" in neither.output
    assert "exactly one" in neither.output

    both = invoke(["forecast", "-i", str(panel_csv), "--model", str(model_file)], configs_dir)
    assert both.exit_code == 1


def test_invalid_window_is_rejected(panel_csv: Path, config_file: Path, configs_dir: Path) -> None:
    result = invoke(["forecast", "-i", str(panel_csv), "-c", str(config_file), "-w", "0"], configs_dir)
    assert result.exit_code == 1
    assert "Window must be" in result.output


def test_missing_panel_file(tmp_path: Path, config_file: Path, configs_dir: Path) -> None:
    result = invoke(["fit", "-i", str(tmp_path / "absent.csv"), "-c", str(config_file)], configs_dir)
    assert result.exit_code == 1
    assert "not found" in result.output


def test_backtest_report(panel_csv: Path, config_file: Path, tmp_path: Path, configs_dir: Path) -> None:
    out, records = tmp_path / "report.csv", tmp_path / "records.csv"
    args = ["backtest", "-i", str(panel_csv), "-c", str(config_file), "--eval-start", "110"]
    result = invoke([*args, "-o", str(out), "--records", str(records)], configs_dir)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 8 + 1
    assert frame["series"].iloc[-1] == "mean"
    assert frame["M"].iloc[0] == 10
    assert len(pd.read_csv(records)) == 8 * 10


def test_scree(panel_csv: Path, tmp_path: Path) -> None:
    out = tmp_path / "scree.csv"
    result = runner.invoke(app, ["scree", "-i", str(panel_csv), "--bandwidth", "2", "--top", "3", "-o", str(out)])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 3 * 3
    assert (frame.loc[frame["index"] == 1, "normalized_eigenvalue"] == 1.0).all()


def test_select_bandwidth(panel_csv: Path, config_file: Path, tmp_path: Path, configs_dir: Path) -> None:
    out = tmp_path / "bandwidth.csv"
    args = ["select-bandwidth", "-i", str(panel_csv), "-c", str(config_file), "--grid", "1,2", "-o", str(out)]
    result = invoke(args, configs_dir)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert list(frame["bandwidth"]) == [1, 2]
    assert frame["selected"].sum() >= 1

    too_wide = invoke(["select-bandwidth", "-i", str(panel_csv), "-c", str(config_file), "--grid", "2,500"], configs_dir)
    assert too_wide.exit_code == 1


def test_capping(panel_csv: Path, config_file: Path, tmp_path: Path, configs_dir: Path) -> None:
    out = tmp_path / "capping.csv"
    args = ["capping", "-i", str(panel_csv), "-c", str(config_file), "--t-max", "150", "-o", str(out)]
    result = invoke(args, configs_dir)
    assert result.exit_code == 0, result.output
    assert list(pd.read_csv(out)["T_j"]) == [100, 150]


@pytest.mark.slow
def test_compare_garch(panel_csv: Path, config_file: Path, tmp_path: Path, configs_dir: Path) -> None:
    out = tmp_path / "mcnemar.csv"
    args = ["compare-garch", "-i", str(panel_csv), "-c", str(config_file), "--eval-start", "110", "-o", str(out)]
    result = invoke(args, configs_dir)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 8
    assert set(frame["winner"].fillna("")) <= {"", "gdfm", "garch"}


@pytest.mark.slow
def test_simulate_smoke(tmp_path: Path, configs_dir: Path) -> None:
    out = tmp_path / "mc.json"
    result = invoke(["simulate", "-c", "smoke", "-o", str(out), "--n-jobs", "1"], configs_dir)
    assert result.exit_code == 0, result.output
    report = read_json(out)
    assert report["completed"] + report["failed"] == 2
    assert report["metrics"] == ["coverage", "errors"]
