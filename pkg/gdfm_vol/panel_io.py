"""
Panel ingestion, centering, pipeline configuration and result serialization

CSV layout is time-down, series-across: a header row of series names, then
one row per time point. Internally a Panel is series-major (n×T).
"""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .console import get_logger
from .errors import ConfigError, EstimationError, PanelFormatError

log = get_logger("panel_io")

MISSING_TOKENS = {"", "na", "nan", "n/a", "null", "none", "#n/a"}

# Smallest sizes a GDFM stage will accept
MIN_SERIES = 2
MIN_PERIODS = 10


class PanelFormat(str, Enum):
    CSV = "csv"


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


# ─────────────────────────────── Panel ────────────────────────────────────── #


@dataclass(frozen=True, eq=False)
class Panel:
    """n×T matrix of observations, row i is series i"""

    values: np.ndarray
    labels: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise PanelFormatError(f"Panel values must be a non-empty n×T matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            i, t = np.argwhere(~np.isfinite(values))[0]
            raise PanelFormatError(f"Non-finite value in series {i}, period {t}")
        values.setflags(write=False)
        labels = tuple(self.labels) if self.labels else tuple(f"s{i}" for i in range(values.shape[0]))
        if len(labels) != values.shape[0]:
            raise PanelFormatError(f"Got {len(labels)} labels for {values.shape[0]} series")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def T(self) -> int:
        return int(self.values.shape[1])

    def with_values(self, values: np.ndarray) -> "Panel":
        return Panel(values, self.labels)

    def head(self, periods: int) -> "Panel":
        """First `periods` observations of every series"""
        if not 1 <= periods <= self.T:
            raise PanelFormatError(f"Cannot take {periods} periods from a panel with T={self.T}")
        return Panel(self.values[:, :periods], self.labels)

    def require_estimable(self) -> None:
        """Raise unless the panel is large enough to fit a stage on"""
        if self.n < MIN_SERIES or self.T < MIN_PERIODS:
            raise EstimationError(
                f"Panel too small for estimation: n={self.n}, T={self.T} (need n ≥ {MIN_SERIES}, T ≥ {MIN_PERIODS})"
            )

    def to_frame(self) -> pd.DataFrame:
        """Time-down frame, one column per series"""
        return pd.DataFrame(self.values.T, columns=list(self.labels))


# ─────────────────────────────── Configuration ────────────────────────────── #


class PipelineConfig(BaseModel):
    """Tuning constants for both estimation stages and the forecasting loop

    Defaults follow a daily large-cap stock panel: B_T=2, M_T=17,
    k̄₁=k̄₂=20, k̄₁*=k̄₂*=100, ten permutations and κ_T=0.25.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    q: int = Field(1, ge=1, description="Number of level factors")
    Q: int = Field(1, ge=1, description="Number of volatility factors")
    B_T: int = Field(2, ge=1, description="Lag-window bandwidth for levels")
    M_T: int = Field(17, ge=1, description="Lag-window bandwidth for log-volatilities")
    kappa_T: float = Field(0.25, ge=0.0, description="Capping constant for the log-volatility proxy")
    k1_bar: int = Field(20, ge=1)
    k2_bar: int = Field(20, ge=1)
    k1_star: int = Field(100, ge=1)
    k2_star: int = Field(100, ge=1)
    n_perm: int = Field(10, ge=1, description="Random block permutations averaged over")
    max_var_order: int = Field(2, ge=1, description="Upper bound on block VAR orders (capped by the bandwidth)")
    max_ar_order: int = Field(5, ge=1, description="Upper bound on idiosyncratic AR orders")
    seed: int = Field(0, ge=0, lt=2**64)
    refit_every: int = Field(1, ge=1, description="Re-estimate every k rolling steps")
    windows: List[Optional[int]] = Field(default_factory=lambda: [126, 252, 504, None])
    alphas: List[float] = Field(default_factory=lambda: [0.1, 0.05])
    n_jobs: int = Field(1, description="joblib worker count for Monte Carlo replications")

    @field_validator("windows")
    @classmethod
    def _check_windows(cls, windows: List[Optional[int]]) -> List[Optional[int]]:
        for w in windows:
            if w is not None and w < 1:
                raise ValueError(f"Quantile window must be positive or null (all), got {w}")
        return windows

    @field_validator("alphas")
    @classmethod
    def _check_alphas(cls, alphas: List[float]) -> List[float]:
        for a in alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"Nominal level α must lie in (0, 1), got {a}")
        return alphas

    def validate_for_sample(self, T: int) -> List[str]:
        """Check bandwidths against the sample length

        Returns the warnings that were logged; raises ConfigError when a
        bandwidth is not smaller than T.
        """
        warnings: List[str] = []
        root_t = math.sqrt(T)
        for name, value in (("B_T", self.B_T), ("M_T", self.M_T)):
            if value >= T:
                raise ConfigError(f"{name}={value} must be smaller than T={T}")
            if value > root_t:
                warnings.append(f"{name}={value} exceeds √T≈{root_t:.1f}; the lag window will be too wide")
        if self.kappa_T == 0:
            warnings.append("kappa_T=0: no capping; consistency theory assumes a positive capping constant")
        for message in warnings:
            log.warning(message)
        return warnings

    def stage_arguments(self, stage: str) -> Dict[str, int]:
        """Keyword arguments for gdfm.fit_stage for 'levels' or 'volatility'"""
        if stage == "levels":
            return {"q": self.q, "bandwidth": self.B_T, "k1": self.k1_bar, "k2": self.k2_bar}
        if stage == "volatility":
            return {"q": self.Q, "bandwidth": self.M_T, "k1": self.k1_star, "k2": self.k2_star}
        raise ConfigError(f"Unknown stage '{stage}'")


# ─────────────────────────────── Ingestion ────────────────────────────────── #


def _parse_cell(raw: Any, row: int, column: str) -> float:
    text = "" if raw is None else str(raw).strip()
    if text.lower() in MISSING_TOKENS:
        raise PanelFormatError(f"Missing value at data row {row + 1}, column '{column}'")
    try:
        value = float(text)
    except ValueError:
        raise PanelFormatError(f"Non-numeric cell {text!r} at data row {row + 1}, column '{column}'") from None
    if not math.isfinite(value):
        raise PanelFormatError(f"Non-finite cell {text!r} at data row {row + 1}, column '{column}'")
    return value


def load_panel(path: Union[str, Path], fmt: Union[str, PanelFormat] = PanelFormat.CSV) -> Panel:
    """Read a time-down CSV into a Panel, rejecting any incomplete cell"""
    path = Path(path)
    try:
        panel_format = PanelFormat(fmt)
    except ValueError:
        raise PanelFormatError(f"Unsupported panel format '{fmt}'") from None
    if not path.is_file():
        raise PanelFormatError(f"Panel file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise PanelFormatError(f"Ragged or malformed CSV {path}: {e}") from None
    except pd.errors.EmptyDataError:
        raise PanelFormatError(f"Empty panel file: {path}") from None

    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise PanelFormatError(f"No observations in {path}")

    columns = [str(c) for c in frame.columns]
    raw = frame.to_numpy(dtype=object)
    values = np.empty((len(columns), raw.shape[0]))
    for t in range(raw.shape[0]):
        for i, column in enumerate(columns):
            values[i, t] = _parse_cell(raw[t, i], t, column)

    panel = Panel(values, tuple(columns))
    log.debug(f"Loaded {panel_format.value} panel {path.name}: n={panel.n}, T={panel.T}")
    return panel


def save_panel(panel: Panel, path: Union[str, Path]) -> Path:
    """Write a panel in the same CSV layout load_panel reads; values round-trip exactly"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    panel.to_frame().to_csv(path, index=False, float_format="%.17g")
    return path


def center(panel: Panel) -> Tuple[Panel, np.ndarray]:
    """Subtract each series' sample mean"""
    means = panel.values.mean(axis=1)
    return panel.with_values(panel.values - means[:, None]), means


# ─────────────────────────────── Output ───────────────────────────────────── #


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def to_json_text(payload: Any) -> str:
    return json.dumps(payload, indent=2, default=_jsonable, ensure_ascii=False)


def write_json(payload: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(to_json_text(payload))
    return path


def frame_to_text(frame: pd.DataFrame, fmt: Union[str, OutputFormat]) -> str:
    if OutputFormat(fmt) is OutputFormat.JSON:
        return frame.to_json(orient="records", indent=2)
    return frame.to_csv(index=False)


def write_frame(frame: pd.DataFrame, path: Union[str, Path], fmt: Union[str, OutputFormat] = OutputFormat.CSV) -> Path:
    """Write a result table as CSV or JSON records"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(frame_to_text(frame, fmt))
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"JSON file not found: {path}")
    try:
        with path.open(encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"Expected a JSON object in {path}")
    return data

