"""Two-stage generalized dynamic factor model for levels and log-volatilities"""

from .backtest import HitSeries, backtest, lr_combined, lr_cover, lr_independence, mcnemar
from .errors import GdfmError
from .forecast import FittedPipeline, IntervalForecast, fit_pipeline, predict_interval, rolling_forecast
from .gdfm import GdfmModel, fit_stage
from .panel_io import Panel, PipelineConfig, load_panel
from .volatility import VolModel, build_proxy, fit_volatility

__version__ = "1.0.0"

__all__ = [
    "FittedPipeline",
    "GdfmError",
    "GdfmModel",
    "HitSeries",
    "IntervalForecast",
    "Panel",
    "PipelineConfig",
    "VolModel",
    "backtest",
    "build_proxy",
    "fit_pipeline",
    "fit_stage",
    "fit_volatility",
    "load_panel",
    "lr_combined",
    "lr_cover",
    "lr_independence",
    "mcnemar",
    "predict_interval",
    "rolling_forecast",
]
