"""
One-step-ahead conditional prediction intervals and VaR

Ŷ_{T+1|T} comes from the level stage, ŝ_{T+1|T} = exp(ĥ_{T+1|T}/2) from the
volatility stage, and the interval [Ŷ + ŝ·q̂(α⁻), Ŷ + ŝ·q̂(1−α⁺)] uses empirical
quantiles of the multiplicative innovations w = exp(ω/2)·sign(ŝ).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .backtest import HitSeries
from .console import get_logger
from .errors import ForecastError
from .gdfm import GdfmModel, filter_stage, fit_stage, model_from_dict, model_to_dict, one_step_common, one_step_idio
from .panel_io import Panel, PipelineConfig
from .volatility import VolModel, VolProxy, build_proxy, fit_volatility

log = get_logger("forecast")


@dataclass(frozen=True, eq=False)
class Innovations:
    omega: np.ndarray
    w: np.ndarray


@dataclass(frozen=True, eq=False)
class IntervalForecast:
    labels: Tuple[str, ...]
    y_hat: np.ndarray
    s_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha_minus: float
    alpha_plus: float
    window: Optional[int]
    q_lower: np.ndarray
    q_upper: np.ndarray
    inside: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    method: str = "gdfm"

    @property
    def var(self) -> np.ndarray:
        """Value-at-Risk at level α⁻, zero when the lower bound is positive"""
        return np.maximum(0.0, -self.lower)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "series": list(self.labels),
                "method": self.method,
                "alpha_minus": self.alpha_minus,
                "alpha_plus": self.alpha_plus,
                "window": "all" if self.window is None else self.window,
                "y_hat": self.y_hat,
                "s_hat": self.s_hat,
                "lower": self.lower,
                "upper": self.upper,
                "var": self.var,
                "q_lower": self.q_lower,
                "q_upper": self.q_upper,
                "predictor_inside": self.inside if self.inside.size else np.ones(len(self.labels), dtype=bool),
            }
        )


# ─────────────────────────────── Innovations ──────────────────────────────── #


def innovations(level_model: GdfmModel, vol_model: VolModel, proxy: VolProxy) -> Innovations:
    """ω̂ = η̂ + ν̂ and ŵ = exp(ω̂/2)·sign(ŝ)"""
    eta, nu = vol_model.common_innovations, vol_model.idio_residuals
    if not (eta.shape == nu.shape == proxy.s_hat.shape == level_model.common.shape):
        raise ForecastError(
            f"Shape mismatch: η {eta.shape}, ν {nu.shape}, ŝ {proxy.s_hat.shape}, levels {level_model.common.shape}"
        )
    omega = eta + nu
    return Innovations(omega, np.exp(omega / 2) * np.sign(proxy.s_hat))


def _order_index(length: int, alpha: float) -> int:
    """⌈ℓα⌉ clamped to [1, ℓ]; rounding guards products like 100·0.07"""
    return min(max(math.ceil(round(length * alpha, 9)), 1), length)


def empirical_quantile(w_window: Sequence[float], alpha: float) -> float:
    """The ⌈ℓα⌉-th order statistic of the window"""
    values = np.asarray(w_window, dtype=float).ravel()
    if values.size == 0:
        raise ForecastError("Empirical quantile of an empty window")
    k = _order_index(values.size, alpha)
    return float(np.partition(values, k - 1)[k - 1])


def _window_quantiles(w: np.ndarray, alpha: float, window: Optional[int]) -> np.ndarray:
    recent = w if window is None else w[:, -window:]
    k = _order_index(recent.shape[1], alpha)
    return np.partition(recent, k - 1, axis=1)[:, k - 1]


def tail_condition(
    innov: Innovations, alpha_minus: float, alpha_plus: float, window: Optional[int] = None
) -> np.ndarray:
    """α⁻ < P̂(w ≤ 0) and α⁺ < 1 − P̂(w ≤ 0), per series"""
    recent = innov.w if window is None else innov.w[:, -window:]
    p_nonpositive = np.mean(recent <= 0, axis=1)
    return (alpha_minus < p_nonpositive) & (alpha_plus < 1 - p_nonpositive)


def predict_interval(
    level_model: GdfmModel,
    vol_model: VolModel,
    innov: Innovations,
    alpha_minus: float,
    alpha_plus: float,
    window: Optional[int] = None,
    labels: Sequence[str] = (),
) -> IntervalForecast:
    """Interval for period T+1 from the most recent ℓ innovations (all when window is None)"""
    for name, a in (("alpha_minus", alpha_minus), ("alpha_plus", alpha_plus)):
        if not 0.0 < a < 0.5:
            raise ForecastError(f"{name}={a} must lie in (0, 1/2)")
    T = innov.w.shape[1]
    if window is not None and not 1 <= window <= T:
        raise ForecastError(f"Quantile window ℓ={window} must satisfy 1 ≤ ℓ ≤ T={T}")

    y_hat = one_step_common(level_model) + one_step_idio(level_model) + level_model.means
    h_hat = one_step_common(vol_model.stage) + one_step_idio(vol_model.stage) + vol_model.means
    s_hat = np.exp(h_hat / 2)

    q_lower = _window_quantiles(innov.w, alpha_minus, window)
    q_upper = _window_quantiles(innov.w, 1 - alpha_plus, window)
    n = y_hat.size
    return IntervalForecast(
        labels=tuple(labels) if labels else tuple(f"s{i}" for i in range(n)),
        y_hat=y_hat,
        s_hat=s_hat,
        lower=y_hat + s_hat * q_lower,
        upper=y_hat + s_hat * q_upper,
        alpha_minus=alpha_minus,
        alpha_plus=alpha_plus,
        window=window,
        q_lower=q_lower,
        q_upper=q_upper,
        inside=tail_condition(innov, alpha_minus, alpha_plus, window),
    )


# ─────────────────────────────── Pipeline ─────────────────────────────────── #


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    """Both stages plus the proxy and innovations they imply"""

    labels: Tuple[str, ...]
    levels: GdfmModel
    proxy: VolProxy
    volatility: VolModel
    innovations: Innovations

    def interval(self, alpha_minus: float, alpha_plus: float, window: Optional[int] = None) -> IntervalForecast:
        return predict_interval(
            self.levels, self.volatility, self.innovations, alpha_minus, alpha_plus, window, self.labels
        )


def fit_pipeline(panel: Panel, config: PipelineConfig, rng: Optional[np.random.Generator] = None) -> FittedPipeline:
    """Levels stage, capped proxy, volatility stage, innovations"""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    levels = fit_stage(
        panel,
        n_perm=config.n_perm,
        max_var_order=config.max_var_order,
        max_ar_order=config.max_ar_order,
        rng=rng,
        **config.stage_arguments("levels"),
    )
    proxy = build_proxy(levels.common_innovations, levels.idio_residuals, config.kappa_T)
    args = config.stage_arguments("volatility")
    vol = fit_volatility(
        proxy,
        Q=args["q"],
        bandwidth=args["bandwidth"],
        n_perm=config.n_perm,
        k1=args["k1"],
        k2=args["k2"],
        max_var_order=config.max_var_order,
        max_ar_order=config.max_ar_order,
        rng=rng,
        labels=panel.labels,
    )
    return FittedPipeline(panel.labels, levels, proxy, vol, innovations(levels, vol, proxy))


def refilter_pipeline(
    fitted: FittedPipeline, panel: Panel, config: PipelineConfig, rng: Optional[np.random.Generator] = None
) -> FittedPipeline:
    """Extend a fitted pipeline to `panel` by filtering, without re-estimation"""
    levels = filter_stage(fitted.levels, panel)
    proxy = build_proxy(levels.common_innovations, levels.idio_residuals, fitted.proxy.kappa)
    if fitted.volatility.stage.permutations:
        vol = VolModel(filter_stage(fitted.volatility.stage, Panel(proxy.h_hat, panel.labels)), proxy.kappa)
    else:
        args = config.stage_arguments("volatility")
        vol = fit_volatility(
            proxy,
            Q=args["q"],
            bandwidth=args["bandwidth"],
            n_perm=config.n_perm,
            k1=args["k1"],
            k2=args["k2"],
            max_var_order=config.max_var_order,
            max_ar_order=config.max_ar_order,
            rng=rng,
            labels=panel.labels,
        )
    return FittedPipeline(panel.labels, levels, proxy, vol, innovations(levels, vol, proxy))


def pipeline_to_dict(fitted: FittedPipeline) -> Dict[str, Any]:
    return {
        "labels": list(fitted.labels),
        "kappa": fitted.proxy.kappa,
        "levels": model_to_dict(fitted.levels),
        "volatility": model_to_dict(fitted.volatility.stage),
    }


def pipeline_from_dict(data: Dict[str, Any]) -> FittedPipeline:
    try:
        levels = model_from_dict(data["levels"])
        stage = model_from_dict(data["volatility"])
        kappa = float(data["kappa"])
        labels = tuple(data["labels"])
    except KeyError as e:
        raise ForecastError(f"Fitted pipeline file is missing {e}") from None
    proxy = build_proxy(levels.common_innovations, levels.idio_residuals, kappa)
    vol = VolModel(stage, kappa)
    return FittedPipeline(labels, levels, proxy, vol, innovations(levels, vol, proxy))


# ─────────────────────────────── Rolling evaluation ───────────────────────── #

HitKey = Tuple[str, float, Optional[int]]


def window_key(window: Optional[int]) -> Any:
    """Value stored in the 'window' column of forecast records"""
    return "all" if window is None else window


@dataclass(frozen=True, eq=False)
class RollingResult:
    """Per-(series, τ, α, ℓ) records and the hit sequences built from them"""

    records: pd.DataFrame
    hits: Dict[HitKey, HitSeries]
    windows: Tuple[Optional[int], ...]

    def hits_for(self, alpha: float, window: Optional[int] = None) -> List[HitSeries]:
        return [h for (_, a, w), h in self.hits.items() if a == alpha and w == window]


def violation_side(realized: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return np.where(realized > upper, "upper", np.where(realized < lower, "lower", ""))


def interval_records(forecast: IntervalForecast, tau: int, alpha: float, realized: np.ndarray) -> pd.DataFrame:
    """Forecast rows for period τ with the realized value and its hit outcome"""
    side = violation_side(realized, forecast.lower, forecast.upper)
    frame = forecast.to_frame()
    frame.insert(1, "tau", tau)
    frame.insert(2, "alpha", alpha)
    frame["realized"] = realized
    frame["hit"] = side == ""
    frame["viol_side"] = side
    return frame


def collect_hits(
    records: pd.DataFrame,
    labels: Sequence[str],
    alphas: Sequence[float],
    windows: Sequence[Optional[int]] = (None,),
) -> Dict[HitKey, HitSeries]:
    """HitSeries per (series, α, ℓ) from rolling records, in τ order"""
    out: Dict[HitKey, HitSeries] = {}
    for window in windows:
        by_window = records[records["window"] == window_key(window)]
        for alpha in alphas:
            subset = by_window[by_window["alpha"] == alpha]
            for label in labels:
                rows = subset[subset["series"] == label].sort_values("tau")
                out[(label, alpha, window)] = HitSeries(
                    rows["hit"].to_numpy(dtype=bool),
                    (rows["viol_side"] == "upper").to_numpy(),
                    (rows["viol_side"] == "lower").to_numpy(),
                    (rows["upper"] - rows["lower"]).to_numpy(),
                    alpha,
                )
    return out


def check_rolling_design(T: int, eval_start: int, windows: Sequence[Optional[int]], refit_every: int) -> None:
    if not 0 < eval_start < T:
        raise ForecastError(f"eval_start={eval_start} must satisfy 0 < eval_start < T={T}")
    for window in windows:
        if window is not None and window > eval_start:
            raise ForecastError(f"Quantile window ℓ={window} exceeds the first estimation sample ({eval_start})")
    if refit_every < 1:
        raise ForecastError(f"refit_every must be positive, got {refit_every}")


def rolling_forecast(
    panel: Panel,
    config: PipelineConfig,
    eval_start: int,
    window: Optional[int] = None,
    alphas: Optional[Sequence[float]] = None,
    refit_every: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    on_step: Optional[Callable[[], None]] = None,
    windows: Optional[Sequence[Optional[int]]] = None,
) -> RollingResult:
    """Recursive pseudo-out-of-sample intervals for periods eval_start…T−1 (0-based)

    Each period τ is forecast from observations 0…τ−1. Estimation happens
    every `refit_every` steps; in between the last fit is re-filtered over
    the longer sample. Nominal α is split equally between the tails. Passing
    `windows` scores several quantile windows off the same fits.
    """
    alphas = list(alphas if alphas is not None else config.alphas)
    windows = list(windows) if windows is not None else [window]
    refit_every = refit_every or config.refit_every
    check_rolling_design(panel.T, eval_start, windows, refit_every)
    rng = rng if rng is not None else np.random.default_rng(config.seed)

    frames = []
    fitted: Optional[FittedPipeline] = None
    for step, tau in enumerate(range(eval_start, panel.T)):
        sample = panel.head(tau)
        if fitted is None or step % refit_every == 0:
            fitted = fit_pipeline(sample, config, rng)
        else:
            fitted = refilter_pipeline(fitted, sample, config, rng)
        realized = panel.values[:, tau]
        for w in windows:
            for alpha in alphas:
                frames.append(interval_records(fitted.interval(alpha / 2, alpha / 2, w), tau, alpha, realized))
        if on_step is not None:
            on_step()

    records = pd.concat(frames, ignore_index=True)
    return RollingResult(records, collect_hits(records, panel.labels, alphas, windows), tuple(windows))


# ─────────────────────────────── Bandwidth selection ──────────────────────── #


def _one_step_mse(model: GdfmModel, burn: int) -> float:
    """Mean squared in-sample one-step error: ŝ = ê + v̂ for levels, ω̂ = η̂ + ν̂ for volatilities"""
    errors = model.common_innovations + model.idio_residuals
    return float(np.mean(errors[:, burn:] ** 2))


def select_bandwidth(
    panel: Panel,
    grid: Sequence[int],
    config: PipelineConfig,
    stage: str = "levels",
    rng: Optional[np.random.Generator] = None,
) -> pd.DataFrame:
    """In-sample one-step MSE for each candidate bandwidth; the minimizer is flagged

    For stage 'volatility' the level stage is fitted once with B_T from the
    config and the grid runs over M_T.
    """
    if stage not in ("levels", "volatility"):
        raise ForecastError(f"Unknown stage '{stage}'")
    if not grid:
        raise ForecastError("Empty bandwidth grid")
    seed = config.seed
    burn = config.max_ar_order
    rows = []
    levels = None
    if stage == "volatility":
        levels = fit_stage(
            panel,
            n_perm=config.n_perm,
            max_var_order=config.max_var_order,
            max_ar_order=config.max_ar_order,
            rng=np.random.default_rng(seed),
            **config.stage_arguments("levels"),
        )
    for bandwidth in grid:
        local = rng if rng is not None else np.random.default_rng(seed)
        if levels is None:
            args = config.stage_arguments("levels")
            model = fit_stage(
                panel,
                q=args["q"],
                bandwidth=bandwidth,
                n_perm=config.n_perm,
                k1=args["k1"],
                k2=args["k2"],
                max_var_order=config.max_var_order,
                max_ar_order=config.max_ar_order,
                rng=local,
            )
        else:
            args = config.stage_arguments("volatility")
            proxy = build_proxy(levels.common_innovations, levels.idio_residuals, config.kappa_T)
            model = fit_volatility(
                proxy,
                Q=args["q"],
                bandwidth=bandwidth,
                n_perm=config.n_perm,
                k1=args["k1"],
                k2=args["k2"],
                max_var_order=config.max_var_order,
                max_ar_order=config.max_ar_order,
                rng=local,
            ).stage
        rows.append({"stage": stage, "bandwidth": int(bandwidth), "mse": _one_step_mse(model, burn)})
    frame = pd.DataFrame(rows)
    frame["selected"] = frame["mse"] == frame["mse"].min()
    return frame
