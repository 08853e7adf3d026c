"""
Univariate GARCH(1,1) baseline

σ²_t = ω + γ(Y_{t−1} − Ȳ)² + βσ²_{t−1}, fitted by Gaussian QML with the mean
fixed at the sample mean and σ²_1 at the sample variance. The constraints
ω > 0, γ, β ≥ 0, γ + β < 1 are handled by optimizing over
(log ω, log(γ/r), log(β/r)) with r = 1 − γ − β.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import optimize, signal

from .console import get_logger
from .errors import ForecastError, GarchError
from .forecast import (
    IntervalForecast,
    RollingResult,
    check_rolling_design,
    collect_hits,
    empirical_quantile,
    interval_records,
)
from .panel_io import Panel

log = get_logger("garch")

MIN_LENGTH = 50
DEFAULT_STARTS = ((0.05, 0.90), (0.10, 0.85), (0.02, 0.97), (0.20, 0.50))
PENALTY = 1e10
LOGLIK_RTOL = 1e-8

FIT_METADATA = {
    "mean": "sample mean, not estimated",
    "variance_init": "sample variance",
    "parameterization": "log omega; (gamma, beta) = (p, q)/(1 + p + q), p, q > 0",
    "optimizer": "Nelder-Mead multistart, BFGS polish",
}


@dataclass(frozen=True, eq=False)
class GarchFit:
    omega: float
    gamma: float
    beta: float
    mean: float
    sigma2: np.ndarray
    eps: np.ndarray
    loglik: float
    converged: bool
    grad_norm: float = float("nan")
    series: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def persistence(self) -> float:
        return self.gamma + self.beta

    @property
    def unconditional_variance(self) -> float:
        return self.omega / (1 - self.persistence)

    def next_variance(self) -> float:
        """σ²_{T+1|T}"""
        last = self.series[-1] - self.mean
        return float(self.omega + self.gamma * last**2 + self.beta * self.sigma2[-1])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "omega": self.omega,
            "gamma": self.gamma,
            "beta": self.beta,
            "mean": self.mean,
            "loglik": self.loglik,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "T": int(self.series.size),
            **FIT_METADATA,
        }


# ─────────────────────────────── Recursion ────────────────────────────────── #


def garch_variance(residuals: np.ndarray, omega: float, gamma: float, beta: float, sigma2_init: float) -> np.ndarray:
    """σ²_1 = sigma2_init, σ²_t = ω + γε²_{t−1} + βσ²_{t−1}"""
    eps = np.asarray(residuals, dtype=float)
    sigma2 = np.empty_like(eps)
    sigma2[0] = sigma2_init
    if eps.size > 1:
        drive = omega + gamma * eps[:-1] ** 2
        sigma2[1:], _ = signal.lfilter([1.0], [1.0, -beta], drive, zi=[beta * sigma2_init])
    return sigma2


def _to_params(theta: np.ndarray) -> Tuple[float, float, float]:
    omega = float(np.exp(theta[0]))
    p, q = np.exp(np.clip(theta[1:], -50.0, 50.0))
    total = 1.0 + p + q
    return omega, float(p / total), float(q / total)


def _from_params(omega: float, gamma: float, beta: float) -> np.ndarray:
    rest = 1.0 - gamma - beta
    return np.array([np.log(omega), np.log(gamma / rest), np.log(beta / rest)])


def _negative_loglik(theta: np.ndarray, eps: np.ndarray, sigma2_init: float) -> float:
    omega, gamma, beta = _to_params(theta)
    sigma2 = garch_variance(eps, omega, gamma, beta, sigma2_init)
    if not np.all(np.isfinite(sigma2)) or np.any(sigma2 <= 0):
        return PENALTY
    value = 0.5 * float(np.sum(np.log(2 * np.pi) + np.log(sigma2) + eps**2 / sigma2))
    return value if np.isfinite(value) else PENALTY


# ─────────────────────────────── Estimation ───────────────────────────────── #


def _validate_series(series: np.ndarray) -> np.ndarray:
    y = np.asarray(series, dtype=float).ravel()
    if y.size < MIN_LENGTH:
        raise GarchError(f"GARCH(1,1) needs at least {MIN_LENGTH} observations, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise GarchError("GARCH(1,1) input contains non-finite values")
    if np.var(y) == 0:
        raise GarchError("Zero-variance series; GARCH(1,1) is not identified")
    return y


def _starting_points(variance: float, n_random: int, rng: np.random.Generator) -> List[np.ndarray]:
    pairs = list(DEFAULT_STARTS)
    for _ in range(n_random):
        gamma = rng.uniform(0.01, 0.3)
        pairs.append((gamma, rng.uniform(0.3, 0.98 - gamma)))
    return [_from_params(variance * (1 - g - b), g, b) for g, b in pairs]


def fit_garch(
    series: Sequence[float],
    n_random_starts: int = 4,
    rng: Optional[np.random.Generator] = None,
    maxiter: int = 4000,
) -> GarchFit:
    """Gaussian QML fit of GARCH(1,1) from several starting points

    A fit whose optimizer did not report success is returned with
    converged=False and the best point found.
    """
    y = _validate_series(np.asarray(series, dtype=float))
    rng = rng if rng is not None else np.random.default_rng()
    mean = float(y.mean())
    eps = y - mean
    sigma2_init = float(np.var(y))

    objective = lambda theta: _negative_loglik(theta, eps, sigma2_init)  # noqa: E731
    best: Optional[optimize.OptimizeResult] = None
    for start in _starting_points(sigma2_init, n_random_starts, rng):
        fatol = LOGLIK_RTOL * max(1.0, abs(objective(start)))
        res = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": fatol, "maxiter": maxiter, "maxfev": 2 * maxiter},
        )
        if best is None or res.fun < best.fun:
            best = res
    assert best is not None

    polished = optimize.minimize(objective, best.x, method="BFGS", options={"gtol": 1e-6})
    if polished.fun < best.fun:
        converged = bool(best.success or polished.success)
        best = polished
    else:
        converged = bool(best.success)

    omega, gamma, beta = _to_params(best.x)
    sigma2 = garch_variance(eps, omega, gamma, beta, sigma2_init)
    gradient = optimize.approx_fprime(best.x, objective, 1e-7)
    grad_norm = float(np.linalg.norm(gradient)) / y.size
    if not converged:
        log.warning(f"GARCH(1,1) optimizer did not converge; best point ω={omega:.4g}, γ={gamma:.4g}, β={beta:.4g}")
    return GarchFit(
        omega=omega,
        gamma=gamma,
        beta=beta,
        mean=mean,
        sigma2=sigma2,
        eps=eps / np.sqrt(sigma2),
        loglik=-float(best.fun),
        converged=converged,
        grad_norm=grad_norm,
        series=y,
    )


def refilter_garch(fit: GarchFit, series: Sequence[float]) -> GarchFit:
    """Keep the parameters and mean of `fit`, rerun the recursion over `series`"""
    y = np.asarray(series, dtype=float).ravel()
    sigma2_init = float(fit.sigma2[0])
    eps = y - fit.mean
    sigma2 = garch_variance(eps, fit.omega, fit.gamma, fit.beta, sigma2_init)
    theta = _from_params(fit.omega, max(fit.gamma, 1e-300), max(fit.beta, 1e-300))
    return GarchFit(
        omega=fit.omega,
        gamma=fit.gamma,
        beta=fit.beta,
        mean=fit.mean,
        sigma2=sigma2,
        eps=eps / np.sqrt(sigma2),
        loglik=-_negative_loglik(theta, eps, sigma2_init),
        converged=fit.converged,
        grad_norm=fit.grad_norm,
        series=y,
    )


def simulate_garch(
    omega: float, gamma: float, beta: float, T: int, rng: np.random.Generator, burn: int = 500
) -> np.ndarray:
    """Gaussian GARCH(1,1) path of length T with zero mean"""
    if gamma + beta >= 1:
        raise GarchError("Simulation needs γ + β < 1")
    z = rng.standard_normal(T + burn)
    y = np.empty(T + burn)
    sigma2 = omega / (1 - gamma - beta)
    for t in range(T + burn):
        y[t] = np.sqrt(sigma2) * z[t]
        sigma2 = omega + gamma * y[t] ** 2 + beta * sigma2
    return y[burn:]


# ─────────────────────────────── Intervals ────────────────────────────────── #


def garch_interval(fit: GarchFit, alpha: float, window: Optional[int] = None, label: str = "s0") -> IntervalForecast:
    """[Ȳ + σ̂_{T+1|T}·ε̂_(⌈ℓα/2⌉), Ȳ + σ̂_{T+1|T}·ε̂_(⌈ℓ(1−α/2)⌉)] from the last ℓ standardized residuals"""
    if not 0.0 < alpha < 1.0:
        raise ForecastError(f"alpha={alpha} must lie in (0, 1)")
    T = fit.eps.size
    if window is not None and not 1 <= window <= T:
        raise ForecastError(f"Quantile window ℓ={window} must satisfy 1 ≤ ℓ ≤ T={T}")
    if not fit.converged:
        log.debug("Interval built from a non-converged GARCH fit")
    recent = fit.eps if window is None else fit.eps[-window:]
    q_lower = empirical_quantile(recent, alpha / 2)
    q_upper = empirical_quantile(recent, 1 - alpha / 2)
    sigma = np.sqrt(fit.next_variance())
    y_hat = np.array([fit.mean])
    return IntervalForecast(
        labels=(label,),
        y_hat=y_hat,
        s_hat=np.array([sigma]),
        lower=y_hat + sigma * q_lower,
        upper=y_hat + sigma * q_upper,
        alpha_minus=alpha / 2,
        alpha_plus=alpha / 2,
        window=window,
        q_lower=np.array([q_lower]),
        q_upper=np.array([q_upper]),
        method="garch",
    )


def _rolling_series(
    y: np.ndarray,
    label: str,
    eval_start: int,
    windows: Sequence[Optional[int]],
    alphas: Sequence[float],
    refit_every: int,
    seed: np.random.SeedSequence,
    n_random_starts: int,
) -> List[pd.DataFrame]:
    rng = np.random.default_rng(seed)
    frames = []
    fit: Optional[GarchFit] = None
    for step, tau in enumerate(range(eval_start, y.size)):
        if fit is None or step % refit_every == 0:
            fit = fit_garch(y[:tau], n_random_starts=n_random_starts, rng=rng)
        else:
            fit = refilter_garch(fit, y[:tau])
        realized = y[tau : tau + 1]
        for window in windows:
            for alpha in alphas:
                frames.append(interval_records(garch_interval(fit, alpha, window, label), tau, alpha, realized))
    return frames


def rolling_garch(
    panel: Panel,
    eval_start: int,
    windows: Sequence[Optional[int]] = (None,),
    alphas: Sequence[float] = (0.1, 0.05),
    refit_every: int = 1,
    seed: int = 0,
    n_jobs: int = 1,
    n_random_starts: int = 2,
    on_series: Optional[Callable[[], None]] = None,
) -> RollingResult:
    """GARCH intervals on the same evaluation points as forecast.rolling_forecast

    Series are fitted independently, one joblib task each.
    """
    if eval_start < MIN_LENGTH:
        raise ForecastError(f"GARCH needs eval_start ≥ {MIN_LENGTH}, got {eval_start}")
    check_rolling_design(panel.T, eval_start, windows, refit_every)

    seeds = np.random.SeedSequence(seed).spawn(panel.n)
    tasks = (
        delayed(_rolling_series)(
            panel.values[i], label, eval_start, list(windows), alphas, refit_every, seeds[i], n_random_starts
        )
        for i, label in enumerate(panel.labels)
    )
    frames: List[pd.DataFrame] = []
    for series_frames in Parallel(n_jobs=n_jobs, return_as="generator")(tasks):
        frames.extend(series_frames)
        if on_series is not None:
            on_series()

    records = pd.concat(frames, ignore_index=True)
    return RollingResult(records, collect_hits(records, panel.labels, list(alphas), list(windows)), tuple(windows))
