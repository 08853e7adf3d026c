"""
Second stage: capped log-volatility proxy and its GDFM

ŝ = ê + v̂ collects the level innovations; ĥ = log ŝ² floored at log κ².
The proxy panel is then fitted with the same stage routine used for levels.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .console import get_logger
from .errors import EstimationError
from .gdfm import GdfmModel, fit_stage
from .panel_io import Panel

log = get_logger("volatility")

DEFAULT_T_GRID = tuple(range(100, 10001, 50))
DEFAULT_RESAMPLED_SERIES = 150


@dataclass(frozen=True, eq=False)
class VolProxy:
    s_hat: np.ndarray
    h_hat: np.ndarray
    kappa: float
    capped_fraction: float

    @property
    def capped(self) -> np.ndarray:
        return np.abs(self.s_hat) < self.kappa


@dataclass(frozen=True, eq=False)
class VolModel:
    """GDFM on the log-volatility proxy: χ = common, ξ = idiosyncratic, ε = shocks"""

    stage: GdfmModel
    kappa: float

    @property
    def means(self) -> np.ndarray:
        return self.stage.means

    @property
    def common_innovations(self) -> np.ndarray:
        """η̂"""
        return self.stage.common_innovations

    @property
    def idio_residuals(self) -> np.ndarray:
        """ν̂"""
        return self.stage.idio_residuals


def capped_fraction(s_hat: np.ndarray, kappa: float) -> float:
    """Share of cells with |ŝ| < κ"""
    s = np.asarray(s_hat, dtype=float)
    return float(np.mean(np.abs(s) < kappa)) if s.size else 0.0


def build_proxy(e_hat: np.ndarray, v_hat: np.ndarray, kappa: float) -> VolProxy:
    """ĥ_it = log ŝ²_it if |ŝ_it| ≥ κ, else log κ²"""
    e_hat = np.asarray(e_hat, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    if e_hat.shape != v_hat.shape:
        raise EstimationError(f"Shock shapes differ: {e_hat.shape} vs {v_hat.shape}")
    if kappa < 0:
        raise EstimationError(f"Capping constant must be nonnegative, got {kappa}")

    s_hat = e_hat + v_hat
    if kappa == 0 and np.any(s_hat == 0):
        i, t = np.argwhere(s_hat == 0)[0]
        raise EstimationError(f"ŝ is exactly zero at series {i}, period {t}; log of zero needs kappa_T > 0")

    uncapped = np.abs(s_hat) >= kappa
    with np.errstate(divide="ignore"):
        h_hat = np.where(uncapped, np.log(np.square(s_hat)), np.log(kappa**2) if kappa > 0 else 0.0)
    fraction = capped_fraction(s_hat, kappa)
    log.debug(f"κ={kappa}: {fraction:.1%} of proxy cells capped")
    return VolProxy(s_hat, h_hat, float(kappa), fraction)


def fit_volatility(
    proxy: VolProxy,
    Q: int,
    bandwidth: int,
    n_perm: int,
    k1: int,
    k2: int,
    max_var_order: int = 2,
    max_ar_order: int = 5,
    rng: Optional[np.random.Generator] = None,
    labels: Sequence[str] = (),
) -> VolModel:
    """Fit the GDFM stage to ĥ with (Q, M_T, k̄₁*, k̄₂*)"""
    panel = Panel(proxy.h_hat, tuple(labels))
    if np.all(np.ptp(panel.values, axis=1) == 0):
        log.warning("Log-volatility proxy is constant in every series; common component set to zero")
        return VolModel(_constant_stage(panel, Q, k1, k2), proxy.kappa)
    stage = fit_stage(
        panel,
        q=Q,
        bandwidth=bandwidth,
        n_perm=n_perm,
        k1=k1,
        k2=k2,
        max_var_order=max_var_order,
        max_ar_order=max_ar_order,
        rng=rng,
    )
    return VolModel(stage, proxy.kappa)


def _constant_stage(panel: Panel, q: int, k1: int, k2: int) -> GdfmModel:
    n, T = panel.n, panel.T
    zeros = np.zeros((n, T))
    ma = np.zeros((n, k2 + 1))
    ma[:, 0] = 1.0
    return GdfmModel(
        q=q,
        means=panel.values[:, 0].copy(),
        loadings=np.zeros((n, q)),
        impulse_responses=np.zeros((k1 + 1, n, q)),
        shocks=np.zeros((q, T)),
        common_innovations=zeros,
        common=zeros,
        idiosyncratic=zeros.copy(),
        ar_coefficients=tuple(np.zeros(0) for _ in range(n)),
        idio_residuals=zeros.copy(),
        ma_inverses=ma,
        diagnostics={"constant_proxy": True},
        centered=zeros.copy(),
    )


def capping_diagnostic(
    s_panel: np.ndarray,
    T_grid: Sequence[int] = DEFAULT_T_GRID,
    phi: float = 2.0,
    K: float = 0.5,
    eps: float = 0.01,
    rng: Optional[np.random.Generator] = None,
    n_series: int = DEFAULT_RESAMPLED_SERIES,
) -> pd.DataFrame:
    """r(T_j) = max_i T_j^ε·#{t: |s*_it| < κ}/√T_j with κ = K/log^φ T_j

    s* are `n_series` resampled series of length T_j drawn uniformly with
    replacement from the pooled |ŝ| values.
    """
    pool = np.abs(np.asarray(s_panel, dtype=float)).ravel()
    if pool.size == 0:
        raise EstimationError("Capping diagnostic needs a non-empty ŝ panel")
    if K < 0:
        raise EstimationError(f"K must be nonnegative, got K={K}")
    if phi <= 1 or eps <= 0:
        raise EstimationError(f"Need φ > 1 and ε > 0, got phi={phi}, eps={eps}")
    rng = rng if rng is not None else np.random.default_rng()

    rows = []
    for T_j, child in zip(T_grid, rng.spawn(len(T_grid)), strict=True):
        kappa = K / np.log(T_j) ** phi
        draws = child.choice(pool, size=(n_series, T_j), replace=True)
        counts = np.sum(draws < kappa, axis=1)
        r = float(T_j**eps * counts.max() / np.sqrt(T_j))
        rows.append({"T_j": int(T_j), "phi": phi, "K": K, "eps": eps, "r": r})
    return pd.DataFrame(rows)


def kappa_grid_fractions(s_hat: np.ndarray, kappas: Sequence[float] = (0.0, 0.1, 0.25, 0.5)) -> Tuple[float, ...]:
    """Capped shares for a grid of κ values"""
    return tuple(capped_fraction(s_hat, k) for k in kappas)
