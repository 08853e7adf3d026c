"""
Simulation design and Monte Carlo runner

A multiplicative factor model for log-volatilities drives the level shocks:

    χ = M(L)⁻¹Rε                      common log-volatility, VAR(3) diagonal
    ξ* = P*(L)⁻¹ν*,  ξ** = rescaled ξ*  idiosyncratic log-volatility, SNR 2
    e* = exp(χ/2)π,  v* = exp(χ/2)exp(ξ**/2)π
    e = VV′e*,  v = V⊥V⊥′e* + v*      V = top-q eigenvectors of cov(e*)
    X = (I − AL)⁻¹e,  Z = (I − CL)⁻¹v,  Y = X + Z

Replications run on independent SeedSequence children, so a report depends
only on the master seed, never on the worker count.
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg, signal, stats

from .console import get_logger
from .errors import GdfmError, SimulationError
from .forecast import fit_pipeline, rolling_forecast
from .panel_io import Panel, PipelineConfig

log = get_logger("simulate")

METRICS = frozenset({"errors", "coverage"})


class DgpConfig(BaseModel):
    """Parameters of the simulated panel"""

    model_config = ConfigDict(extra="forbid")

    n: int = Field(200, ge=2)
    T: int = Field(1000, ge=50)
    q: int = Field(1, ge=1)
    Q: int = Field(1, ge=1)
    replications: int = Field(50, ge=1)
    seed: int = Field(0, ge=0)
    signal_to_noise: float = Field(2.0, gt=0)
    vol_var_order: int = Field(3, ge=1)
    level_ar_range: Tuple[float, float] = (-0.3, 0.7)
    idio_ar_range: Tuple[float, float] = (-0.5, 0.5)
    toeplitz_decay: float = Field(0.5, ge=0, lt=1)
    toeplitz_band: int = Field(2, ge=0)
    max_radius: float = Field(0.98, gt=0, lt=1)
    stability_scope: Literal["series", "panel"] = "series"
    burn_in: int = Field(200, ge=0)

    @model_validator(mode="after")
    def _check_sizes(self) -> "DgpConfig":
        if self.n < self.q + 1:
            raise ValueError(f"Need n ≥ q+1, got n={self.n}, q={self.q}")
        for name, (low, high) in (("level_ar_range", self.level_ar_range), ("idio_ar_range", self.idio_ar_range)):
            if not -1 < low <= high < 1:
                raise ValueError(f"{name} must lie inside (−1, 1), got ({low}, {high})")
        return self


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    """Observed panel plus every latent component, all n×T"""

    panel: Panel
    X: np.ndarray
    Z: np.ndarray
    chi: np.ndarray
    xi: np.ndarray
    h: np.ndarray
    s: np.ndarray
    e: np.ndarray
    v: np.ndarray
    vol_roots: np.ndarray  # companion eigenvalue moduli of M(L), n×order
    radius: float


# ─────────────────────────────── Generation ───────────────────────────────── #


def _companion_moduli(coefficients: np.ndarray) -> np.ndarray:
    """Root moduli of each series' scalar AR polynomial; coefficients are order×n"""
    p, n = coefficients.shape
    companion = np.zeros((n, p, p))
    companion[:, 0, :] = coefficients.T
    companion[:, 1:, :-1] = np.eye(p - 1)
    return np.abs(np.linalg.eigvals(companion))


def stable_diagonal_var(
    n: int, order: int, rng: np.random.Generator, max_radius: float = 0.98, scope: str = "series"
) -> Tuple[np.ndarray, np.ndarray]:
    """N(0,1) diagonal lag coefficients halved until every root modulus ≤ max_radius

    With scope='series' each series' polynomial is halved on its own; with
    'panel' one factor is shared by the whole cross-section.
    Returns (coefficients order×n, root moduli n×order).
    """
    coefficients = rng.standard_normal((order, n))
    moduli = _companion_moduli(coefficients)
    if scope == "panel":
        while moduli.max() > max_radius:
            coefficients /= 2
            moduli = _companion_moduli(coefficients)
        return coefficients, moduli
    unstable = moduli.max(axis=1) > max_radius
    while unstable.any():
        coefficients[:, unstable] /= 2
        moduli = _companion_moduli(coefficients)
        unstable = moduli.max(axis=1) > max_radius
    return coefficients, moduli


def _ar_filter(drive: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """Row-wise x_t = Σ_k c_ik x_{t−k} + drive_t from a zero pre-sample"""
    out = np.empty_like(drive)
    for i in range(drive.shape[0]):
        out[i] = signal.lfilter([1.0], np.r_[1.0, -coefficients[:, i]], drive[i])
    return out


def _normalize_loadings(R: np.ndarray) -> np.ndarray:
    """Rescale so that R′R = nI"""
    n = R.shape[0]
    gram = R.T @ R / n
    vals, vecs = np.linalg.eigh(gram)
    return R @ (vecs @ np.diag(vals**-0.5) @ vecs.T)


def banded_toeplitz(n: int, decay: float, band: int) -> np.ndarray:
    column = np.zeros(n)
    k = min(band, n - 1)
    column[: k + 1] = decay ** np.arange(k + 1)
    return linalg.toeplitz(column)


def generate(dgp: DgpConfig, rng: Optional[np.random.Generator] = None) -> SimulatedPanel:
    """Draw one panel and its latent components"""
    rng = rng if rng is not None else np.random.default_rng(dgp.seed)
    n, T, q, Q = dgp.n, dgp.T, dgp.q, dgp.Q
    total = T + dgp.burn_in

    # Common log-volatility
    R = _normalize_loadings(rng.standard_normal((n, Q)))
    M, vol_roots = stable_diagonal_var(n, dgp.vol_var_order, rng, dgp.max_radius, dgp.stability_scope)
    eps = rng.standard_normal((Q, total))
    chi = _ar_filter(R @ eps, M)[:, dgp.burn_in :]

    # Idiosyncratic log-volatility
    sigma = banded_toeplitz(n, dgp.toeplitz_decay, dgp.toeplitz_band)
    nu = linalg.cholesky(sigma, lower=True) @ rng.standard_normal((n, total))
    P, _ = stable_diagonal_var(n, dgp.vol_var_order, rng, dgp.max_radius, dgp.stability_scope)
    xi_star = _ar_filter(nu, P)[:, dgp.burn_in :]
    xi = xi_star * np.sqrt(chi.var(axis=1) / (dgp.signal_to_noise * xi_star.var(axis=1)))[:, None]

    # Level shocks
    signs = rng.choice(np.array([-1.0, 1.0]), size=(n, T))
    e_star = np.exp(chi / 2) * signs
    v_star = np.exp(chi / 2) * np.exp(xi / 2) * signs
    _, V = linalg.eigh(np.cov(e_star), subset_by_index=[n - q, n - 1])
    projection = V @ V.T
    e = projection @ e_star
    v = e_star - e + v_star

    s = e + v
    h = np.log(s**2)

    A = rng.uniform(*dgp.level_ar_range, size=(1, n))
    C = rng.uniform(*dgp.idio_ar_range, size=(1, n))
    X = _ar_filter(e, A)
    Z = _ar_filter(v, C)

    return SimulatedPanel(
        panel=Panel(X + Z, tuple(f"y{i}" for i in range(n))),
        X=X,
        Z=Z,
        chi=chi,
        xi=xi,
        h=h,
        s=s,
        e=e,
        v=v,
        vol_roots=vol_roots,
        radius=float(vol_roots.max()),
    )


# ─────────────────────────────── Diagnostics ──────────────────────────────── #


def autocorrelation(values: np.ndarray, lag: int) -> np.ndarray:
    """Per-row sample autocorrelation at `lag`"""
    x = np.atleast_2d(values)
    x = x - x.mean(axis=1, keepdims=True)
    denom = np.sum(x**2, axis=1)
    return np.sum(x[:, lag:] * x[:, : x.shape[1] - lag], axis=1) / denom


def dgp_statistics(sim: SimulatedPanel, lags: Iterable[int] = (1, 2, 3, 4)) -> Dict[str, float]:
    """Cross-sectional averages describing one simulated panel

    acf_band is the ±1.96/√T band used to flag autocorrelations as
    significant.
    """
    out: Dict[str, float] = {"acf_band": 1.96 / np.sqrt(sim.h.shape[1])}
    for lag in lags:
        out[f"acf_h_{lag}"] = float(autocorrelation(sim.h, lag).mean())
        out[f"acf_v_{lag}"] = float(autocorrelation(sim.v, lag).mean())
    out["kurtosis_e"] = float(np.mean(stats.kurtosis(sim.e, axis=1, fisher=False)))
    out["kurtosis_v"] = float(np.mean(stats.kurtosis(sim.v, axis=1, fisher=False)))
    out["radius"] = sim.radius
    out["share_roots_07_1"] = float(np.mean((sim.vol_roots > 0.7) & (sim.vol_roots < 1.0)))
    return out


def error_metrics(truth: np.ndarray, estimate: np.ndarray) -> Tuple[float, float, float]:
    """(MSE, MAD, MAX) over all cells"""
    truth, estimate = np.asarray(truth, dtype=float), np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise SimulationError(f"Shapes differ: {truth.shape} vs {estimate.shape}")
    diff = truth - estimate
    return float(np.mean(diff**2)), float(np.mean(np.abs(diff))), float(np.max(np.abs(diff)))


# ─────────────────────────────── Monte Carlo ──────────────────────────────── #


class CoverageSummary(BaseModel):
    alpha: float
    C: float
    V_plus: float
    V_minus: float
    points: int


class McReport(BaseModel):
    """Aggregated Monte Carlo results plus one record per replication"""

    dgp: DgpConfig
    pipeline: PipelineConfig
    metrics: List[str]
    completed: int
    failed: int
    MSE_X: Optional[float] = None
    MSE_chi: Optional[float] = None
    MAD_X: Optional[float] = None
    MAD_chi: Optional[float] = None
    MAX_X: Optional[float] = None
    MAX_chi: Optional[float] = None
    coverage: List[CoverageSummary] = Field(default_factory=list)
    dgp_statistics: Dict[str, float] = Field(default_factory=dict)
    replications: List[Dict[str, Any]] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.replications)


def _demeaned(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=1, keepdims=True)


def _replicate(
    index: int,
    seed: np.random.SeedSequence,
    dgp: DgpConfig,
    config: PipelineConfig,
    metrics: FrozenSet[str],
    eval_points: int,
    window: Optional[int],
) -> Dict[str, Any]:
    data_seed, fit_seed = seed.spawn(2)
    record: Dict[str, Any] = {
        "replication": index,
        "entropy": str(seed.entropy),
        "spawn_key": ".".join(map(str, seed.spawn_key)),
        "status": "ok",
        "error": "",
    }
    try:
        sim = generate(dgp, np.random.default_rng(data_seed))
        record.update(dgp_statistics(sim))
        rng = np.random.default_rng(fit_seed)
        if "errors" in metrics:
            fitted = fit_pipeline(sim.panel, config, rng)
            diff_x = _demeaned(sim.X) - fitted.levels.common
            diff_chi = _demeaned(sim.chi) - fitted.volatility.stage.common
            for name, diff in (("X", diff_x), ("chi", diff_chi)):
                record[f"sse_{name}"] = float(np.sum(diff**2))
                record[f"sae_{name}"] = float(np.sum(np.abs(diff)))
                record[f"max_{name}"] = float(np.max(np.abs(diff)))
            record["cells"] = int(diff_x.size)
        if "coverage" in metrics:
            rolling = rolling_forecast(sim.panel, config, sim.panel.T - eval_points, window=window, rng=rng)
            for alpha in config.alphas:
                hits = rolling.hits_for(alpha, window)
                record[f"hits_{alpha:g}"] = int(sum(int(h.hits.sum()) for h in hits))
                record[f"upper_{alpha:g}"] = int(sum(int(h.upper.sum()) for h in hits))
                record[f"lower_{alpha:g}"] = int(sum(int(h.lower.sum()) for h in hits))
                record[f"points_{alpha:g}"] = int(sum(h.M for h in hits))
    except (GdfmError, np.linalg.LinAlgError) as e:
        record["status"] = "failed"
        record["error"] = f"{type(e).__name__}: {e}"
    return record


def _aggregate(
    records: List[Dict[str, Any]], dgp: DgpConfig, config: PipelineConfig, metrics: FrozenSet[str]
) -> McReport:
    ok = [r for r in records if r["status"] == "ok"]
    report: Dict[str, Any] = {
        "dgp": dgp,
        "pipeline": config,
        "metrics": sorted(metrics),
        "completed": len(ok),
        "failed": len(records) - len(ok),
        "replications": records,
    }
    if not ok:
        return McReport(**report)

    stat_keys = [k for k in ok[0] if k.startswith(("acf_", "kurtosis_", "radius", "share_"))]
    report["dgp_statistics"] = {k: float(np.mean([r[k] for r in ok])) for k in stat_keys}
    if "errors" in metrics:
        cells = sum(r["cells"] for r in ok)
        for name, label in (("X", "X"), ("chi", "chi")):
            report[f"MSE_{label}"] = sum(r[f"sse_{name}"] for r in ok) / cells
            report[f"MAD_{label}"] = sum(r[f"sae_{name}"] for r in ok) / cells
            report[f"MAX_{label}"] = max(r[f"max_{name}"] for r in ok)
    if "coverage" in metrics:
        summaries = []
        for alpha in config.alphas:
            points = sum(r[f"points_{alpha:g}"] for r in ok)
            summaries.append(
                CoverageSummary(
                    alpha=alpha,
                    C=sum(r[f"hits_{alpha:g}"] for r in ok) / points,
                    V_plus=sum(r[f"upper_{alpha:g}"] for r in ok) / points,
                    V_minus=sum(r[f"lower_{alpha:g}"] for r in ok) / points,
                    points=points,
                )
            )
        report["coverage"] = summaries
    return McReport(**report)


def run_mc(
    dgp: DgpConfig,
    config: PipelineConfig,
    metrics: Iterable[str] = ("errors",),
    eval_points: int = 100,
    window: Optional[int] = None,
    n_jobs: Optional[int] = None,
    on_replication: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> McReport:
    """Simulate, fit and score `dgp.replications` panels

    Failed replications are logged, counted and left out of every average.
    Coverage estimates on the first T − eval_points periods and evaluates
    one-step intervals on the last eval_points.
    """
    wanted = frozenset(metrics)
    unknown = wanted - METRICS
    if unknown:
        raise SimulationError(f"Unknown metrics {sorted(unknown)}; choose from {sorted(METRICS)}")
    if not wanted:
        raise SimulationError("Request at least one metric")
    if "coverage" in wanted and not 0 < eval_points < dgp.T:
        raise SimulationError(f"eval_points={eval_points} must satisfy 0 < eval_points < T={dgp.T}")
    config.validate_for_sample(dgp.T)

    seeds = np.random.SeedSequence(dgp.seed).spawn(dgp.replications)
    tasks = (
        delayed(_replicate)(m, seeds[m], dgp, config, wanted, eval_points, window) for m in range(dgp.replications)
    )
    records: List[Dict[str, Any]] = []
    jobs = config.n_jobs if n_jobs is None else n_jobs
    for record in Parallel(n_jobs=jobs, return_as="generator")(tasks):
        if record["status"] != "ok":
            log.warning(f"Replication {record['replication']} failed and is excluded: {record['error']}")
        records.append(record)
        if on_replication is not None:
            on_replication(record)

    report = _aggregate(records, dgp, config, wanted)
    if report.failed:
        log.warning(f"{report.failed} of {dgp.replications} replications failed")
    return report
