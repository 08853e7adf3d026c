"""
One GDFM estimation stage

Dynamic PCA on the lag-window spectrum gives the autocovariances of the
common component; block Yule-Walker VARs fitted on random cross-sectional
partitions filter the panel; static PCA of the filtered panel gives the
loadings and shocks; results are averaged over partitions; univariate AR
models whiten the idiosyncratic remainder. The same routine serves levels
(q, B_T, k̄₁, k̄₂) and log-volatilities (Q, M_T, k̄₁*, k̄₂*).

Pre-sample values are taken as zero in every filter and convolution.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, signal

from .console import get_logger
from .errors import EstimationError, YuleWalkerError
from .panel_io import Panel, center
from .spectral import (
    AutocovarianceSet,
    EigenDecomposition,
    estimate_spectrum,
    inverse_ft,
    sample_autocov,
    truncate_to_rank,
)

log = get_logger("gdfm")

RIDGE_CONDITION = 1e12
RIDGE_SCALE = 1e-8
STABLE_RADIUS = 0.99
LOGDET_FLOOR = 1e-12


# ─────────────────────────────── Block VAR ────────────────────────────────── #


@dataclass(frozen=True, eq=False)
class YuleWalkerFit:
    """VAR(p) coefficients A_1…A_p for one block, stacked as (p, b, b)"""

    coefficients: np.ndarray
    innovation_cov: np.ndarray
    bic: Dict[int, float] = field(default_factory=dict)
    ridged: bool = False

    @property
    def order(self) -> int:
        return int(self.coefficients.shape[0])


def companion_radius(coefficients: np.ndarray) -> float:
    """Spectral radius of the companion matrix of A_1…A_p"""
    p, b, _ = coefficients.shape
    if p == 0:
        return 0.0
    companion = np.zeros((p * b, p * b))
    companion[:b, :] = np.concatenate(list(coefficients), axis=1)
    companion[b:, :-b] = np.eye((p - 1) * b)
    return float(np.abs(np.linalg.eigvals(companion)).max())


def _block_toeplitz(gammas: Sequence[np.ndarray], p: int) -> np.ndarray:
    """𝒞 with block (r, c) = Γ_{c−r}, using Γ_{−m} = Γ_mᵀ"""
    rows = []
    for r in range(p):
        row = [gammas[c - r] if c >= r else gammas[r - c].T for c in range(p)]
        rows.append(np.concatenate(row, axis=1))
    return np.concatenate(rows, axis=0)


def _solve_yule_walker(gammas: Sequence[np.ndarray], p: int) -> Tuple[np.ndarray, np.ndarray, bool]:
    b = gammas[0].shape[0]
    toeplitz = _block_toeplitz(gammas, p)
    rhs = np.concatenate([gammas[k] for k in range(1, p + 1)], axis=1)
    if not (np.all(np.isfinite(toeplitz)) and np.all(np.isfinite(rhs))):
        raise YuleWalkerError("Non-finite autocovariances passed to the Yule-Walker system")

    ridged = False
    if np.linalg.cond(toeplitz) > RIDGE_CONDITION:
        eps = RIDGE_SCALE * np.trace(toeplitz) / toeplitz.shape[0]
        if not eps > 0:
            raise YuleWalkerError(
                "Yule-Walker matrix is singular with zero trace; try a larger bandwidth B_T or more data"
            )
        toeplitz = toeplitz + eps * np.eye(toeplitz.shape[0])
        ridged = True
    try:
        solution = linalg.solve(toeplitz, rhs.T, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as e:
        raise YuleWalkerError(f"Yule-Walker system could not be solved ({e}); try a larger bandwidth B_T") from None

    flat = solution.T  # [A_1 … A_p], b × pb
    coefficients = np.stack([flat[:, k * b : (k + 1) * b] for k in range(p)])
    innovation = gammas[0] - sum(coefficients[k] @ gammas[k + 1].T for k in range(p))
    return coefficients, 0.5 * (innovation + innovation.T), ridged


def _floored_logdet(cov: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(cov)
    floor = LOGDET_FLOOR * max(float(np.abs(eig).max(initial=0.0)), np.finfo(float).tiny)
    return float(np.sum(np.log(np.maximum(eig, floor))))


def yule_walker_block(
    common_autocov: AutocovarianceSet,
    block: Sequence[int],
    max_order: int,
    sample_size: Optional[int] = None,
    order: Optional[int] = None,
) -> YuleWalkerFit:
    """VAR coefficients (A_1…A_p) = (Γ_1…Γ_p)·𝒞⁻¹ for the series in `block`

    Without a fixed `order`, p is chosen in 1…max_order by BIC on the log
    determinant of the Yule-Walker innovation variance (eigenvalues floored
    relative to the largest, since common-component blocks are near singular).
    """
    idx = np.asarray(block, dtype=int)
    b = len(idx)
    max_order = min(max_order, common_autocov.max_lag)
    if max_order < 1:
        raise YuleWalkerError("Autocovariances must cover at least lag 1")
    gammas = [common_autocov.lag(k)[np.ix_(idx, idx)] for k in range(max_order + 1)]

    if order is not None:
        if not 1 <= order <= max_order:
            raise YuleWalkerError(f"VAR order {order} outside 1…{max_order}")
        coefficients, innovation, ridged = _solve_yule_walker(gammas, order)
        return YuleWalkerFit(coefficients, innovation, {}, ridged)

    T = sample_size if sample_size is not None else common_autocov.T
    if T is None:
        raise YuleWalkerError("A sample size is needed to select the VAR order by BIC")

    best: Optional[YuleWalkerFit] = None
    criteria: Dict[int, float] = {}
    for p in range(1, max_order + 1):
        coefficients, innovation, ridged = _solve_yule_walker(gammas, p)
        criteria[p] = _floored_logdet(innovation) + p * b * b * np.log(T) / T
        if best is None or criteria[p] < criteria[best.order]:
            best = YuleWalkerFit(coefficients, innovation, {}, ridged)
    assert best is not None
    return YuleWalkerFit(best.coefficients, best.innovation_cov, criteria, best.ridged)


def stabilize(coefficients: np.ndarray, target: float = STABLE_RADIUS) -> Tuple[np.ndarray, float]:
    """Scale A_k by c^k so the companion radius becomes `target` when it is ≥ 1

    A(z) → A(cz) multiplies every companion eigenvalue by c.
    """
    radius = companion_radius(coefficients)
    if radius < 1.0:
        return coefficients, radius
    c = target / radius
    powers = c ** np.arange(1, coefficients.shape[0] + 1)
    return coefficients * powers[:, None, None], radius


@dataclass(frozen=True, eq=False)
class BlockVar:
    """Block-diagonal VAR filter A(L) over a cross-sectional partition"""

    blocks: Tuple[np.ndarray, ...]
    coefficients: Tuple[np.ndarray, ...]
    shrunk: Tuple[bool, ...] = ()
    ridged: Tuple[bool, ...] = ()

    @property
    def orders(self) -> List[int]:
        return [int(c.shape[0]) for c in self.coefficients]

    def filter(self, Y: np.ndarray) -> np.ndarray:
        """Y*_t = Y_t − Σ_k A_k Y_{t−k}"""
        out = np.array(Y, dtype=float, copy=True)
        T = Y.shape[1]
        for idx, coefs in zip(self.blocks, self.coefficients, strict=True):
            for k, A in enumerate(coefs, start=1):
                if k < T:
                    out[idx, k:] -= A @ Y[idx, : T - k]
        return out

    def impulse_responses(self, loadings: np.ndarray, horizon: int) -> np.ndarray:
        """B_j = Ψ_j·loadings for j = 0…horizon, with Ψ(L) = A(L)⁻¹; shape (horizon+1, n, q)"""
        n, q = loadings.shape
        out = np.zeros((horizon + 1, n, q))
        out[0] = loadings
        for idx, coefs in zip(self.blocks, self.coefficients, strict=True):
            for j in range(1, horizon + 1):
                acc = np.zeros((len(idx), q))
                for k in range(1, min(j, len(coefs)) + 1):
                    acc += coefs[k - 1] @ out[j - k][idx]
                out[j][idx] = acc
        return out


def partition_blocks(n: int, q: int, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
    """Random partition into ⌊n/(q+1)⌋ blocks; the first q series share the first block

    Leftover series are appended to the last block.
    """
    size = q + 1
    order = np.concatenate([np.arange(q), q + rng.permutation(n - q)])
    m = n // size
    blocks = [order[j * size : (j + 1) * size] for j in range(m)]
    blocks[-1] = np.concatenate([blocks[-1], order[m * size :]])
    return tuple(blocks)


# ─────────────────────────────── Idiosyncratic AR ─────────────────────────── #


@dataclass(frozen=True, eq=False)
class ArFit:
    coefficients: np.ndarray  # c_1…c_p
    residuals: np.ndarray
    bic: Dict[int, float] = field(default_factory=dict)


def fit_ar(series: np.ndarray, max_order: int) -> ArFit:
    """Least-squares AR(p) with p ∈ 0…max_order chosen by BIC on a common sample"""
    z = np.asarray(series, dtype=float)
    T = z.size
    max_order = max(0, min(max_order, T // 4))
    target = z[max_order:]
    N = target.size
    criteria: Dict[int, float] = {}
    best_p, best_c = 0, np.zeros(0)
    for p in range(max_order + 1):
        if p == 0:
            c = np.zeros(0)
            resid = target
        else:
            design = np.column_stack([z[max_order - k : T - k] for k in range(1, p + 1)])
            c, *_ = np.linalg.lstsq(design, target, rcond=None)
            resid = target - design @ c
        sigma2 = float(np.mean(resid**2))
        criteria[p] = np.log(max(sigma2, 1e-300)) + p * np.log(N) / N
        if criteria[p] < criteria[best_p]:
            best_p, best_c = p, c
    residuals = signal.lfilter(np.r_[1.0, -best_c], [1.0], z)
    return ArFit(best_c, residuals, criteria)


def ma_inverse(coefficients: np.ndarray, horizon: int) -> np.ndarray:
    """d_0…d_horizon of c(L)⁻¹ with c(L) = 1 − Σ c_k L^k"""
    impulse = np.zeros(horizon + 1)
    impulse[0] = 1.0
    return signal.lfilter([1.0], np.r_[1.0, -np.asarray(coefficients, dtype=float)], impulse)


# ─────────────────────────────── Stage model ──────────────────────────────── #


@dataclass(frozen=True, eq=False)
class PermutationFit:
    var: BlockVar
    loadings: np.ndarray  # rotated H·ℛ, n×q


@dataclass(frozen=True, eq=False)
class GdfmModel:
    """A fitted stage; arrays are series-major, impulse responses are (k̄₁+1, n, q)"""

    q: int
    means: np.ndarray
    loadings: np.ndarray
    impulse_responses: np.ndarray
    shocks: np.ndarray
    common_innovations: np.ndarray
    common: np.ndarray
    idiosyncratic: np.ndarray
    ar_coefficients: Tuple[np.ndarray, ...]
    idio_residuals: np.ndarray
    ma_inverses: np.ndarray  # (n, k̄₂+1)
    permutations: Tuple[PermutationFit, ...] = ()
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    # The centered panel the stage was run on; idiosyncratic == centered − common bit for bit
    centered: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.common.shape[0])

    @property
    def T(self) -> int:
        return int(self.common.shape[1])

    @property
    def n_perm(self) -> int:
        return len(self.permutations)


def common_autocovariances(
    Yc: np.ndarray, q: int, bandwidth: int, max_lag: int
) -> Tuple[AutocovarianceSet, EigenDecomposition]:
    """Autocovariances of the rank-q part of the lag-window spectrum"""
    T = Yc.shape[1]
    autocov = sample_autocov(Yc, min(bandwidth, T - 1))
    reduced, eig = truncate_to_rank(estimate_spectrum(autocov, bandwidth), q)
    return inverse_ft(reduced, max_lag), eig


def identification_rotation(H: np.ndarray, q: int) -> np.ndarray:
    """Orthogonal ℛ making H[:q]·ℛ lower triangular with positive diagonal"""
    Qm, Rm = linalg.qr(H[:q].T)
    signs = np.sign(np.diag(Rm))
    signs[signs == 0] = 1.0
    return Qm * signs


def _convolve_shocks(impulse: np.ndarray, shocks: np.ndarray) -> np.ndarray:
    """Σ_k B_k u_{t−k}"""
    T = shocks.shape[1]
    out = np.zeros((impulse.shape[1], T))
    for k in range(min(impulse.shape[0], T)):
        out[:, k:] += impulse[k] @ shocks[:, : T - k]
    return out


def _apply_permutations(
    Yc: np.ndarray, permutations: Sequence[PermutationFit]
) -> Tuple[np.ndarray, np.ndarray]:
    n = Yc.shape[0]
    shocks, innovations = [], []
    for fit in permutations:
        filtered = fit.var.filter(Yc)
        u = fit.loadings.T @ filtered / n
        shocks.append(u)
        innovations.append(fit.loadings @ u)
    return np.mean(shocks, axis=0), np.mean(innovations, axis=0)


def fit_stage(
    panel: Panel,
    q: int,
    bandwidth: int,
    n_perm: int,
    k1: int,
    k2: int,
    max_var_order: int = 2,
    max_ar_order: int = 5,
    rng: Optional[np.random.Generator] = None,
) -> GdfmModel:
    """Estimate one GDFM stage on `panel` (centered internally)"""
    panel.require_estimable()
    n, T = panel.n, panel.T
    if q < 1 or q + 1 > n:
        raise EstimationError(f"Need 1 ≤ q and q+1 ≤ n, got q={q}, n={n}")
    if not 1 <= bandwidth < T:
        raise EstimationError(f"Bandwidth {bandwidth} must satisfy 1 ≤ B < T={T}")
    if n_perm < 1:
        raise EstimationError(f"n_perm must be at least 1, got {n_perm}")
    if k1 < 0 or k2 < 0:
        raise EstimationError("Impulse-response truncation lags must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng()

    centered, means = center(panel)
    Yc = centered.values
    if np.all(Yc.var(axis=1) == 0):
        raise EstimationError("Every series is constant; nothing to estimate")

    var_order = min(max_var_order, bandwidth)
    common_autocov, eig = common_autocovariances(Yc, q, bandwidth, var_order)

    permutations: List[PermutationFit] = []
    impulses: List[np.ndarray] = []
    n_shrunk = n_ridged = 0
    for _ in range(n_perm):
        blocks = partition_blocks(n, q, rng)
        coefficients, shrunk, ridged = [], [], []
        for idx in blocks:
            fit = yule_walker_block(common_autocov, idx, var_order, sample_size=T)
            coefs, radius = stabilize(fit.coefficients)
            if radius >= 1.0:
                log.warning(f"Unstable block VAR (radius {radius:.3f}) shrunk to radius {STABLE_RADIUS}")
            if fit.ridged:
                log.debug(f"Ridge applied to a Yule-Walker block of size {len(idx)}")
            coefficients.append(coefs)
            shrunk.append(radius >= 1.0)
            ridged.append(fit.ridged)
        var = BlockVar(blocks, tuple(coefficients), tuple(shrunk), tuple(ridged))
        n_shrunk += sum(shrunk)
        n_ridged += sum(ridged)

        filtered = var.filter(Yc)
        _, vectors = linalg.eigh(filtered @ filtered.T / T, subset_by_index=[n - q, n - 1])
        H = np.sqrt(n) * vectors[:, ::-1]
        loadings = H @ identification_rotation(H, q)
        permutations.append(PermutationFit(var, loadings))
        impulses.append(var.impulse_responses(loadings, k1))

    if n_ridged:
        log.warning(f"Ridge regularisation applied to {n_ridged} ill-conditioned Yule-Walker blocks")

    shocks, innovations = _apply_permutations(Yc, permutations)
    impulse = np.mean(impulses, axis=0)
    common = _convolve_shocks(impulse, shocks)
    idiosyncratic = Yc - common

    ar_fits = [fit_ar(z, max_ar_order) for z in idiosyncratic]
    ar_coefficients = tuple(f.coefficients for f in ar_fits)

    return GdfmModel(
        q=q,
        means=means,
        loadings=np.mean([p.loadings for p in permutations], axis=0),
        impulse_responses=impulse,
        shocks=shocks,
        common_innovations=innovations,
        common=common,
        idiosyncratic=idiosyncratic,
        ar_coefficients=ar_coefficients,
        idio_residuals=np.vstack([f.residuals for f in ar_fits]),
        ma_inverses=np.vstack([ma_inverse(c, k2) for c in ar_coefficients]),
        permutations=tuple(permutations),
        diagnostics={
            "bandwidth": bandwidth,
            "var_orders": [p.var.orders for p in permutations],
            "ar_orders": [len(c) for c in ar_coefficients],
            "shrunk_blocks": int(n_shrunk),
            "ridged_blocks": int(n_ridged),
            "zero_frequency_eigenvalues": eig.eigenvalues[bandwidth][: q + 3].tolist(),
        },
        centered=Yc,
    )


def filter_stage(model: GdfmModel, panel: Panel) -> GdfmModel:
    """Run a fitted stage's filters over `panel` without re-estimating anything

    The panel is centered with the stored means, so it may extend the
    sample the model was fitted on.
    """
    if panel.n != model.n:
        raise EstimationError(f"Model has {model.n} series, panel has {panel.n}")
    if not model.permutations:
        raise EstimationError("Model carries no permutation filters to apply")
    Yc = panel.values - model.means[:, None]
    shocks, innovations = _apply_permutations(Yc, model.permutations)
    common = _convolve_shocks(model.impulse_responses, shocks)
    idiosyncratic = Yc - common
    residuals = np.vstack(
        [signal.lfilter(np.r_[1.0, -c], [1.0], z) for c, z in zip(model.ar_coefficients, idiosyncratic, strict=True)]
    )
    return GdfmModel(
        q=model.q,
        means=model.means,
        loadings=model.loadings,
        impulse_responses=model.impulse_responses,
        shocks=shocks,
        common_innovations=innovations,
        common=common,
        idiosyncratic=idiosyncratic,
        ar_coefficients=model.ar_coefficients,
        idio_residuals=residuals,
        ma_inverses=model.ma_inverses,
        permutations=model.permutations,
        diagnostics=dict(model.diagnostics),
        centered=Yc,
    )


# ─────────────────────────────── Prediction ───────────────────────────────── #


def one_step_common(model: GdfmModel) -> np.ndarray:
    """X̂_{T+1|T} = Σ_{k≥1} B_k û_{T−k+1}"""
    impulse, u = model.impulse_responses, model.shocks
    T = u.shape[1]
    out = np.zeros(impulse.shape[1])
    for k in range(1, min(impulse.shape[0] - 1, T) + 1):
        out += impulse[k] @ u[:, T - k]
    return out


def one_step_idio(model: GdfmModel) -> np.ndarray:
    """Ẑ_{i,T+1|T} = Σ_{k≥1} d_ik v̂_{i,T−k+1}"""
    d, v = model.ma_inverses, model.idio_residuals
    K = min(d.shape[1] - 1, v.shape[1])
    if K == 0:
        return np.zeros(v.shape[0])
    recent = v[:, -1 : -K - 1 : -1]  # v_T, v_{T−1}, …
    return np.sum(d[:, 1 : K + 1] * recent, axis=1)


# ─────────────────────────────── Serialization ────────────────────────────── #


def model_to_dict(model: GdfmModel) -> Dict[str, Any]:
    """JSON-ready representation of a fitted stage"""
    return {
        "q": model.q,
        "means": model.means.tolist(),
        "loadings": model.loadings.tolist(),
        "impulse_responses": model.impulse_responses.tolist(),
        "shocks": model.shocks.tolist(),
        "common_innovations": model.common_innovations.tolist(),
        "common": model.common.tolist(),
        "idiosyncratic": model.idiosyncratic.tolist(),
        "ar_coefficients": [c.tolist() for c in model.ar_coefficients],
        "idio_residuals": model.idio_residuals.tolist(),
        "ma_inverses": model.ma_inverses.tolist(),
        "permutations": [
            {
                "blocks": [b.tolist() for b in p.var.blocks],
                "coefficients": [c.tolist() for c in p.var.coefficients],
                "shrunk": list(p.var.shrunk),
                "ridged": list(p.var.ridged),
                "loadings": p.loadings.tolist(),
            }
            for p in model.permutations
        ],
        "diagnostics": model.diagnostics,
        "centered": None if model.centered is None else model.centered.tolist(),
    }


def model_from_dict(data: Dict[str, Any]) -> GdfmModel:
    try:
        q = int(data["q"])
        n = len(data["means"])
        permutations = tuple(
            PermutationFit(
                BlockVar(
                    tuple(np.asarray(b, dtype=int) for b in p["blocks"]),
                    tuple(np.asarray(c, dtype=float).reshape(-1, len(b), len(b)) for c, b in zip(p["coefficients"], p["blocks"], strict=True)),
                    tuple(p.get("shrunk", ())),
                    tuple(p.get("ridged", ())),
                ),
                np.asarray(p["loadings"], dtype=float).reshape(n, q),
            )
            for p in data.get("permutations", [])
        )
        return GdfmModel(
            q=q,
            means=np.asarray(data["means"], dtype=float),
            loadings=np.asarray(data["loadings"], dtype=float).reshape(n, q),
            impulse_responses=np.asarray(data["impulse_responses"], dtype=float).reshape(-1, n, q),
            shocks=np.asarray(data["shocks"], dtype=float).reshape(q, -1),
            common_innovations=np.asarray(data["common_innovations"], dtype=float),
            common=np.asarray(data["common"], dtype=float),
            idiosyncratic=np.asarray(data["idiosyncratic"], dtype=float),
            ar_coefficients=tuple(np.asarray(c, dtype=float) for c in data["ar_coefficients"]),
            idio_residuals=np.asarray(data["idio_residuals"], dtype=float),
            ma_inverses=np.asarray(data["ma_inverses"], dtype=float),
            permutations=permutations,
            diagnostics=dict(data.get("diagnostics", {})),
            centered=None if data.get("centered") is None else np.asarray(data["centered"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise EstimationError(f"Malformed model data: {e}") from None
