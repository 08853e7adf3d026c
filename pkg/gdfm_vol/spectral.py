"""
Lag-window spectral estimation and frequency-domain principal components

The frequency grid is θ_h = πh/B for |h| ≤ B (2B+1 points, no padding).
Matrices are stored stacked along axis 0 with index h + B.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from .console import get_logger
from .errors import SpectralError
from .panel_io import Panel

log = get_logger("spectral")

HERMITIAN_TOL = 1e-10
IMAG_RESIDUE_TOL = 1e-6
EIG_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class AutocovarianceSet:
    """Real n×n matrices Γ_k for k = −L…L, stacked with index k + L"""

    gammas: np.ndarray
    T: Optional[int] = None  # sample length when estimated, None for population values

    @property
    def max_lag(self) -> int:
        return (self.gammas.shape[0] - 1) // 2

    @property
    def n(self) -> int:
        return int(self.gammas.shape[1])

    def lag(self, k: int) -> np.ndarray:
        if abs(k) > self.max_lag:
            raise SpectralError(f"Lag {k} outside the available range ±{self.max_lag}")
        return self.gammas[k + self.max_lag]

    @classmethod
    def from_nonnegative(cls, gammas: np.ndarray, T: Optional[int] = None) -> "AutocovarianceSet":
        """Build the full set from Γ_0…Γ_L using Γ_{−k} = Γ_kᵀ"""
        gammas = np.asarray(gammas, dtype=float)
        negative = np.transpose(gammas[:0:-1], (0, 2, 1))
        return cls(np.concatenate([negative, gammas], axis=0), T)


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    bandwidth: int
    matrices: np.ndarray  # (2B+1, n, n) complex

    @property
    def n(self) -> int:
        return int(self.matrices.shape[1])

    @property
    def frequencies(self) -> np.ndarray:
        B = self.bandwidth
        return np.pi * np.arange(-B, B + 1) / B

    def at(self, h: int) -> np.ndarray:
        return self.matrices[h + self.bandwidth]


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    eigenvalues: np.ndarray  # (2B+1, n) real, descending
    eigenvectors: np.ndarray  # (2B+1, n, k) complex, orthonormal columns

    @property
    def rank(self) -> int:
        return int(self.eigenvectors.shape[2])


def bartlett_kernel(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Triangular lag window: 1−|x| on [−1, 1], zero outside"""
    ax = np.abs(np.asarray(x, dtype=float))
    weights = np.where(ax <= 1.0, 1.0 - ax, 0.0)
    return float(weights) if weights.ndim == 0 else weights


def _as_matrix(panel: Union[Panel, np.ndarray]) -> np.ndarray:
    if isinstance(panel, Panel):
        return panel.values
    values = np.asarray(panel, dtype=float)
    return values[None, :] if values.ndim == 1 else values


def sample_autocov(panel: Union[Panel, np.ndarray], max_lag: int) -> AutocovarianceSet:
    """Γ_k = T⁻¹ Σ_t Y_t Y_{t−k}′ for |k| ≤ max_lag (divisor T at every lag)

    The panel is expected to be centered already.
    """
    Y = _as_matrix(panel)
    T = Y.shape[1]
    if not 0 <= max_lag < T:
        raise SpectralError(f"max_lag={max_lag} must satisfy 0 ≤ max_lag < T={T}")
    gammas = np.stack([Y[:, k:] @ Y[:, : T - k].T / T for k in range(max_lag + 1)])
    return AutocovarianceSet.from_nonnegative(gammas, T)


def estimate_spectrum(autocov: AutocovarianceSet, bandwidth: int) -> SpectralDensity:
    """Bartlett lag-window estimate Σ(θ_h) = (2π)⁻¹ Σ_k K(k/B) e^{−ikθ_h} Γ_k"""
    B = int(bandwidth)
    if B < 1:
        raise SpectralError(f"Bandwidth must be positive, got {B}")
    if autocov.T is not None and B >= autocov.T:
        raise SpectralError(f"Bandwidth B={B} must be smaller than T={autocov.T}")
    # K(±B/B) = 0, so lags up to B−1 carry all the weight
    needed = B - 1 if autocov.T is None else min(B - 1, autocov.T - 1)
    if autocov.max_lag < needed:
        raise SpectralError(f"Autocovariances cover ±{autocov.max_lag} lags but bandwidth {B} needs ±{needed}")

    L = min(B, autocov.max_lag)
    ks = np.arange(-L, L + 1)
    gammas = autocov.gammas[autocov.max_lag - L : autocov.max_lag + L + 1]
    theta = np.pi * np.arange(-B, B + 1) / B
    weights = np.exp(-1j * np.outer(theta, ks)) * bartlett_kernel(ks / B)
    matrices = np.einsum("hk,kij->hij", weights, gammas) / (2 * np.pi)

    matrices = 0.5 * (matrices + np.conj(np.transpose(matrices, (0, 2, 1))))
    matrices[:B] = np.conj(matrices[B + 1 :][::-1])
    return SpectralDensity(B, matrices)


def _fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-modulus entry is real positive"""
    idx = np.argmax(np.abs(vectors), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    moduli = np.abs(pivots)
    phases = np.where(moduli > 0, pivots / np.where(moduli > 0, moduli, 1.0), 1.0)
    return vectors / phases


def _hermitian_eig(matrix: np.ndarray, h: int) -> Tuple[np.ndarray, np.ndarray]:
    try:
        values, vectors = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as e:
        raise SpectralError(f"Eigendecomposition failed at frequency index h={h}: {e}") from None
    values, vectors = values[::-1], vectors[:, ::-1]
    scale = max(np.abs(values).max(initial=0.0), 1.0)
    residual = np.abs(matrix @ vectors - vectors * values).max(initial=0.0)
    if residual > EIG_RESIDUAL_TOL * scale:
        raise SpectralError(f"Eigendecomposition residual {residual:.2e} too large at frequency index h={h}")
    return values, _fix_phase(vectors)


def truncate_to_rank(spec: SpectralDensity, k: int) -> Tuple[SpectralDensity, EigenDecomposition]:
    """Rank-k reconstruction P Λ P† at every grid frequency"""
    n, B = spec.n, spec.bandwidth
    if not 1 <= k < n:
        raise SpectralError(f"Rank k={k} must satisfy 1 ≤ k < n={n}")

    values = np.empty((2 * B + 1, n))
    vectors = np.empty((2 * B + 1, n, k), dtype=complex)
    reduced = np.empty_like(spec.matrices)
    for h in range(B + 1):
        lam, P = _hermitian_eig(spec.at(h), h)
        Pk = P[:, :k]
        S = (Pk * lam[:k]) @ Pk.conj().T
        S = 0.5 * (S + S.conj().T)
        values[B + h], vectors[B + h], reduced[B + h] = lam, Pk, S
        if h > 0:
            values[B - h], vectors[B - h], reduced[B - h] = lam, Pk.conj(), S.conj()
    return SpectralDensity(B, reduced), EigenDecomposition(values, vectors)


def inverse_ft(spec: SpectralDensity, max_lag: int) -> AutocovarianceSet:
    """Γ_k = (π/B) Σ_{|h|≤B} e^{ikθ_h} Σ(θ_h) for |k| ≤ max_lag

    Both endpoints ±B enter with the full weight π/B, so θ = ±π is counted twice.
    """
    B = spec.bandwidth
    if not 0 <= max_lag <= B:
        raise SpectralError(f"Requested lags ±{max_lag} exceed the bandwidth {B}")
    ks = np.arange(max_lag + 1)
    weights = (np.pi / B) * np.exp(1j * np.outer(ks, spec.frequencies))
    gammas = np.einsum("kh,hij->kij", weights, spec.matrices)

    residue = np.abs(gammas.imag).max(initial=0.0)
    scale = max(np.abs(gammas.real).max(initial=0.0), 1.0)
    if residue > IMAG_RESIDUE_TOL * scale:
        raise SpectralError(f"Inverse transform left an imaginary residue of {residue:.2e}; input is not Hermitian")
    return AutocovarianceSet.from_nonnegative(gammas.real)


def scree(spec: SpectralDensity, top: int) -> pd.DataFrame:
    """Eigenvalues divided by the largest one, for each nonnegative grid frequency"""
    n, B = spec.n, spec.bandwidth
    if not 1 <= top <= n:
        raise SpectralError(f"top={top} must satisfy 1 ≤ top ≤ n={n}")
    rows = []
    for h in range(B + 1):
        lam = np.linalg.eigvalsh(spec.at(h))[::-1][:top]
        largest = lam[0]
        normalized = lam / largest if largest > 0 else np.zeros_like(lam)
        for j, value in enumerate(normalized, start=1):
            rows.append({"frequency": np.pi * h / B, "index": j, "normalized_eigenvalue": float(value)})
    return pd.DataFrame(rows)
