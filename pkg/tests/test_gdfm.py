"""Tests for one GDFM estimation stage"""

import json
from typing import Callable, Tuple

import numpy as np
import pytest
from scipy import signal

from gdfm_vol.errors import EstimationError, YuleWalkerError
from gdfm_vol.gdfm import (
    GdfmModel,
    companion_radius,
    filter_stage,
    fit_ar,
    fit_stage,
    identification_rotation,
    ma_inverse,
    model_from_dict,
    model_to_dict,
    one_step_common,
    one_step_idio,
    partition_blocks,
    stabilize,
    yule_walker_block,
)
from gdfm_vol.panel_io import Panel, center
from gdfm_vol.spectral import AutocovarianceSet


def var1_autocovariances(A: np.ndarray, sigma: np.ndarray, lags: int) -> AutocovarianceSet:
    """Exact Γ_k = A^k Γ_0 for a VAR(1) with innovation covariance sigma"""
    b = A.shape[0]
    vec_gamma0 = np.linalg.solve(np.eye(b * b) - np.kron(A, A), sigma.ravel())
    gamma0 = vec_gamma0.reshape(b, b)
    gammas = [np.linalg.matrix_power(A, k) @ gamma0 for k in range(lags + 1)]
    return AutocovarianceSet.from_nonnegative(np.stack(gammas), T=1000)


def one_factor_panel(n: int, T: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    loadings = rng.uniform(0.5, 1.5, size=n) * rng.choice([-1.0, 1.0], size=n)
    u = rng.standard_normal(T)
    return loadings, np.outer(loadings, u)


# ─────────────────────────────── Block VAR ────────────────────────────────── #


def test_yule_walker_recovers_var1_exactly() -> None:
    A = 0.5 * np.eye(2)
    autocov = var1_autocovariances(A, np.eye(2), 2)
    fit = yule_walker_block(autocov, [0, 1], max_order=1, order=1)
    np.testing.assert_allclose(fit.coefficients[0], A, atol=1e-10)
    assert not fit.ridged


def test_yule_walker_white_noise_gives_zero() -> None:
    gammas = np.stack([np.eye(2), np.zeros((2, 2)), np.zeros((2, 2))])
    fit = yule_walker_block(AutocovarianceSet.from_nonnegative(gammas, T=500), [0, 1], max_order=2)
    np.testing.assert_allclose(fit.coefficients, 0.0, atol=1e-12)
    assert fit.order == 1
    assert set(fit.bic) == {1, 2}


def test_yule_walker_bic_prefers_true_order() -> None:
    A = np.array([[0.5, 0.1], [0.0, 0.3]])
    autocov = var1_autocovariances(A, np.eye(2), 3)
    fit = yule_walker_block(autocov, [0, 1], max_order=3, sample_size=5000)
    assert fit.order == 1


def test_yule_walker_ridges_singular_blocks() -> None:
    b = np.array([1.0, 2.0])
    gammas = np.stack([np.outer(b, b), 0.5 * np.outer(b, b)])
    fit = yule_walker_block(AutocovarianceSet.from_nonnegative(gammas, T=100), [0, 1], max_order=1)
    assert fit.ridged
    np.testing.assert_allclose(fit.coefficients[0] @ b, 0.5 * b, rtol=1e-6)


def test_yule_walker_errors() -> None:
    zeros = AutocovarianceSet.from_nonnegative(np.zeros((2, 2, 2)), T=100)
    with pytest.raises(YuleWalkerError, match="larger bandwidth"):
        yule_walker_block(zeros, [0, 1], max_order=1)
    population = AutocovarianceSet.from_nonnegative(np.stack([np.eye(2), 0.5 * np.eye(2)]))
    with pytest.raises(YuleWalkerError, match="sample size"):
        yule_walker_block(population, [0, 1], max_order=1)
    with pytest.raises(YuleWalkerError):
        yule_walker_block(population, [0, 1], max_order=1, order=2)


def test_companion_radius_and_stabilize() -> None:
    assert companion_radius(np.array([[[0.5]]])) == pytest.approx(0.5)
    # x_t = 1.5x_{t−1} − 0.56x_{t−2} has roots 0.8 and 0.7
    assert companion_radius(np.array([[[1.5]], [[-0.56]]])) == pytest.approx(0.8)

    stable, radius = stabilize(np.array([[[0.5]]]))
    assert radius == pytest.approx(0.5)
    np.testing.assert_array_equal(stable, [[[0.5]]])

    shrunk, radius = stabilize(np.array([[[1.2]], [[0.0]]]))
    assert radius == pytest.approx(1.2)
    assert companion_radius(shrunk) == pytest.approx(0.99)


def test_partition_blocks_cover_every_series(rng: np.random.Generator) -> None:
    blocks = partition_blocks(11, 2, rng)
    assert len(blocks) == 11 // 3
    assert list(blocks[0][:2]) == [0, 1]
    assert sorted(np.concatenate(blocks).tolist()) == list(range(11))
    assert len(blocks[-1]) == 3 + 11 % 3


def test_identification_rotation(rng: np.random.Generator) -> None:
    H = rng.standard_normal((6, 3))
    R = identification_rotation(H, 3)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    top = H[:3] @ R
    np.testing.assert_allclose(np.triu(top, 1), 0.0, atol=1e-12)
    assert np.all(np.diag(top) > 0)


# ─────────────────────────────── Idiosyncratic AR ─────────────────────────── #


def test_fit_ar_recovers_coefficient() -> None:
    z = signal.lfilter([1.0], [1.0, -0.6], np.random.default_rng(3).standard_normal(4000))
    fit = fit_ar(z, 5)
    assert len(fit.coefficients) >= 1
    assert fit.coefficients[0] == pytest.approx(0.6, abs=0.08)
    assert fit.residuals.shape == z.shape


def test_fit_ar_white_noise_order_zero() -> None:
    fit = fit_ar(np.random.default_rng(4).standard_normal(2000), 5)
    assert len(fit.coefficients) <= 1
    assert np.all(np.abs(fit.coefficients) < 0.1)


def test_ma_inverse_of_ar1() -> None:
    np.testing.assert_allclose(ma_inverse(np.array([0.5]), 3), [1.0, 0.5, 0.25, 0.125])
    np.testing.assert_allclose(ma_inverse(np.zeros(0), 2), [1.0, 0.0, 0.0])


# ─────────────────────────────── Prediction ───────────────────────────────── #


def test_one_step_common_hand_value(stage_factory: Callable[..., GdfmModel]) -> None:
    model = stage_factory(
        impulse=np.array([[[1.0]], [[0.5]]]),
        shocks=np.array([[0.0, 2.0]]),
        ma_inverses=np.array([[1.0]]),
        residuals=np.zeros((1, 2)),
    )
    assert one_step_common(model)[0] == pytest.approx(1.0)


def test_one_step_common_without_dynamics_is_zero(stage_factory: Callable[..., GdfmModel]) -> None:
    model = stage_factory(
        impulse=np.array([[[1.0]]]),
        shocks=np.array([[3.0, -1.0]]),
        ma_inverses=np.array([[1.0]]),
        residuals=np.zeros((1, 2)),
    )
    assert one_step_common(model)[0] == 0.0


def test_one_step_idio_hand_value(stage_factory: Callable[..., GdfmModel]) -> None:
    model = stage_factory(
        impulse=np.zeros((1, 1, 1)),
        shocks=np.zeros((1, 3)),
        ma_inverses=ma_inverse(np.array([0.5]), 5)[None, :],
        residuals=np.array([[0.0, 0.0, 1.0]]),
    )
    assert one_step_idio(model)[0] == pytest.approx(0.5)


# ─────────────────────────────── Stage estimation ─────────────────────────── #


def test_noiseless_one_factor_recovery(rng: np.random.Generator) -> None:
    """Common component and loadings of an exact one-factor panel, up to sign"""
    n, T = 20, 2000
    loadings, X = one_factor_panel(n, T, seed=8)
    model = fit_stage(Panel(X), q=1, bandwidth=3, n_perm=3, k1=10, k2=5, max_var_order=1, rng=rng)

    Xc = X - X.mean(axis=1, keepdims=True)
    assert np.max(np.abs(model.common - Xc)) <= 0.05

    truth = loadings * np.sqrt(n) / np.linalg.norm(loadings)
    estimate = model.loadings[:, 0]
    sign = np.sign(estimate @ truth)
    assert np.linalg.norm(estimate - sign * truth) / np.sqrt(n) <= 0.05


def assert_exact_decomposition(model: GdfmModel, centered: np.ndarray) -> None:
    """Idiosyncratic is the centered panel minus common, bit for bit; the float sum is off by at most rounding"""
    np.testing.assert_array_equal(model.centered, centered)
    np.testing.assert_array_equal(model.idiosyncratic, centered - model.common)
    bound = np.spacing(np.abs(model.idiosyncratic)) + np.spacing(np.abs(centered))
    assert np.all(np.abs(model.common + model.idiosyncratic - centered) <= bound)


def test_fit_stage_decomposition_identity(small_panel: Panel, rng: np.random.Generator) -> None:
    model = fit_stage(small_panel, q=1, bandwidth=2, n_perm=2, k1=5, k2=5, rng=rng)
    assert_exact_decomposition(model, center(small_panel)[0].values)
    assert model.impulse_responses.shape == (6, small_panel.n, 1)
    assert model.ma_inverses.shape == (small_panel.n, 6)
    assert model.n_perm == 2
    assert model.diagnostics["bandwidth"] == 2


@pytest.mark.parametrize("seed", range(10))
def test_decomposition_identity_on_gaussian_panels(seed: int) -> None:
    X = np.random.default_rng(seed).standard_normal((30, 200))
    model = fit_stage(Panel(X), q=2, bandwidth=3, n_perm=2, k1=5, k2=5, rng=np.random.default_rng(seed))
    assert_exact_decomposition(model, center(Panel(X))[0].values)

    refiltered = filter_stage(model, Panel(X))
    assert_exact_decomposition(refiltered, X - model.means[:, None])


def test_fitted_loadings_are_identified(small_panel: Panel, rng: np.random.Generator) -> None:
    q = 2
    model = fit_stage(small_panel, q=q, bandwidth=2, n_perm=3, k1=5, k2=5, rng=rng)
    for fit in model.permutations:
        np.testing.assert_allclose(fit.loadings.T @ fit.loadings / small_panel.n, np.eye(q), atol=1e-10)
        top = fit.loadings[:q]
        np.testing.assert_allclose(np.triu(top, 1), 0.0, atol=1e-10)
        assert np.all(np.diag(top) > 0)
    B0 = model.impulse_responses[0]
    np.testing.assert_allclose(B0, model.loadings)
    np.testing.assert_allclose(np.triu(B0[:q], 1), 0.0, atol=1e-10)
    assert np.all(np.diag(B0[:q]) > 0)


def test_loading_signs_agree_across_seeds() -> None:
    n, T = 20, 2000
    _, X = one_factor_panel(n, T, seed=8)
    estimates = [
        fit_stage(Panel(X), q=1, bandwidth=3, n_perm=2, k1=10, k2=5, max_var_order=1, rng=np.random.default_rng(s)).loadings[:, 0]
        for s in range(3)
    ]
    for estimate in estimates:
        assert estimate[0] > 0
        assert np.corrcoef(estimate, estimates[0])[0, 1] >= 0.95


@pytest.mark.slow
def test_common_component_is_stable_in_the_number_of_permutations() -> None:
    _, X = one_factor_panel(20, 2000, seed=8)
    fits = {
        n_perm: fit_stage(Panel(X), q=1, bandwidth=3, n_perm=n_perm, k1=10, k2=5, max_var_order=1, rng=np.random.default_rng(n_perm))
        for n_perm in (10, 20)
    }
    assert np.max(np.abs(fits[10].common - fits[20].common)) <= 0.1


def test_fit_stage_is_seed_deterministic(small_panel: Panel) -> None:
    first = fit_stage(small_panel, 1, 2, 2, 5, 5, rng=np.random.default_rng(9))
    second = fit_stage(small_panel, 1, 2, 2, 5, 5, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(first.common, second.common)


def test_fit_stage_argument_errors(small_panel: Panel) -> None:
    with pytest.raises(EstimationError):
        fit_stage(small_panel, q=small_panel.n, bandwidth=2, n_perm=1, k1=5, k2=5)
    with pytest.raises(EstimationError):
        fit_stage(small_panel, q=1, bandwidth=small_panel.T, n_perm=1, k1=5, k2=5)
    with pytest.raises(EstimationError):
        fit_stage(small_panel, q=1, bandwidth=2, n_perm=0, k1=5, k2=5)
    with pytest.raises(EstimationError, match="constant"):
        fit_stage(Panel(np.ones((3, 40))), q=1, bandwidth=2, n_perm=1, k1=5, k2=5)
    with pytest.raises(EstimationError, match="too small"):
        fit_stage(Panel(np.ones((3, 5))), q=1, bandwidth=2, n_perm=1, k1=5, k2=5)


def test_filter_stage_reproduces_the_fit(small_panel: Panel, rng: np.random.Generator) -> None:
    model = fit_stage(small_panel, q=1, bandwidth=2, n_perm=2, k1=5, k2=5, rng=rng)
    refiltered = filter_stage(model, small_panel)
    np.testing.assert_allclose(refiltered.common, model.common, atol=1e-12)
    np.testing.assert_allclose(refiltered.idio_residuals, model.idio_residuals, atol=1e-12)


def test_filter_stage_extends_the_sample(small_panel: Panel, rng: np.random.Generator) -> None:
    model = fit_stage(small_panel.head(100), q=1, bandwidth=2, n_perm=2, k1=5, k2=5, rng=rng)
    extended = filter_stage(model, small_panel)
    assert extended.T == small_panel.T
    np.testing.assert_allclose(extended.common[:, :100], model.common, atol=1e-12)
    with pytest.raises(EstimationError):
        filter_stage(model, Panel(small_panel.values[:3]))


def test_model_serialization_preserves_predictions(small_panel: Panel, rng: np.random.Generator) -> None:
    model = fit_stage(small_panel, q=1, bandwidth=2, n_perm=2, k1=5, k2=5, rng=rng)
    restored = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    np.testing.assert_allclose(one_step_common(restored), one_step_common(model))
    np.testing.assert_allclose(one_step_idio(restored), one_step_idio(model))
    np.testing.assert_allclose(filter_stage(restored, small_panel).common, model.common, atol=1e-12)
    with pytest.raises(EstimationError, match="Malformed"):
        model_from_dict({"q": 1})
