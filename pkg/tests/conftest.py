"""Shared fixtures: a small simulated panel, a fast pipeline config and hand-built stages"""

from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pytest

from gdfm_vol.gdfm import GdfmModel
from gdfm_vol.panel_io import Panel, PipelineConfig, save_panel, write_json
from gdfm_vol.simulate import DgpConfig, generate

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def configs_dir() -> Path:
    return REPO_ROOT / "configs"


@pytest.fixture
def small_config() -> PipelineConfig:
    """Short lags and two permutations so a full fit takes well under a second"""
    return PipelineConfig(
        q=1,
        Q=1,
        B_T=2,
        M_T=4,
        kappa_T=0.1,
        k1_bar=5,
        k2_bar=5,
        k1_star=5,
        k2_star=5,
        n_perm=2,
        max_ar_order=2,
        seed=11,
        refit_every=5,
        windows=[None],
        alphas=[0.1],
    )


@pytest.fixture(scope="session")
def small_panel() -> Panel:
    return generate(DgpConfig(n=8, T=120, burn_in=30, seed=5)).panel


@pytest.fixture
def panel_csv(tmp_path: Path, small_panel: Panel) -> Path:
    return save_panel(small_panel, tmp_path / "panel.csv")


@pytest.fixture
def config_file(tmp_path: Path, small_config: PipelineConfig) -> Path:
    return write_json(small_config, tmp_path / "pipeline.json")


@pytest.fixture
def stage_factory() -> Callable[..., GdfmModel]:
    """Build a GdfmModel by hand from impulse responses, shocks and MA inverses"""

    def build(
        impulse: np.ndarray,
        shocks: np.ndarray,
        ma_inverses: np.ndarray,
        residuals: np.ndarray,
        means: Optional[np.ndarray] = None,
        common_innovations: Optional[np.ndarray] = None,
    ) -> GdfmModel:
        impulse = np.asarray(impulse, dtype=float)
        shocks = np.asarray(shocks, dtype=float)
        residuals = np.asarray(residuals, dtype=float)
        n, T = residuals.shape
        q = impulse.shape[2]
        zeros = np.zeros((n, T))
        return GdfmModel(
            q=q,
            means=np.zeros(n) if means is None else np.asarray(means, dtype=float),
            loadings=impulse[0],
            impulse_responses=impulse,
            shocks=shocks,
            common_innovations=zeros if common_innovations is None else np.asarray(common_innovations, dtype=float),
            common=zeros,
            idiosyncratic=zeros.copy(),
            ar_coefficients=tuple(np.zeros(0) for _ in range(n)),
            idio_residuals=residuals,
            ma_inverses=np.asarray(ma_inverses, dtype=float),
        )

    return build
