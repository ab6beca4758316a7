"""
Shared fixtures: small synthetic samples and fast learner specs.
"""
import pytest

from orlearners.balance import BalancingSpec, IpmKind
from orlearners.config import get_settings
from orlearners.data import DgpSpec, generate, generate_split
from orlearners.harness.config import ExperimentConfig
from orlearners.models.base import Family, RepLearnerSpec
from orlearners.nuisance import NetworkHyper


@pytest.fixture
def kallus_small():
    return generate(DgpSpec(n=256, seed=7))


@pytest.fixture
def kallus_split():
    return generate_split(DgpSpec(n=200, seed=3), 100)


@pytest.fixture
def fast_hyper() -> NetworkHyper:
    return NetworkHyper(hidden=4, epochs=3, batch_size=64)


@pytest.fixture
def make_spec():
    """Factory for short-training RepLearnerSpecs."""

    def factory(
        family: Family = Family.TARNET,
        invertible: bool = False,
        alpha: float = 0.0,
        metric: IpmKind = IpmKind.MMD,
        epochs: int = 3,
        **overrides,
    ) -> RepLearnerSpec:
        overrides.setdefault("rep_dim", None if invertible else 2)
        return RepLearnerSpec(
            family=family,
            invertible=invertible,
            balancing=BalancingSpec(metric=metric, alpha=alpha, iterations=20),
            epochs=epochs,
            **overrides,
        )

    return factory


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    return ExperimentConfig(
        n_train=64,
        n_test=32,
        seeds=[0, 1],
        families=[Family.TARNET],
        epochs=2,
        nuisance_epochs=2,
        target_epochs=2,
        selectors=["Phi"],
        losses=["DRK", "R"],
        wm_iterations=20,
        out_dir=tmp_path / "results",
    )


@pytest.fixture
def settings_env(monkeypatch, tmp_path):
    """Point ORL_* settings at a temporary directory; the settings cache is reset around the test."""
    monkeypatch.setenv("ORL_MODELS_DIR", str(tmp_path / "models"))
    monkeypatch.delenv("ORL_OUT_DIR", raising=False)
    get_settings.cache_clear()
    yield monkeypatch
    get_settings.cache_clear()
