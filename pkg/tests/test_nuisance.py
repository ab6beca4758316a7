import numpy as np
import pytest
import torch

from orlearners.data import Dataset, DgpKind, DgpSpec, generate
from orlearners.errors import OracleUnavailable, ShapeMismatch, SingleArmData
from orlearners.models.base import Family
from orlearners.nn import as_tensor
from orlearners.nuisance import (
    NetworkHyper,
    NuisancePolicy,
    NuisanceValues,
    OutcomeModel,
    PropensityModel,
    Provenance,
    assemble_nuisances,
    clipped_inverse_weight,
    fit_outcome_net,
    fit_propensity,
    needs_fresh_outcome,
    oracle_nuisances,
)
from orlearners.stage0 import train_representation


def test_clipped_weights_by_example():
    A = np.array([1, 1, 0])
    pi1 = np.array([0.5, 0.01, 0.5])
    assert clipped_inverse_weight(1, A, pi1).tolist() == [2.0, 0.0, 0.0]
    assert clipped_inverse_weight(0, np.array([0]), np.array([0.75])).tolist() == [4.0]
    # pi_0 = 0.96 passes, pi_0 = 0.04 is clipped
    assert clipped_inverse_weight(0, np.array([0, 0]), np.array([0.04, 0.96])).tolist() == pytest.approx([1 / 0.96, 0.0])


def test_clipped_weight_support():
    rng = np.random.default_rng(0)
    A = rng.integers(0, 2, size=1000)
    pi1 = rng.uniform(0.0, 1.0, size=1000)
    for arm in (0, 1):
        weights = clipped_inverse_weight(arm, A, pi1)
        nonzero = weights[weights > 0]
        assert np.all((nonzero >= 1.0) & (nonzero <= 20.0))
        assert np.all(weights[A != arm] == 0.0)


def test_clipped_weights_keep_gradient():
    pi1 = as_tensor([0.5, 0.25]).requires_grad_(True)
    weights = clipped_inverse_weight(1, torch.tensor([1, 1]), pi1)
    weights.sum().backward()
    assert pi1.grad.tolist() == pytest.approx([-4.0, -16.0])


def test_propensity_needs_both_arms(fast_hyper):
    data = Dataset(np.arange(6.0)[:, None], np.ones(6, dtype=int), np.zeros(6))
    with pytest.raises(SingleArmData):
        fit_propensity(data, fast_hyper)


def test_propensity_outputs_are_probabilities(kallus_small, fast_hyper):
    model = fit_propensity(kallus_small, fast_hyper, seed=0)
    pi1 = model.predict(kallus_small.X)
    assert pi1.shape == (kallus_small.n,)
    assert np.all((pi1 >= 1e-6) & (pi1 <= 1.0 - 1e-6))
    assert len(model.history) == fast_hyper.epochs


def test_fits_are_deterministic(kallus_small, fast_hyper):
    first = fit_outcome_net(kallus_small, fast_hyper, seed=5)
    second = fit_outcome_net(kallus_small, fast_hyper, seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(first.predict(kallus_small.X), second.predict(kallus_small.X)))


def test_oracle_uses_stored_columns(kallus_small):
    values = oracle_nuisances(kallus_small).evaluate(kallus_small.X)
    assert np.array_equal(values.mu0, kallus_small.mu0)
    assert np.array_equal(values.mu1, kallus_small.mu1)
    assert np.array_equal(values.pi1, kallus_small.pi1)


def test_oracle_closed_form_elsewhere(kallus_small):
    values = oracle_nuisances(kallus_small).evaluate(np.zeros((1, 2)))
    assert values.mu1[0] == pytest.approx(1.0)
    assert values.mu0[0] == pytest.approx(-1.0)


def test_oracle_unavailable():
    plain = Dataset(np.zeros((2, 1)), np.array([0, 1]), np.zeros(2))
    with pytest.raises(OracleUnavailable):
        oracle_nuisances(plain)
    image = generate(DgpSpec(kind=DgpKind.HCMNIST_LIKE, n=20, seed=0, image_dim=4))
    nuisances = oracle_nuisances(image)
    nuisances.evaluate(image.X)
    with pytest.raises(OracleUnavailable):
        nuisances.evaluate(image.X[:5])


def test_mu_x_mixes_arms():
    values = NuisanceValues(np.array([1.0]), np.array([3.0]), np.array([0.25]))
    assert values.mu_x.tolist() == [1.5]
    assert values.mu(1).tolist() == [3.0]


@pytest.mark.parametrize(
    "family, alpha, invertible, expected",
    [
        (Family.TARNET, 1.0, False, False),
        (Family.CFR, 0.0, False, False),
        (Family.CFR, 0.1, True, False),
        (Family.CFR, 0.1, False, True),
        (Family.BNN, 0.1, False, True),
    ],
)
def test_needs_fresh_outcome(make_spec, family, alpha, invertible, expected):
    assert needs_fresh_outcome(make_spec(family, invertible=invertible, alpha=alpha)) is expected


def test_auto_reuses_heads_without_balancing(kallus_small, make_spec, fast_hyper):
    tr = train_representation(make_spec(Family.TARNET), kallus_small, seed=0)
    nuisances = assemble_nuisances(tr, kallus_small, NuisancePolicy.AUTO, fast_hyper, fast_hyper, seed=0)
    assert nuisances.provenance == Provenance.REPRESENTATION_HEADS
    values = nuisances.evaluate(kallus_small.X)
    heads = tr.heads(kallus_small.X)
    assert np.array_equal(values.mu0, heads[:, 0])
    assert np.array_equal(values.mu1, heads[:, 1])
    with pytest.raises(ShapeMismatch):
        nuisances.evaluate(np.zeros((2, 3)))


def test_auto_fits_outcome_net_for_balanced_representation(kallus_small, make_spec, fast_hyper):
    tr = train_representation(make_spec(Family.CFR, alpha=0.1), kallus_small, seed=0)
    propensity = fit_propensity(kallus_small, fast_hyper, seed=0)
    nuisances = assemble_nuisances(tr, kallus_small, "auto", fast_hyper, fast_hyper, seed=0, propensity=propensity)
    assert nuisances.provenance == Provenance.FRESH_OUTCOME_NET
    assert nuisances.propensity == propensity.predict


def test_bwcfr_propensity_is_reused(kallus_small, make_spec, fast_hyper):
    own = fit_propensity(kallus_small, fast_hyper, seed=1)
    other = fit_propensity(kallus_small, fast_hyper, seed=2)
    tr = train_representation(make_spec(Family.BWCFR, alpha=0.1), kallus_small, seed=0, covariate_propensity=own)
    nuisances = assemble_nuisances(tr, kallus_small, "reuse_heads", fast_hyper, fast_hyper, seed=0, propensity=other)
    assert nuisances.propensity == own.predict


def test_oracle_policy(kallus_small, make_spec):
    tr = train_representation(make_spec(Family.TARNET, epochs=1), kallus_small, seed=0)
    assert assemble_nuisances(tr, kallus_small, "oracle").provenance == Provenance.ORACLE


def test_nuisance_models_save_load(tmp_path, kallus_small, fast_hyper):
    propensity = fit_propensity(kallus_small, fast_hyper, seed=0)
    outcome = fit_outcome_net(kallus_small, fast_hyper, seed=0)
    loaded_p = PropensityModel.load(propensity.save(tmp_path / "p.json"))
    loaded_o = OutcomeModel.load(outcome.save(tmp_path / "o.json"))
    assert loaded_p.hyper == fast_hyper
    assert np.array_equal(loaded_p.predict(kallus_small.X), propensity.predict(kallus_small.X))
    assert all(np.array_equal(a, b) for a, b in zip(loaded_o.predict(kallus_small.X), outcome.predict(kallus_small.X)))


@pytest.mark.slow
def test_propensity_network_is_calibrated():
    data = generate(DgpSpec(n=5000, seed=9))
    model = fit_propensity(data, NetworkHyper(hidden=8, epochs=40, learning_rate=0.01), seed=0)
    assert np.mean(np.abs(model.predict(data.X) - data.pi1)) < 0.08
