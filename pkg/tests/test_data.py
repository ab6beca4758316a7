import math

import numpy as np
import pytest
from scipy.special import expit

from orlearners.data import (
    Dataset,
    DgpKind,
    DgpSpec,
    OracleDataset,
    generate,
    generate_split,
    hcmnist_outcome_means,
    hcmnist_propensity,
    kallus_oracle,
    load_csv,
    read_covariates,
    save_csv,
)
from orlearners.errors import (
    DataValidationError,
    LengthMismatch,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
)


def test_kallus_oracle_at_origin():
    mu0, mu1, pi1 = kallus_oracle(np.zeros((1, 2)))
    assert mu1[0] == pytest.approx(1.0)
    assert mu0[0] == pytest.approx(-1.0)
    assert mu1[0] - mu0[0] == pytest.approx(2.0)
    assert pi1[0] == pytest.approx(expit(0.5))
    assert pi1[0] == pytest.approx(0.62246, abs=1e-5)


def test_generation_is_deterministic():
    first = generate(DgpSpec(n=100, seed=11))
    second = generate(DgpSpec(n=100, seed=11))
    for name in ("X", "A", "Y", "mu0", "mu1", "pi1", "y0", "y1", "tau"):
        assert np.array_equal(getattr(first, name), getattr(second, name))
    other = generate(DgpSpec(n=100, seed=12))
    assert not np.array_equal(first.X, other.X)


def test_generated_rows_are_consistent(kallus_small):
    data = kallus_small
    assert np.array_equal(data.Y, np.where(data.A == 1, data.y1, data.y0))
    assert np.array_equal(data.tau, data.mu1 - data.mu0)
    assert np.all((data.pi1 > 0.0) & (data.pi1 < 1.0))
    assert data.X.shape == (256, 2)


def test_split_uses_independent_streams():
    train, test = generate_split(DgpSpec(n=50, seed=0), 30)
    assert train.n == 50 and test.n == 30
    assert not np.array_equal(train.X[:30], test.X)


def test_datasets_are_read_only(kallus_small):
    with pytest.raises(ValueError):
        kallus_small.X[0, 0] = 1.0


def test_constant_propensity_removes_confounding():
    data = generate(DgpSpec(n=50, seed=0, constant_propensity=0.5))
    assert np.all(data.pi1 == 0.5)


def test_image_surrogate_without_hidden_confounding_ignores_u():
    phi = np.linspace(-2.0, 2.0, 9)
    assert np.allclose(
        hcmnist_propensity(phi, np.zeros_like(phi), 1.0),
        hcmnist_propensity(phi, np.ones_like(phi), 1.0),
    )
    assert np.allclose(hcmnist_propensity(phi, np.zeros_like(phi), 1.0), expit(0.75 * phi + 0.5))


@pytest.mark.parametrize("u, expected", [(0.0, 3.0), (1.0, -1.0)])
def test_image_surrogate_outcome_at_zero(u, expected):
    _, mu1 = hcmnist_outcome_means(np.array([0.0]), np.array([u]))
    assert mu1[0] == pytest.approx(expected)


def test_image_surrogate_sample():
    spec = DgpSpec(kind=DgpKind.HCMNIST_LIKE, n=80, seed=2, image_dim=16)
    data = generate(spec)
    assert data.d_x == 17
    assert set(np.unique(data.X[:, -1])) <= {0.0, 1.0}
    phi = data.latents["phi"]
    assert np.all((phi >= -2.0) & (phi <= 2.0))
    assert np.all((data.pi1 > 0.0) & (data.pi1 < 1.0))


def test_image_surrogate_propensity_bounds():
    spec = DgpSpec(kind=DgpKind.HCMNIST_LIKE, n=500, seed=4, image_dim=8, gamma_star=math.e)
    data = generate(spec)
    s = expit(0.75 * data.latents["phi"] + 0.5)
    alpha = 1.0 / (math.e * s) + 1.0 - 1.0 / math.e
    beta = math.e / s + 1.0 - math.e
    assert np.all(data.pi1 >= 1.0 / beta - 1e-12)
    assert np.all(data.pi1 <= 1.0 / alpha + 1e-12)


def test_dataset_validation():
    with pytest.raises(LengthMismatch):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int), np.zeros(3))
    with pytest.raises(NonBinaryTreatment):
        Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), np.zeros(3))
    with pytest.raises(NonFiniteValue):
        Dataset(np.array([[0.0], [np.inf]]), np.array([0, 1]), np.zeros(2))


def test_oracle_dataset_checks_consistency():
    base = Dataset(np.zeros((2, 1)), np.array([0, 1]), np.array([0.0, 1.0]))
    with pytest.raises(DataValidationError):
        OracleDataset(base=base, mu0=np.zeros(2), mu1=np.zeros(2), pi1=np.full(2, 0.5), y0=np.zeros(2), y1=np.zeros(2))


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_plain(tmp_path):
    path = _write(tmp_path / "d.csv", "x_0,x_1,a,y\n0.1,0.2,0,1.5\n0.3,0.4,1,2.5\n-1,2,0,0\n")
    data = load_csv(path)
    assert isinstance(data, Dataset)
    assert data.n == 3 and data.d_x == 2
    assert np.array_equal(data.A, [0, 1, 0])


def test_load_csv_reports_bad_treatment_row(tmp_path):
    rows = ["1,0,1"] * 4 + ["1,2,1"]
    path = _write(tmp_path / "d.csv", "x_0,a,y\n" + "\n".join(rows) + "\n")
    with pytest.raises(NonBinaryTreatment) as excinfo:
        load_csv(path)
    assert excinfo.value.row == 5


def test_load_csv_recomputes_tau(tmp_path):
    text = "x_0,a,y,mu0,mu1,pi1,y0,y1\n0.5,1,3.0,1.0,2.5,0.4,0.7,3.0\n0.1,0,0.2,0.0,1.0,0.6,0.2,1.1\n"
    data = load_csv(_write(tmp_path / "o.csv", text))
    assert isinstance(data, OracleDataset)
    assert np.allclose(data.tau, [1.5, 1.0])


def test_load_csv_errors(tmp_path):
    with pytest.raises(MissingColumn) as excinfo:
        load_csv(_write(tmp_path / "m.csv", "x_0,a\n1,0\n"))
    assert excinfo.value.column == "y"
    with pytest.raises(MissingColumn):
        load_csv(_write(tmp_path / "g.csv", "x_0,x_2,a,y\n1,1,0,0\n"))
    with pytest.raises(NonFiniteValue) as excinfo:
        load_csv(_write(tmp_path / "n.csv", "x_0,a,y\n1,0,0\nabc,1,0\n"))
    assert excinfo.value.row == 2 and excinfo.value.column == "x_0"
    with pytest.raises(DataValidationError):
        load_csv(tmp_path / "missing.csv")


def test_saved_sample_loads_as_oracle(tmp_path, kallus_small):
    path = save_csv(kallus_small, tmp_path / "sample.csv")
    loaded = load_csv(path)
    assert isinstance(loaded, OracleDataset)
    assert np.array_equal(loaded.X, kallus_small.X)
    assert np.array_equal(loaded.tau, kallus_small.tau)


def test_read_covariates_ignores_other_columns(tmp_path):
    path = _write(tmp_path / "c.csv", "id,x_1,x_0\n7,2.0,1.0\n8,4.0,3.0\n")
    assert np.array_equal(read_covariates(path), [[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(DataValidationError):
        read_covariates(_write(tmp_path / "e.csv", "x_0\n"))


def test_potential_outcome_means_match_tau():
    data = generate(DgpSpec(n=100_000, seed=5))
    diff = data.y1 - data.y0
    se = diff.std(ddof=1) / math.sqrt(data.n)
    assert abs(diff.mean() - data.tau.mean()) < 3.0 * se


def test_local_effect_at_origin():
    data = generate(DgpSpec(n=400_000, seed=6))
    near = np.all(np.abs(data.X) < 0.1, axis=1)
    diff = (data.y1 - data.y0)[near]
    se = diff.std(ddof=1) / math.sqrt(diff.size)
    assert diff.size > 500
    assert abs(diff.mean() - 2.0) < 3.0 * se
