import pytest
from fastapi.testclient import TestClient

from orlearners.api import create_app
from orlearners.config import get_settings
from orlearners.models.base import Family
from orlearners.nuisance import oracle_nuisances
from orlearners.ortho import LossKind, OrthogonalLossSpec, fit_target
from orlearners.services.target_store import TargetStore, get_target_store
from orlearners.stage0 import Selector, train_representation


@pytest.fixture
def bundle(tmp_path, settings_env, kallus_small, make_spec):
    tr = train_representation(make_spec(Family.TARNET, epochs=2), kallus_small, seed=0)
    spec = OrthogonalLossSpec(loss=LossKind.DRK, selector=Selector.PHI, epochs=2)
    model = fit_target(spec, tr, oracle_nuisances(kallus_small), kallus_small, seed=0)
    name = TargetStore(tmp_path / "models").save(model)
    get_target_store().clear()
    yield name, model
    get_target_store().clear()


@pytest.fixture
def client(bundle):
    with TestClient(create_app()) as test_client:
        yield test_client


def _upload(text: str, filename: str = "rows.csv"):
    return {"file": (filename, text.encode("utf-8"), "text/csv")}


def test_health_lists_bundles(client, bundle):
    name, _ = bundle
    body = client.get("/").json()
    assert body["status"] == "healthy"
    assert body["available_models"] == [name]
    assert body["loaded_models"] == []
    assert client.get("/models").json() == {"models": [name]}


def test_predict(client, bundle):
    name, model = bundle
    response = client.post("/predict", files=_upload("x_0,x_1\n0.0,0.0\n1.0,-0.5\n"), data={"model": name})
    assert response.status_code == 200
    body = response.json()
    assert body["quantity"] == "cate"
    assert body["n"] == 2
    expected = model.predict([[0.0, 0.0], [1.0, -0.5]])
    assert body["predictions"] == pytest.approx(expected.tolist())
    assert client.get("/").json()["loaded_models"] == [name]


def test_unknown_model(client):
    response = client.post("/predict", files=_upload("x_0,x_1\n0,0\n"), data={"model": "nope"})
    assert response.status_code == 400
    assert "nope" in response.json()["detail"]


def test_wrong_extension(client, bundle):
    name, _ = bundle
    response = client.post("/predict", files=_upload("x_0,x_1\n0,0\n", "rows.txt"), data={"model": name})
    assert response.status_code == 400
    assert "Unsupported file type" in response.json()["detail"]


@pytest.mark.parametrize("text", ["x_0\n0.5\n", "a,b\n1,2\n", "x_0,x_1\n1,abc\n", "x_0,x_1\n"])
def test_bad_covariates(client, bundle, text):
    name, _ = bundle
    response = client.post("/predict", files=_upload(text), data={"model": name})
    assert response.status_code == 400


def test_upload_too_large(bundle, settings_env):
    name, _ = bundle
    settings_env.setenv("ORL_MAX_UPLOAD_MB", "0")
    get_settings.cache_clear()
    with TestClient(create_app()) as client:
        response = client.post("/predict", files=_upload("x_0,x_1\n0,0\n"), data={"model": name})
    assert response.status_code == 413
