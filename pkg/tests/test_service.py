import numpy as np
import pytest
from fastapi.testclient import TestClient

from latrom.datagen import Dataset
from latrom.service import create_app


@pytest.fixture(scope="module")
def client(tiny_run):
    return TestClient(create_app(tiny_run["run"], tiny_run["data"]))


@pytest.fixture(scope="module")
def dataset(tiny_run):
    return Dataset.load(tiny_run["data"])


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_info(client, dataset):
    info = client.get("/info").json()
    assert info["param_names"] == ["kappa", "cx", "cy"]
    assert info["latent_dim"] == 4
    assert info["has_ar_baseline"] is True
    assert info["n_points"] == dataset.n_points


def test_forecast_from_trajectory(client, dataset):
    r = client.post("/forecast", json={"mu": dataset.mus[7].tolist(), "traj_id": 7, "times": [0.0, 0.5]})
    assert r.status_code == 200
    body = r.json()
    assert body["shape"] == [2, dataset.n_points, 1]
    assert np.asarray(body["values"]).shape == (2, dataset.n_points, 1)


def test_forecast_paths_agree(client, dataset):
    mu = dict(zip(dataset.param_names, dataset.mus[7].tolist()))
    by_traj = client.post("/forecast", json={"mu": mu, "traj_id": 7}).json()
    by_u0 = client.post("/forecast", json={"mu": mu, "u0": dataset.fields[7, 0].tolist()}).json()
    by_latent = client.post("/forecast", json={"mu": mu, "latent": by_traj["latent0"]}).json()
    assert by_traj["values"] == by_u0["values"] == by_latent["values"]
    enc = client.post("/encode", json={"values": dataset.fields[7, 0].tolist()}).json()
    assert enc["latent"] == by_traj["latent0"]


def test_forecast_off_mesh(client, dataset):
    coords = np.random.default_rng(0).uniform(0, 1, (5, 2)).tolist()
    body = client.post("/forecast", json={"mu": dataset.mus[0].tolist(), "traj_id": 0, "coords": coords, "times": [0.25]}).json()
    assert body["shape"] == [1, 5, 1]


@pytest.mark.parametrize(
    "payload,status",
    [
        ({"mu": [1.0, 2.0], "traj_id": 0}, 422),
        ({"mu": {"kappa": 1e-3}, "traj_id": 0}, 422),
        ({"mu": [1e-3, 0.0, 0.0]}, 422),
        ({"mu": [1e-3, 0.0, 0.0], "traj_id": 99}, 404),
        ({"mu": [1e-3, 0.0, 0.0], "traj_id": 0, "times": [0.5, 0.2]}, 422),
        ({"mu": [1e-3, 0.0, 0.0], "latent": [0.0, 0.0]}, 422),
        ({"mu": [1e-3, 0.0, 0.0], "traj_id": 0, "coords": [[0.1, 0.2, 0.3]]}, 422),
        ({"traj_id": 0}, 422),
    ],
)
def test_forecast_rejects_bad_requests(client, payload, status):
    assert client.post("/forecast", json=payload).status_code == status


def test_encode_rejects_mismatched_points(client, dataset):
    r = client.post("/encode", json={"values": dataset.fields[0, 0, :3].tolist()})
    assert r.status_code == 422
