import json

from fastapi.testclient import TestClient

from kamtori import __version__
from kamtori.service import app

client = TestClient(app)


def test_health():
    resp = client.get("/v1/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok", "version": __version__}


def test_iterate_endpoint():
    body = {"kind": "iterate", "eps": 1e-8,
            "overrides": {"max_iter": 10, "stop_tol": 1e-10}}
    resp = client.post("/v1/iterate", json=body)
    assert resp.status_code == 200
    data = resp.json()
    assert data["exit_code"] == 0
    assert data["manifest"]["schema"] == "kam-manifest/1"
    assert "iterations.csv" in data["artifacts"]
    assert data["manifest"]["results"]["torus"]["invariance_residual"] <= 1e-9


def test_endpoint_overrides_kind():
    # the endpoint determines the run kind regardless of the body
    body = {"kind": "scaling", "eps": 1e-8,
            "overrides": {"max_iter": 10, "stop_tol": 1e-10}}
    resp = client.post("/v1/step", json=body)
    assert resp.status_code == 200
    assert resp.json()["manifest"]["results"]["kind"] == "step"


def test_strict_query_parameter():
    body = {"kind": "iterate", "eps": 1e-2}
    resp = client.post("/v1/iterate", json=body, params={"strict": "true"})
    assert resp.status_code == 200
    assert resp.json()["exit_code"] == 2


def test_invalid_config_rejected():
    resp = client.post("/v1/iterate", json={"kind": "iterate", "bogus": 1})
    assert resp.status_code == 422
    resp = client.post("/v1/iterate",
                       json={"kind": "iterate", "overrides": {"eta": 0.5}})
    assert resp.status_code == 422
