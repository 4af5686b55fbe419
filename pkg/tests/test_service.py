import pytest
from fastapi.testclient import TestClient

from fairdiv.service import app

client = TestClient(app)

SAME = {"n": 2, "m": 8, "valuations": [[[1.0] * 8]] * 2}


def test_shares():
    r = client.post("/aps", json={"instance": SAME})
    assert r.status_code == 200
    assert r.json()["values"] == {"0": pytest.approx(4.0), "1": pytest.approx(4.0)}
    r = client.post("/mms", json={"instance": SAME, "agent": 1})
    assert r.json()["values"] == {"1": 4.0}


def test_bad_agent_and_bad_instance():
    assert client.post("/aps", json={"instance": SAME, "agent": 5}).status_code == 422
    bad = {"n": 2, "m": 3, "valuations": [[[1.0]]] * 2}
    r = client.post("/aps", json={"instance": bad})
    assert r.status_code == 422 and r.json()["detail"]["error"] == "InputError"
    assert client.post("/aps", json={"instance": {"n": 0, "m": 1, "valuations": []}}).status_code == 422


def test_alloc_identical():
    r = client.post("/alloc", json={"instance": SAME, "alpha": 11 / 40, "mode": "identical"})
    assert r.status_code == 200
    doc = r.json()
    assert doc["verification"]["passed"]
    assert sorted(e for b in doc["allocation"]["bundles"] for e in b) == list(range(8))


def test_alloc_exhaustion_is_conflict():
    inst = {"n": 3, "m": 12, "valuations": [[[1.0] * 12], [[1.0] * 11 + [1.1]], [[1.1] + [1.0] * 11]]}
    r = client.post("/alloc", json={"instance": inst, "alpha": 11 / 40, "mode": "different", "c": 1.0, "D": 1e-9})
    assert r.status_code == 409
    assert r.json()["detail"]["stage"] == "allocate"


def test_classify_and_verify():
    inst = {"n": 2, "m": 3, "valuations": [[[5.0, 5.0, 1.0]]] * 2}
    r = client.post("/classify", json={"instance": inst, "alpha": 11 / 40})
    assert r.status_code == 200 and r.json()["case"] == 1
    r = client.post("/verify", json={"instance": SAME, "bundles": [[0, 1, 2, 3], [4, 5, 6, 7]], "alpha": 1.0 - 1e-9})
    assert r.json()["passed"]
    r = client.post("/verify", json={"instance": SAME, "bundles": [[0, 1], [1]], "alpha": 0.5})
    assert r.status_code == 422


def test_gen_and_roots():
    r = client.post("/gen", json={"spec": {"n": 2, "m": 4}, "seed": 1})
    assert r.status_code == 200 and r.json()["n"] == 2
    assert client.post("/gen", json={"spec": {"n": 2, "m": 4, "colour": 1}, "seed": 1}).status_code == 422
    doc = client.get("/roots", params={"alpha": 3 / 11}).json()
    assert doc["rho"] == pytest.approx(0.3502, abs=5e-5)
    assert client.get("/roots", params={"alpha": 0.3}).status_code == 422
