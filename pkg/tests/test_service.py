import warnings

import numpy as np
import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from privdist.model import problem_to_dict
from privdist.service import app

from conftest import random_problem


@pytest.fixture(scope="module")
def client():
    return TestClient(app, raise_server_exceptions=False)


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200 and r.json()["status"] == "ok"


# /run -------------------------------------------------------------------


def test_run_builtin_opf(client):
    body = {
        "problem": {"builtin": "opf-toy"},
        "K": 50,
        "seed": 3,
        "noise": {"sigma": 0.1},
        "thetas": [0.2, 0.5, 0.5, 0.5],
    }
    r = client.post("/run", json=body)
    assert r.status_code == 200
    data = r.json()
    assert data["summary"]["final_dual_gap"] <= data["summary"]["suboptimality_bound"]
    assert data["privacy_report"]["epsilon"][1] == pytest.approx(0.5 * 50 / 0.1)
    assert data["transcript_csv"].count("\n") == 2 + 50 * 4


def test_run_inline_problem(client):
    p = random_problem(np.random.default_rng(70))
    body = {
        "problem": {"inline": problem_to_dict(p)},
        "K": 5,
        "seed": 0,
        "noise": {"sigma": 0.0},
    }
    r = client.post("/run", json=body)
    assert r.status_code == 200


def test_run_deterministic(client):
    body = {"problem": {"builtin": "opf-toy"}, "K": 10, "seed": 5, "noise": {"sigma": 0.2}}
    a = client.post("/run", json=body).json()
    b = client.post("/run", json=body).json()
    assert a["transcript_csv"] == b["transcript_csv"]
    assert a["summary"] == b["summary"]


def test_run_zero_scale_privacy_warning(client):
    body = {
        "problem": {"builtin": "opf-toy"},
        "K": 5,
        "seed": 0,
        "noise": {"sigma": 0.0},
        "thetas": [0.5] * 4,
        "privacy_requested": [True] * 4,
    }
    data = client.post("/run", json=body).json()
    assert data["privacy_report"]["epsilon"][0] == "inf"
    assert any("epsilon=inf" in w for w in data["summary"]["warnings"])


def test_run_unknown_builtin_422(client):
    r = client.post("/run", json={"problem": {"builtin": "nope"}, "K": 1, "seed": 0})
    assert r.status_code == 422


def test_run_both_sources_422(client):
    r = client.post(
        "/run",
        json={"problem": {"builtin": "opf-toy", "inline": {}}, "K": 1, "seed": 0},
    )
    assert r.status_code == 422


def test_run_bad_noise_length_422(client):
    r = client.post(
        "/run",
        json={
            "problem": {"builtin": "opf-toy"},
            "K": 1,
            "seed": 0,
            "noise": {"per_agent": [0.1, 0.1]},
        },
    )
    assert r.status_code == 422


# /sensitivity -----------------------------------------------------------


def test_sensitivity_certificate(client):
    body = {
        "problem": {"builtin": "opf-toy"},
        "agent": 1,
        "alpha": 0.1,
        "beta": 0.1,
        "seed": 0,
    }
    r = client.post("/sensitivity", json=body)
    assert r.status_code == 200
    cert = r.json()["certificate"]
    assert cert["N"] == 99
    assert cert["gamma_N"] >= 0.0


def test_sensitivity_requires_metric(client):
    body = {"problem": {"builtin": "mpc-toy"}, "alpha": 0.1, "beta": 0.1, "seed": 0}
    r = client.post("/sensitivity", json=body)
    assert r.status_code == 422


def test_sensitivity_agent_out_of_range(client):
    body = {
        "problem": {"builtin": "opf-toy"},
        "agent": 99,
        "alpha": 0.1,
        "beta": 0.1,
        "seed": 0,
    }
    assert client.post("/sensitivity", json=body).status_code == 422


def test_sensitivity_dominance_violation_409(client, monkeypatch):
    import importlib

    app_module = importlib.import_module("privdist.service.app")
    from privdist.privacy import SensitivityEstimate

    def fake(*a, **k):
        return SensitivityEstimate(gamma_N=99.0, N=10, alpha=0.1, beta=0.1, analytic_upper=1.0)

    monkeypatch.setattr(app_module, "sensitivity_sample", fake)
    body = {"problem": {"builtin": "opf-toy"}, "alpha": 0.1, "beta": 0.1, "seed": 0}
    assert client.post("/sensitivity", json=body).status_code == 409


# /tradeoff --------------------------------------------------------------


def test_tradeoff_front_and_verdicts(client):
    body = {
        "theta": 1.0,
        "M": 1,
        "G": 1.0,
        "rho_phi": 1.0,
        "eps_bar": 100.0,
        "S_bar": 0.1,
        "test_points": [{"nu": 0.5, "K": 50}, {"nu": 0.49, "K": 50}],
    }
    r = client.post("/tradeoff", json=body)
    assert r.status_code == 200
    data = r.json()
    assert data["verdicts"][0]["feasible"] is True
    assert data["verdicts"][1]["feasible"] is False
    eps = [f["epsilon"] for f in data["front"]]
    assert eps == sorted(eps)
    assert data["cloud_csv"].startswith("#")


def test_tradeoff_empty_grid_422(client):
    body = {"theta": 1.0, "M": 1, "G": 1.0, "rho_phi": 1.0, "sigmas": []}
    assert client.post("/tradeoff", json=body).status_code == 422


def test_tradeoff_test_points_need_spec(client):
    body = {"theta": 1.0, "M": 1, "G": 1.0, "rho_phi": 1.0, "test_points": [{"nu": 1.0, "K": 5}]}
    assert client.post("/tradeoff", json=body).status_code == 422


# /allocate --------------------------------------------------------------


def test_allocate_schemes(client):
    base = {"rho_phi": 1.0, "K": 100, "S_K": 0.4, "G": [1.0, 1.0]}
    r = client.post("/allocate", json={**base, "scheme": "equal-split"})
    assert r.json()["allocation"]["shares_sigma2"] == pytest.approx([4.0, 4.0])
    r = client.post("/allocate", json={**base, "scheme": "kelly", "bids": [1.0, 3.0]})
    assert r.json()["allocation"]["shares_sigma2"] == pytest.approx([2.0, 6.0])
    r = client.post("/allocate", json={**base, "scheme": "vcg-kelly", "bids": [1.0, 1.0]})
    alloc = r.json()["allocation"]
    assert alloc["payments"] == pytest.approx([np.log(2.0)] * 2, abs=1e-6)
    r = client.post(
        "/allocate", json={**base, "scheme": "equal-epsilon", "thetas": [1.0, 2.0]}
    )
    alloc = r.json()["allocation"]
    assert "implied_epsilon" in alloc
    assert alloc["implied_epsilon"][0] == pytest.approx(alloc["implied_epsilon"][1])


def test_allocate_unknown_scheme_422(client):
    body = {"scheme": "magic", "rho_phi": 1.0, "K": 10, "S_K": 1.0, "G": [1.0]}
    assert client.post("/allocate", json=body).status_code == 422


def test_allocate_missing_bids_422(client):
    body = {"scheme": "kelly", "rho_phi": 1.0, "K": 10, "S_K": 1.0, "G": [1.0]}
    assert client.post("/allocate", json=body).status_code == 422


# /mpc-loop --------------------------------------------------------------


def test_mpc_loop_short(client):
    body = {"sigma": 0.0, "K_per_step": 5, "steps": 3, "seed": 0, "with_reference": True}
    r = client.post("/mpc-loop", json=body)
    assert r.status_code == 200
    data = r.json()
    assert "tracking_rel_error_vs_centralized" in data["summary"]
    assert data["trajectory_csv"].count("\n") == 2 + 3


def test_mpc_loop_bad_building_422(client):
    body = {"building": {"rooms": 1}, "steps": 2}
    assert client.post("/mpc-loop", json=body).status_code == 422
