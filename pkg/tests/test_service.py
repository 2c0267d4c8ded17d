import json
import warnings
from pathlib import Path

import numpy as np
import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeprecationWarning)
    from starlette.testclient import TestClient

from esncontrol import pipeline as pl
from esncontrol.service import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc")
    cfg = pl.RunConfig(
        seed=2,
        output_dir=str(out),
        dataset=pl.DatasetConfig(n_train_series=2, n_val_series=1,
                                 length_lt=1.0, washout_lt=2.0),
        esn=pl.EsnConfig(n_reservoir=24, ridge_lambda=1e-6),
        evaluation=pl.EvaluationConfig(n_episodes=2, episode_length_lt=0.5,
                                       chunk_size=2, strategies=["NC", "AC"]),
    )
    gen = pl.op_generate(cfg, out)
    tr = pl.op_train(cfg, gen["train_path"], out, val_path=gen["val_path"])
    return out, cfg.model_dump(mode="json"), gen, tr


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok" and body["version"]


class TestOpsEndpoints:
    def test_generate(self, client, workspace, tmp_path_factory):
        out, cfg, _, _ = workspace
        target = tmp_path_factory.mktemp("gen")
        resp = client.post("/ops/generate",
                           json={"config": cfg, "output_dir": str(target)})
        assert resp.status_code == 200
        body = resp.json()
        assert Path(body["result"]["train_path"]).exists()
        assert body["config_hash"]

    def test_train_and_evaluate(self, client, workspace, tmp_path_factory):
        out, cfg, gen, _ = workspace
        target = tmp_path_factory.mktemp("trn")
        resp = client.post("/ops/train", json={
            "config": cfg, "dataset_path": gen["train_path"],
            "val_path": gen["val_path"], "output_dir": str(target)})
        assert resp.status_code == 200
        model_path = resp.json()["result"]["model_path"]

        resp = client.post("/ops/evaluate", json={
            "config": cfg, "model_path": model_path,
            "output_dir": str(target), "workers": 2})
        assert resp.status_code == 200
        summary = {r["strategy"]: r for r in resp.json()["result"]["summary"]}
        assert summary["AC"]["p_control"] == 1.0

    def test_pdf(self, client, workspace, tmp_path_factory):
        out, cfg, gen, _ = workspace
        target = tmp_path_factory.mktemp("pdf")
        resp = client.post("/ops/pdf", json={
            "config": cfg, "data_paths": [gen["val_path"]],
            "output_dir": str(target)})
        assert resp.status_code == 200
        assert Path(resp.json()["result"]["pdf_path"]).exists()

    def test_missing_dataset_is_client_error(self, client, workspace):
        _, cfg, _, _ = workspace
        resp = client.post("/ops/train", json={
            "config": cfg, "dataset_path": "/nonexistent/data.json"})
        assert resp.status_code == 400

    def test_unknown_config_key_rejected(self, client):
        resp = client.post("/ops/generate",
                           json={"config": {"not_a_field": 3}})
        assert resp.status_code == 422

    def test_extra_request_field_rejected(self, client, workspace):
        _, cfg, _, _ = workspace
        resp = client.post("/ops/generate",
                           json={"config": cfg, "surprise": True})
        assert resp.status_code == 422


class TestDecide:
    def test_nc_and_ac(self, client, workspace):
        _, cfg, _, _ = workspace
        q = [0.3] + [0.0] * 8
        resp = client.post("/decide", json={"config": cfg, "kind": "NC", "q": q})
        assert resp.status_code == 200
        assert resp.json() == {"re": 400.0, "controlled": False}
        resp = client.post("/decide", json={"config": cfg, "kind": "AC", "q": q})
        assert resp.json() == {"re": 2000.0, "controlled": True}

    def test_pid_direct_threshold(self, client, workspace):
        _, cfg, _, _ = workspace
        cfg = json.loads(json.dumps(cfg))
        cfg["controllers"]["pid"] = {"k_p": 1.0, "k_d": 0.0, "k_i": 0.0,
                                     "tau_i": 1.0, "k_c": 0.1}
        quiet = [0.1] + [0.0] * 8   # k = 0.005
        loud = [0.8] + [0.0] * 8    # k = 0.32
        r1 = client.post("/decide", json={"config": cfg, "kind": "PID_DIRECT", "q": quiet})
        r2 = client.post("/decide", json={"config": cfg, "kind": "PID_DIRECT", "q": loud})
        assert (r1.json()["controlled"], r2.json()["controlled"]) == (False, True)

    def test_surrogate_decision_with_model_file(self, client, workspace):
        _, cfg, _, tr = workspace
        q = [0.1] + [0.0] * 8
        resp = client.post("/decide", json={
            "config": cfg, "kind": "P_ESN", "q": q,
            "model_path": tr["model_path"]})
        assert resp.status_code == 200
        assert resp.json()["re"] in (400.0, 2000.0)

    def test_surrogate_requires_model(self, client, workspace):
        _, cfg, _, _ = workspace
        resp = client.post("/decide", json={
            "config": cfg, "kind": "MPC", "q": [0.0] * 9})
        assert resp.status_code == 400

    def test_bad_state_length(self, client, workspace):
        _, cfg, _, tr = workspace
        resp = client.post("/decide", json={
            "config": cfg, "kind": "NC", "q": [0.0] * 5})
        assert resp.status_code == 400

    def test_unknown_kind(self, client):
        resp = client.post("/decide", json={"kind": "PONY", "q": [0.0] * 9})
        assert resp.status_code == 400
