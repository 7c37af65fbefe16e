from app.db import crud
from app.schemas.connector import ConnectorSpec
from app.schemas.manifest import RunManifest
from app.schemas.training import Task, TrainRun

API = "/api/v1"


def _pipeline(kind, tokens=None, resolution=336):
    connector = {"kind": kind, "d_v": 1024, "d_llm": 4096}
    if tokens is not None:
        connector["num_tokens"] = tokens
    return {"connector": connector, "resolution": resolution, "text_tokens": 60}


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "Connector Lab" in response.json()["message"]


def test_param_count(client):
    response = client.get(f"{API}/connectors/param-count", params={"connector": "mlp"})
    assert response.status_code == 200
    assert response.json() == {"connector": "mlp", "param_count": 20_979_712, "extra_over_mlp": 0}


def test_param_count_alias_and_extra(client):
    response = client.get(f"{API}/connectors/param-count", params={"connector": "qformer", "tokens": 144})
    body = response.json()
    assert body["connector"] == "attnpool-144"
    assert body["extra_over_mlp"] > 0


def test_param_count_bad_spec(client):
    response = client.get(f"{API}/connectors/param-count", params={"connector": "avgpool", "tokens": 12})
    assert response.status_code == 400
    response = client.get(f"{API}/connectors/param-count", params={"connector": "resampler"})
    assert response.status_code == 400


def test_cost_report(client):
    response = client.post(f"{API}/costs/report", json=_pipeline("linear", resolution=224))
    assert response.status_code == 200
    body = response.json()
    assert body["connector_flops"] == 2_147_483_648
    assert body["visual_tokens"] == 256
    assert body["total_flops"] == body["connector_flops"] + body["llm_flops"]


def test_cost_report_too_many_tokens(client):
    response = client.post(f"{API}/costs/report", json=_pipeline("convmap", tokens=1024))
    assert response.status_code == 400


def test_reduction(client):
    payload = {"base": _pipeline("mlp", resolution=448), "compressed": _pipeline("convmap", 144, resolution=448)}
    response = client.post(f"{API}/costs/reduction", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert abs(body["predicted_reduction_pct"] - 80.0) <= 10.0
    assert body["compressed"]["visual_tokens"] == 144
    assert body["overhead_flops"] > 0


def test_reduction_mismatched_resolution(client):
    payload = {"base": _pipeline("mlp", resolution=336), "compressed": _pipeline("convmap", 144, resolution=448)}
    assert client.post(f"{API}/costs/reduction", json=payload).status_code == 400


def test_cost_sweep(client):
    rows = client.get(f"{API}/costs/sweep").json()["rows"]
    assert len(rows) == 12


def test_classify(client):
    response = client.get(f"{API}/taxonomy/classify", params={"benchmark": "mme", "sub_task": "color"})
    assert response.status_code == 200
    assert response.json() == {
        "benchmark": "MME", "sub_task": "Color", "granularity": "fine",
        "original_parent": "Perception (Coarse-grained)",
    }


def test_classify_unknown(client):
    response = client.get(f"{API}/taxonomy/classify", params={"benchmark": "MME", "sub_task": "Colour"})
    assert response.status_code == 400
    assert "Color" in response.json()["detail"]


def test_entries_filtered(client):
    response = client.get(f"{API}/taxonomy/entries", params={"benchmark": "SEED", "granularity": "coarse"})
    assert [e["sub_task"] for e in response.json()] == ["Scene Understanding"]


def test_score(client):
    payload = {
        "mode": "micro",
        "results": [
            {"benchmark": "MME", "sub_task": "Color", "correct": 10, "total": 10},
            {"benchmark": "MME", "sub_task": "Count", "correct": 0, "total": 30},
        ],
    }
    body = client.post(f"{API}/taxonomy/score", json=payload).json()
    assert body["pooled"] == {"coarse": None, "fine": 0.25, "reasoning": None}
    assert body["per_benchmark"]["MME"]["fine"] == 0.25


def test_score_rejects_impossible_counts(client):
    payload = {"results": [{"benchmark": "MME", "sub_task": "Color", "correct": 11, "total": 10}]}
    assert client.post(f"{API}/taxonomy/score", json=payload).status_code == 422


def test_advise(client):
    body = client.get(f"{API}/taxonomy/advise", params={"resolution": 448, "priority": "coarse"}).json()
    assert body["recommended"] == ["convmap-144", "avgpool-144"]
    response = client.get(f"{API}/taxonomy/advise", params={"resolution": 500})
    assert response.status_code == 400
    assert "448" in response.json()["detail"]


def test_runs_registry(client, db_session):
    assert client.get(f"{API}/runs/").json() == []
    manifest = RunManifest(subcommand="toy-train", config={"connector": "mlp", "steps": 2}, seed=3,
                           outputs=["loss_curve.csv"], tool_version="0.1.0")
    run = TrainRun(spec=ConnectorSpec(kind="mlp", d_v=4, d_llm=4), task=Task.FINE, seed=3, steps=2,
                   loss_curve=[1.5, 1.25], final_accuracy=0.5)
    created = crud.create_run(db_session, manifest, "/tmp/out", [run])
    crud.create_run(db_session, manifest.model_copy(update={"subcommand": "advise"}), "/tmp/other")

    runs = client.get(f"{API}/runs/").json()
    assert [r["subcommand"] for r in runs] == ["toy-train", "advise"]
    assert client.get(f"{API}/runs/", params={"subcommand": "advise"}).json()[0]["output_dir"] == "/tmp/other"

    body = client.get(f"{API}/runs/{created.id}").json()
    assert body["config"] == {"connector": "mlp", "steps": 2}
    assert body["outputs"] == ["loss_curve.csv"]
    assert body["train_runs"][0]["connector"] == "mlp"
    assert body["train_runs"][0]["final_loss"] == 1.25


def test_missing_run(client):
    assert client.get(f"{API}/runs/999").status_code == 404
