"""HTTP layer over the task store: auth, leasing, review, error shapes."""

import pytest
from fastapi.testclient import TestClient

from panoptic_forge.verify_api import make_app

from test_verification import build_corpus, drain_and_submit

WORKER = {"Authorization": "Bearer w-tok"}
WORKER2 = {"Authorization": "Bearer w2-tok"}
EXPERT = {"Authorization": "Bearer e-tok"}


@pytest.fixture
def service(tmp_path):
    ds, store, regions = build_corpus(tmp_path, {"car": 3, "dog": 2},
                                      package_size=4)
    store.sample_for_verification(5, round_id=0)
    app = make_app(store,
                   worker_tokens={"w-tok": "ann-1", "w2-tok": "ann-2"},
                   expert_tokens={"e-tok": "exp-1"})
    return TestClient(app), store, regions


def lease_one(client, headers=WORKER, worker_id="ann-1", **body):
    r = client.post("/api/tasks/lease",
                    json={"worker_id": worker_id, **body}, headers=headers)
    assert r.status_code == 200
    return r.json()


def test_healthz_is_open(service):
    client, _, _ = service
    r = client.get("/api/healthz")
    assert r.status_code == 200
    assert r.json() == {"ok": True}


def test_missing_or_bad_token_is_401(service):
    client, _, _ = service
    r = client.post("/api/tasks/lease", json={"worker_id": "ann-1"})
    assert r.status_code == 401
    r = client.post("/api/tasks/lease", json={"worker_id": "ann-1"},
                    headers={"Authorization": "Bearer nonsense"})
    assert r.status_code == 401
    r = client.post("/api/tasks/lease", json={"worker_id": "ann-1"},
                    headers={"Authorization": "Token w-tok"})
    assert r.status_code == 401


def test_role_and_identity_enforcement(service):
    client, _, _ = service
    # expert token cannot lease
    r = client.post("/api/tasks/lease", json={"worker_id": "exp-1"},
                    headers=EXPERT)
    assert r.status_code == 403
    # worker token cannot claim someone else's id
    r = client.post("/api/tasks/lease", json={"worker_id": "ann-2"},
                    headers=WORKER)
    assert r.status_code == 403
    # worker token cannot review
    r = client.post("/api/packages/p-0000/review",
                    json={"expert_id": "ann-1", "verdicts": []},
                    headers=WORKER)
    assert r.status_code == 403


def test_lease_payload_and_exhaustion(service):
    client, store, _ = service
    seen = []
    while True:
        r = client.post("/api/tasks/lease", json={"worker_id": "ann-1"},
                        headers=WORKER)
        if r.status_code == 204:
            break
        body = r.json()
        assert body["state"] == "leased"
        assert body["lease"]["worker_id"] == "ann-1"
        assert body["kind"] in ("tag_filter", "vqa_check")
        seen.append(body["task_id"])
    assert seen
    assert len(set(seen)) == len(seen)


def test_submit_flow_and_validation(service):
    client, store, _ = service
    task = lease_one(client)

    # result failing task-shape validation is a 422 with the error shape
    r = client.post(f"/api/tasks/{task['task_id']}/submit",
                    json={"worker_id": "ann-1", "result": {}},
                    headers=WORKER)
    assert r.status_code == 422
    err = r.json()["error"]
    assert err["type"] == "ResultError"
    assert err["message"]

    # a worker who holds no lease on the task gets a conflict
    r = client.post(f"/api/tasks/{task['task_id']}/submit",
                    json={"worker_id": "ann-2",
                          "result": {"selected": []}},
                    headers=WORKER2)
    assert r.status_code == 409
    assert r.json()["error"]["type"] == "LeaseError"

    good = ({"selected": list(task["payload"]["candidates"])}
            if task["kind"] == "tag_filter" else {"outcome": "correct"})
    r = client.post(f"/api/tasks/{task['task_id']}/submit",
                    json={"worker_id": "ann-1", "result": good},
                    headers=WORKER)
    assert r.status_code == 200
    assert r.json()["acknowledged"] is True
    assert r.json()["task"]["state"] == "submitted"

    # double submit: no longer leased
    r = client.post(f"/api/tasks/{task['task_id']}/submit",
                    json={"worker_id": "ann-1", "result": good},
                    headers=WORKER)
    assert r.status_code == 409


def test_unknown_ids_are_404(service):
    client, _, _ = service
    r = client.get("/api/tasks/t-9999", headers=WORKER)
    assert r.status_code == 404
    assert r.json()["error"]["type"] == "VerificationError"
    r = client.get("/api/packages/p-9999", headers=WORKER)
    assert r.status_code == 404
    r = client.get("/api/regions/none/context", headers=WORKER)
    assert r.status_code == 404


def test_review_cycle_over_http(service):
    client, store, _ = service
    drain_and_submit(store, "ann-1")
    r = client.get("/api/packages/open", headers=EXPERT)
    assert r.status_code == 200
    packages = r.json()["packages"]
    assert packages and all(p["state"] == "open" for p in packages)

    pkg = packages[0]
    r = client.post(f"/api/packages/{pkg['package_id']}/review",
                    json={"expert_id": "exp-1", "verdicts": [True]},
                    headers=EXPERT)
    assert r.status_code == 422  # verdict arity must match the package

    verdicts = [True] * len(pkg["task_ids"])
    r = client.post(f"/api/packages/{pkg['package_id']}/review",
                    json={"expert_id": "exp-1", "verdicts": verdicts},
                    headers=EXPERT)
    assert r.status_code == 200
    assert r.json()["state"] == "passed"
    assert r.json()["expert_id"] == "exp-1"
    assert r.json()["accuracy"] == 1.0

    # a settled package cannot be reviewed again
    r = client.post(f"/api/packages/{pkg['package_id']}/review",
                    json={"expert_id": "exp-1", "verdicts": verdicts},
                    headers=EXPERT)
    assert r.status_code == 400
    assert r.json()["error"]["type"] == "VerificationError"


def test_metrics_visible_to_any_principal(service):
    client, store, _ = service
    r = client.get("/api/metrics", headers=EXPERT)
    assert r.status_code == 200
    assert r.json()["states"]["pending"] > 0
    r = client.get("/api/metrics", headers=WORKER)
    assert r.status_code == 200


def test_region_context_payload(service):
    client, _, regions = service
    region = regions[0]
    r = client.get(f"/api/regions/{region.region_id}/context",
                   headers=WORKER)
    assert r.status_code == 200
    body = r.json()
    assert body["image_ref"] == region.image_id
    assert body["bbox"] == region.bbox.as_list()
    assert body["candidates"] == [t.text for t in region.matched_tags]
    assert body["verification_state"] == "unverified"
    assert len(body["qa"]) == len(region.qa_pairs)


def test_open_mode_needs_no_tokens(tmp_path):
    ds, store, _ = build_corpus(tmp_path, {"cup": 1}, package_size=4)
    store.sample_for_verification(1, round_id=0)
    client = TestClient(make_app(store))
    task = lease_one(client, headers={}, worker_id="anyone")
    r = client.post(f"/api/tasks/{task['task_id']}/submit",
                    json={"worker_id": "anyone",
                          "result": {"selected": []}}
                    if task["kind"] == "tag_filter" else
                    {"worker_id": "anyone",
                     "result": {"outcome": "correct"}})
    assert r.status_code == 200


def test_malformed_body_is_a_422(service):
    client, _, _ = service
    r = client.post("/api/tasks/lease", json={"worker": "ann-1"},
                    headers=WORKER)
    assert r.status_code == 422
    assert "detail" in r.json()
