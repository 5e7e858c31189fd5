import http.client
import json

import pytest

from actipol.config import Config
from actipol.service import BackgroundServer, DecisionService, build_engine


@pytest.fixture
def service():
    engine = build_engine(Config())
    yield DecisionService(engine)
    engine.shutdown()


def body(obj):
    return json.dumps(obj).encode()


def test_decide_permit(service):
    status, out = service.dispatch("GET", "/v1/decide?subject=u1&activity=sowing&action=startActivity")
    assert status == 200
    assert out["decision"] == "permit" and out["state"] == "running" and out["activity"] == "sowing"
    assert out["elapsed_ms"] >= 0
    assert service.dispatch("GET", "/v1/activities/sowing")[1]["state"] == out["state"]
    assert service.dispatch("GET", "/v1/activities/plowing")[1]["state"] == "finished"


def test_decide_deny_carries_reason_when_undecided(service):
    status, out = service.dispatch("GET", "/v1/decide?subject=u1&activity=harvesting&action=startActivity")
    assert status == 200 and out["decision"] == "deny" and out["state"] == "aborted"


@pytest.mark.parametrize(
    "query,status",
    [
        ("subject=u1&activity=sowing", 400),
        ("subject=u1&activity=sowing&action=continueActivity", 400),
        ("subject=u1&activity=sowing&action=postUpdate", 400),
        ("subject=u1&activity=sowing&action=fly", 400),
        ("activity=sowing&action=startActivity", 400),
        ("subject=u1&activity=ghost&action=startActivity", 404),
        ("subject=u1&activity=plowing&action=startActivity", 409),
    ],
)
def test_decide_errors(service, query, status):
    before = service.engine.store.snapshot()
    code, out = service.dispatch("GET", "/v1/decide?" + query)
    assert code == status and "error" in out
    assert service.engine.store.snapshot() == before


def test_health(service):
    assert service.dispatch("GET", "/healthz") == (200, {"status": "ok", "policies": 4})


def test_routes(service):
    assert service.dispatch("GET", "/v1/activities/ghost")[0] == 404
    assert service.dispatch("GET", "/nope")[0] == 404
    assert service.dispatch("POST", "/v1/decide")[0] == 405
    assert service.dispatch("GET", "/v1/reports/continuity/sowing")[0] == 404


def test_reads_do_not_mutate(service):
    log = []
    service.engine.store.add_audit_hook(log.append)
    for _ in range(5):
        service.dispatch("GET", "/v1/activities/sowing")
        service.dispatch("GET", "/healthz")
    assert log == []


def test_admin_upserts(service):
    status, out = service.dispatch("PUT", "/v1/admin/activities", body([{"id": "new", "state": "inactive", "mutable": False}]))
    assert status == 200 and out == {"updated": ["new"]}
    status, _ = service.dispatch(
        "PUT", "/v1/admin/dependencies", body({"subject": "new", "phase": "pre", "dependent": "sowing", "desired_state": "finished"})
    )
    assert status == 200
    status, _ = service.dispatch(
        "PUT", "/v1/admin/dependencies",
        body({"activity": "sowing", "target_state": "finished", "requirements": [{"activity": "plowing", "state": "finished"}]}),
    )
    assert status == 200


@pytest.mark.parametrize(
    "path,payload,status",
    [
        ("/v1/admin/dependencies", {"subject": "sowing", "phase": "pre", "dependent": "sowing", "desired_state": "finished"}, 400),
        ("/v1/admin/dependencies", {"subject": "sowing"}, 400),
        ("/v1/admin/activities", {"state": "running"}, 400),
        ("/v1/admin/activities", {"id": "x", "state": "sleeping"}, 400),
    ],
)
def test_admin_rejects(service, path, payload, status):
    code, out = service.dispatch("PUT", path, body(payload))
    assert code == status
    if "InvariantViolation" in json.dumps(out):
        assert "itself" in out["reason"]


def test_admin_invalid_json(service):
    assert service.dispatch("PUT", "/v1/admin/activities", b"{")[0] == 400


def test_admin_blocked_while_busy(service):
    txn = service.engine.store.begin_txn(touches=("sowing",))
    try:
        status, _ = service.dispatch("PUT", "/v1/admin/activities", body({"id": "sowing", "state": "inactive"}))
        assert status == 409
    finally:
        txn.rollback()


def test_continuity_report_endpoint(service):
    service.dispatch("GET", "/v1/decide?subject=u1&activity=sowing&action=startActivity")
    service.engine.wait_continuity("sowing", timeout=5)
    status, report = service.dispatch("GET", "/v1/reports/continuity/sowing")
    assert status == 200 and report["stop_reason"] == "exhausted" and len(report["iterations"]) == 10


def test_over_http(service):
    with BackgroundServer(service) as server:
        conn = http.client.HTTPConnection(*server.server.server_address[:2], timeout=5)
        for path, expected in [
            ("/healthz", 200),
            ("/v1/decide?subject=u1&activity=sowing&action=startActivity", 200),
            ("/v1/decide?subject=u1&activity=sowing", 400),
            ("/v1/activities/ghost", 404),
        ]:
            conn.request("GET", path)  # same keep-alive connection throughout
            resp = conn.getresponse()
            data = json.loads(resp.read())
            assert resp.status == expected
            assert resp.getheader("Content-Type") == "application/json"
        assert data["error"]
        conn.request("PUT", "/v1/admin/activities", body=body({"id": "zz"}))
        resp = conn.getresponse()
        assert resp.status == 200 and json.loads(resp.read()) == {"updated": ["zz"]}
        conn.close()
