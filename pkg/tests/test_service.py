import base64
import json

import pytest
from fastapi.testclient import TestClient

from gatekeep.auditlog import export
from gatekeep.service.app import create_app, create_egress_app

from conftest import build_stack, register_app


@pytest.fixture
def service():
    stack = build_stack()
    return stack, TestClient(create_app(stack))


def admit_headers(stack, app_id="app-weatherviz", scopes=("weather",)):
    _, _, token = register_app(stack, app_id=app_id, scopes=scopes)
    return {"X-Container-Id": app_id, "Authorization": f"Bearer {token.token_string}"}


def test_gateway_endpoint_happy_path(service):
    stack, client = service
    headers = admit_headers(stack)
    resp = client.post("/svc/weather", headers=headers, content=b"ping")
    assert resp.status_code == 200
    assert resp.content == b"ping"


def test_gateway_endpoint_missing_token_401(service):
    stack, client = service
    stack.registry.register({"id": "app-x"})
    resp = client.post("/svc/weather", headers={"X-Container-Id": "app-x"})
    assert resp.status_code == 401


def test_gateway_endpoint_unknown_service_400(service):
    stack, client = service
    headers = admit_headers(stack)
    assert client.post("/svc/maps", headers=headers).status_code == 400


def test_gateway_endpoint_malformed_authorization_400(service):
    stack, client = service
    headers = admit_headers(stack)
    headers["Authorization"] = "NotBearer"
    assert client.post("/svc/weather", headers=headers).status_code == 400


def test_gateway_endpoint_banned_403(service):
    stack, client = service
    headers = admit_headers(stack)
    stack.registry.ban("app-weatherviz")
    assert client.post("/svc/weather", headers=headers).status_code == 403


def test_gateway_endpoint_client_cert_pinning(service):
    stack, client = service
    headers = admit_headers(stack)
    cert = stack.ca.issue("app-weatherviz")
    cert_b64 = base64.b64encode(cert.der_bytes).decode()
    resp = client.post("/svc/weather", headers={**headers, "X-Client-Cert": cert_b64})
    assert resp.status_code == 200
    swapped = base64.b64encode(stack.ca.issue("app-weatherviz").der_bytes).decode()
    resp = client.post("/svc/weather", headers={**headers, "X-Client-Cert": swapped})
    assert resp.status_code == 403
    assert resp.headers["X-Gateway-Detail"] == "pin:PinMismatch"


def test_admin_client_lifecycle(service):
    stack, client = service
    resp = client.post("/admin/clients", json={"container_id": "app-x", "display_name": "X"})
    assert resp.status_code == 200
    assert resp.json()["state"] == "Registered"
    assert client.post("/admin/clients", json={"container_id": "app-x"}).status_code == 400
    assert client.post("/admin/clients/app-x/ban").json()["state"] == "Banned"
    assert client.post("/admin/clients/app-x/unban").json()["state"] == "Registered"
    assert client.post("/admin/clients/ghost/ban").status_code == 404


def test_admin_grant_token_flow(service):
    stack, client = service
    client.post("/admin/clients", json={"container_id": "app-x"})
    grant = client.post("/admin/grants",
                        json={"container_id": "app-x", "scopes": ["weather"]}).json()
    token = client.post("/admin/tokens", json={"grant_string": grant["grant_string"]}).json()
    assert token["container_id"] == "app-x"
    assert token["expires_at"] > token["issued_at"]
    headers = {"X-Container-Id": "app-x", "Authorization": f"Bearer {token['token_string']}"}
    assert client.post("/svc/weather", headers=headers).status_code == 200
    client.post("/admin/grants/revoke", json={"grant_string": grant["grant_string"]})
    assert client.post("/svc/weather", headers=headers).status_code == 401


def test_admin_grant_unknown_scope(service):
    stack, client = service
    client.post("/admin/clients", json={"container_id": "app-x"})
    resp = client.post("/admin/grants", json={"container_id": "app-x", "scopes": ["maps"]})
    assert resp.status_code == 400


def test_admin_routes(service):
    stack, client = service
    resp = client.post("/admin/routes", json={
        "service_name": "maps", "upstream_address": "127.0.0.1:7001", "required_scope": "maps"})
    assert resp.status_code == 200
    names = {r["service_name"] for r in client.get("/admin/routes").json()}
    assert names == {"weather", "database", "maps"}
    assert client.post("/admin/routes", json={
        "service_name": "maps", "upstream_address": "127.0.0.1:7002",
        "required_scope": "maps"}).status_code == 400


def test_admin_egress_policy_and_test(service):
    stack, client = service
    client.post("/admin/egress/allow", json={"kind": "ExactHost", "value": "mirror.example.org"})
    client.post("/admin/egress/deny", json={"kind": "HostSuffix", "value": ".evil.net"})
    assert client.post("/admin/egress/test",
                       json={"host": "mirror.example.org", "port": 443}).json()["allowed"]
    denied = client.post("/admin/egress/test", json={"host": "x.evil.net", "port": 443}).json()
    assert not denied["allowed"]
    policy = client.get("/admin/egress").json()
    assert len(policy["whitelist"]) == 1 and len(policy["blacklist"]) == 1


def test_egress_app_check_and_ban(service):
    stack, _ = service
    egress_client = TestClient(create_egress_app(stack))
    stack.registry.register({"id": "app-x"})
    resp = egress_client.post("/egress/check",
                              json={"container_id": "app-x", "host": "evil.net", "port": 443})
    assert resp.status_code == 200
    assert not resp.json()["allowed"]
    assert stack.registry.get("app-x").state.value == "Banned"
    assert egress_client.post("/egress/check", json={
        "container_id": "ghost", "host": "a.com", "port": 443}).status_code == 404


def test_admin_pins(service):
    stack, client = service
    headers = admit_headers(stack)
    cert = stack.ca.issue("app-weatherviz")
    client.post("/svc/weather", headers={
        **headers, "X-Client-Cert": base64.b64encode(cert.der_bytes).decode()})
    pins = client.get("/admin/pins").json()
    assert "app-weatherviz" in pins
    client.post("/admin/pins/reset", json={"container_id": "app-weatherviz"})
    assert client.get("/admin/pins").json() == {}


def test_admin_sentinel_show_and_unban(service):
    stack, client = service
    headers = admit_headers(stack)
    client.post("/svc/weather", headers=headers)
    snap = client.get("/admin/sentinel/app-weatherviz").json()
    assert snap["cumulative"] == {"200": 1}
    stack.registry.ban("app-weatherviz")
    assert client.post("/admin/sentinel/app-weatherviz/unban").json()["state"] == "Registered"


def test_admin_log_verify_roundtrip(service, tmp_path):
    stack, client = service
    headers = admit_headers(stack)
    client.post("/svc/weather", headers=headers)
    log_path = tmp_path / "audit.jsonl"
    export(stack.audit_log.records, str(log_path))
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    head = {"length": len(records), "last_mac": records[-1]["mac_hex"]}
    result = client.post("/admin/log/verify", json={"records": records, "head": head}).json()
    assert result["status"] == "Ok"
    records[0]["entry_b64"] = "eHg="  # tamper
    result = client.post("/admin/log/verify", json={"records": records, "head": head}).json()
    assert result["status"] == "Tampered" and result["first_bad_index"] == 0
    live = client.get("/admin/log/verify").json()
    assert live["status"] == "Ok"


def test_admin_deps_scan(service):
    stack, client = service
    manifest = {"name": "app", "dependencies": [{"name": "library1", "version": "1.0"}]}
    db = {"records": [{"advisory_id": "A1", "library_name": "library1",
                       "affected_range": {"min_inclusive": "1.0", "max_exclusive": "1.5"},
                       "severity": "Critical"}]}
    resp = client.post("/admin/deps/scan", json={
        "manifest": manifest, "db": db, "first_seen": 0, "now": 1}).json()
    assert resp["status"] == "UpdateRequired"
    assert len(resp["report"]["findings"]) == 1
    resp = client.post("/admin/deps/scan", json={
        "manifest": manifest, "db": {"records": []}, "first_seen": 0, "now": 1}).json()
    assert resp["status"] == "Compliant"


def test_admin_sandbox_run(service):
    stack, client = service
    scenario = {"app_id": "app-t", "steps": [
        {"at_ms": 0, "action": "request", "service": "weather", "token_mode": "Valid"}]}
    resp = client.post("/admin/sandbox/run", json={"scenario": scenario}).json()
    assert resp["decision"] == "Admit"
    bad = {"app_id": "app-t", "steps": [
        {"at_ms": 0, "action": "egress", "host": "evil.net", "port": 443}]}
    resp = client.post("/admin/sandbox/run", json={"scenario": bad}).json()
    assert resp["decision"] == "Reject"


def test_mutating_admin_commands_extend_verifiable_chain(service):
    stack, client = service
    before = len(stack.audit_log)
    client.post("/admin/clients", json={"container_id": "app-x"})
    assert len(stack.audit_log) == before + 1
    client.post("/admin/egress/allow", json={"kind": "ExactHost", "value": "a.com"})
    assert len(stack.audit_log) == before + 2
    assert stack.verify_own_chain().ok


def test_healthz(service):
    _, client = service
    assert client.get("/healthz").json() == {"status": "ok"}
