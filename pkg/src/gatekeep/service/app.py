"""FastAPI front ends: the inbound gateway endpoint plus the admin API the
`gatectl` CLI talks to, and a small app for the egress check endpoint.
"""
from __future__ import annotations

import base64
import json

from fastapi import FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse

from .. import depcheck
from ..auditlog import ChainedLogRecord, ChainHead, verify_chain
from ..egress import DestinationPattern, PatternKind, check_destination
from ..errors import (
    DuplicateId,
    DuplicateService,
    EmptyId,
    GatekeepError,
    GrantRevoked,
    IdentityBanned,
    MalformedDestination,
    ParseError,
    ScriptError,
    UnknownGrant,
    UnknownIdentity,
    UnknownScope,
)
from ..gateway import GatewayRequest
from ..identity import Certificate
from ..model import ServiceRoute
from ..sandbox import Thresholds, classify, gate, parse_scenario, run_scenario
from ..stack import GatewayStack
from . import schemas

_CLIENT_FAULTS = (EmptyId, DuplicateId, UnknownIdentity, UnknownGrant, DuplicateService,
                  UnknownScope, IdentityBanned, GrantRevoked, MalformedDestination,
                  ParseError, ScriptError, ValueError)


def create_app(stack: GatewayStack) -> FastAPI:
    app = FastAPI(title="gatekeep gateway", version="0.1.0")
    app.state.stack = stack

    @app.exception_handler(GatekeepError)
    async def _domain_error(request: Request, exc: GatekeepError):
        status = 400 if isinstance(exc, _CLIENT_FAULTS) else 500
        if isinstance(exc, (UnknownIdentity, UnknownGrant)):
            status = 404
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    # ------------------------------------------------------------------ inbound

    @app.post("/svc/{service_name}")
    async def gateway_entry(
        service_name: str,
        request: Request,
        x_container_id: str = Header(default=""),
        authorization: str | None = Header(default=None),
        x_client_cert: str | None = Header(default=None),
    ) -> Response:
        token, malformed = _parse_bearer(authorization)
        cert = None
        if x_client_cert:
            try:
                cert = Certificate.from_der(base64.b64decode(x_client_cert, validate=True))
            except Exception:
                malformed = True
        payload = await request.body()
        resp = stack.enforce(GatewayRequest(
            claimed_container_id=x_container_id,
            service_name=service_name,
            payload=payload,
            token_string=token,
            token_malformed=malformed,
            presented_cert=cert,
            received_at=stack.clock.now(),
        ))
        return Response(content=resp.body, status_code=resp.status_code,
                        headers={"X-Gateway-Detail": resp.detail},
                        media_type="application/octet-stream")

    # ------------------------------------------------------------------- admin

    @app.post("/admin/clients", response_model=schemas.ClientView)
    def register_client(body: schemas.ClientRegistration):
        ident = stack.registry.register({"id": body.container_id,
                                         "name": body.display_name or body.container_id})
        stack.audit_admin("register_client", container_id=ident.container_id)
        return _client_view(ident)

    @app.get("/admin/clients", response_model=list[schemas.ClientView])
    def list_clients():
        return [_client_view(i) for i in stack.registry]

    @app.post("/admin/clients/{container_id}/ban", response_model=schemas.ClientView)
    def ban_client(container_id: str):
        ident = stack.registry.ban(container_id)
        stack.audit_admin("ban", container_id=container_id, reason="operator")
        return _client_view(ident)

    @app.post("/admin/clients/{container_id}/unban", response_model=schemas.ClientView)
    def unban_client(container_id: str):
        stack.sentinel.unban(stack.registry, container_id)
        stack.audit_admin("unban", container_id=container_id)
        return _client_view(stack.registry.require(container_id))

    @app.post("/admin/grants", response_model=schemas.GrantView)
    def create_grant(body: schemas.GrantRequest):
        ident = stack.registry.require(body.container_id)
        grant = stack.authority.register_client(ident, body.scopes)
        stack.audit_admin("register_grant", container_id=body.container_id,
                          scopes=sorted(grant.scopes))
        return schemas.GrantView(container_id=grant.container_id,
                                 grant_string=grant.grant_string,
                                 scopes=sorted(grant.scopes), revoked=grant.revoked)

    @app.post("/admin/grants/revoke")
    def revoke_grant(body: schemas.GrantRevocation):
        stack.authority.revoke_grant(body.grant_string)
        stack.audit_admin("revoke_grant")
        return {"revoked": True}

    @app.post("/admin/tokens", response_model=schemas.TokenView)
    def issue_token(body: schemas.TokenRequest):
        token = stack.authority.issue_token(body.grant_string, stack.clock,
                                            body.ttl_ms or stack.config.token_ttl_ms)
        stack.audit_admin("issue_token", container_id=token.container_id)
        return schemas.TokenView(token_string=token.token_string,
                                 container_id=token.container_id,
                                 scopes=sorted(token.scopes),
                                 issued_at=token.issued_at, expires_at=token.expires_at)

    @app.post("/admin/routes", response_model=schemas.RouteSpec)
    def add_route(body: schemas.RouteSpec):
        stack.routes.register(ServiceRoute(body.service_name, body.upstream_address,
                                           body.required_scope))
        stack.audit_admin("add_route", service_name=body.service_name)
        return body

    @app.get("/admin/routes", response_model=list[schemas.RouteSpec])
    def list_routes():
        return [schemas.RouteSpec(service_name=r.service_name,
                                  upstream_address=r.upstream_address,
                                  required_scope=r.required_scope)
                for r in stack.routes.all()]

    @app.post("/admin/egress/allow", response_model=schemas.EgressPolicyView)
    def egress_allow(body: schemas.PatternSpec):
        pattern = DestinationPattern(PatternKind(body.kind), body.value, body.port)
        stack.set_egress_policy(stack.egress_policy.with_whitelisted(pattern))
        stack.audit_admin("egress_allow", pattern=pattern.to_json())
        return _policy_view(stack)

    @app.post("/admin/egress/deny", response_model=schemas.EgressPolicyView)
    def egress_deny(body: schemas.PatternSpec):
        pattern = DestinationPattern(PatternKind(body.kind), body.value, body.port)
        stack.set_egress_policy(stack.egress_policy.with_blacklisted(pattern))
        stack.audit_admin("egress_deny", pattern=pattern.to_json())
        return _policy_view(stack)

    @app.get("/admin/egress", response_model=schemas.EgressPolicyView)
    def egress_show():
        return _policy_view(stack)

    @app.post("/admin/egress/test", response_model=schemas.EgressDecisionView)
    def egress_test(body: schemas.EgressTestRequest):
        decision = check_destination(stack.egress_policy, body.host, body.port)
        return schemas.EgressDecisionView(
            allowed=decision.allowed,
            reason=decision.reason.value if decision.reason else None)

    @app.get("/admin/pins")
    def list_pins():
        return {cid: fp.hex() for cid, fp in stack.pin_store.entries().items()}

    @app.post("/admin/pins/reset")
    def reset_pin(body: schemas.PinResetRequest):
        stack.pin_store.reset(body.container_id)
        stack.audit_admin("pin_reset", container_id=body.container_id)
        return {"reset": body.container_id}

    @app.get("/admin/sentinel/{container_id}", response_model=schemas.SentinelView)
    def sentinel_show(container_id: str):
        ident = stack.registry.require(container_id)
        snap = stack.sentinel.snapshot(container_id)
        return schemas.SentinelView(**snap, state=ident.state.value)

    @app.post("/admin/sentinel/{container_id}/unban", response_model=schemas.ClientView)
    def sentinel_unban(container_id: str):
        stack.sentinel.unban(stack.registry, container_id)
        stack.audit_admin("unban", container_id=container_id)
        return _client_view(stack.registry.require(container_id))

    @app.post("/admin/log/verify", response_model=schemas.LogVerifyResult)
    def log_verify(body: schemas.LogVerifyRequest):
        records = [
            ChainedLogRecord(index=r["index"],
                             entry=base64.b64decode(r["entry_b64"]),
                             mac=bytes.fromhex(r["mac_hex"]))
            for r in body.records
        ]
        head = None
        if body.head is not None:
            head = ChainHead(length=body.head["length"],
                             last_mac=bytes.fromhex(body.head["last_mac"]))
        result = verify_chain(records, head, stack.mac_key)
        return schemas.LogVerifyResult(status=result.status.value,
                                       first_bad_index=result.first_bad_index)

    @app.get("/admin/log/verify", response_model=schemas.LogVerifyResult)
    def log_verify_live():
        result = stack.verify_own_chain()
        return schemas.LogVerifyResult(status=result.status.value,
                                       first_bad_index=result.first_bad_index)

    @app.post("/admin/deps/scan")
    def deps_scan(body: schemas.DepsScanRequest):
        tree = depcheck.parse_manifest(json.dumps(body.manifest))
        db = depcheck.db_from_json(body.db)
        now = body.now if body.now is not None else stack.clock.now()
        first_seen = body.first_seen if body.first_seen is not None else now
        report = depcheck.scan(tree, db, generated_at=now)
        decision = depcheck.enforce_deadline(report, None, first_seen, now)
        stack.audit_admin("deps_scan", findings=len(report.findings),
                          status=decision.status.value)
        return {
            "report": report.to_json(),
            "status": decision.status.value,
            "deadline": decision.deadline,
        }

    @app.post("/admin/sandbox/run")
    def sandbox_run(body: schemas.SandboxRunRequest):
        script = parse_scenario(json.dumps(body.scenario))
        thresholds = Thresholds(**body.thresholds) if body.thresholds else Thresholds()
        report = run_scenario(script)
        classification = classify(report, thresholds)
        decision = gate(classification, report, thresholds)
        stack.audit_admin("sandbox_run", app_id=script.app_id,
                          decision=decision.kind.value)
        return {
            "report": report.to_json(),
            "classification": classification.value,
            **decision.to_json(),
        }

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    return app


def create_egress_app(stack: GatewayStack) -> FastAPI:
    """Outbound proxy control endpoint: containers ask permission for a
    destination; denials follow the violation-ban policy."""
    app = FastAPI(title="gatekeep egress", version="0.1.0")

    @app.post("/egress/check", response_model=schemas.EgressDecisionView)
    def egress_check(body: schemas.EgressCheckRequest):
        decision = stack.handle_egress(body.container_id, body.host, body.port)
        return schemas.EgressDecisionView(
            allowed=decision.allowed,
            reason=decision.reason.value if decision.reason else None)

    @app.exception_handler(GatekeepError)
    async def _domain_error(request: Request, exc: GatekeepError):
        status = 404 if isinstance(exc, UnknownIdentity) else 400
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    return app


def _parse_bearer(authorization: str | None) -> tuple[str | None, bool]:
    if authorization is None:
        return None, False
    parts = authorization.split()
    if len(parts) != 2 or parts[0].lower() != "bearer" or not parts[1]:
        return None, True
    return parts[1], False


def _client_view(ident) -> schemas.ClientView:
    return schemas.ClientView(
        container_id=ident.container_id,
        display_name=ident.display_name,
        state=ident.state.value,
        pinned_fingerprint=ident.pinned_fingerprint.hex() if ident.pinned_fingerprint else None,
    )


def _policy_view(stack: GatewayStack) -> schemas.EgressPolicyView:
    policy = stack.egress_policy
    return schemas.EgressPolicyView(
        whitelist=[schemas.PatternSpec(**p.to_json()) for p in policy.whitelist],
        blacklist=[schemas.PatternSpec(**p.to_json()) for p in policy.blacklist],
        violation_ban=policy.violation_ban,
    )
