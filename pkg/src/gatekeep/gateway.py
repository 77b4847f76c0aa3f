"""Inbound gateway: terminates client requests, runs the enforcement
pipeline in fixed order and forwards admitted traffic upstream.

Pipeline: pin check, ban check, syntax check, token check, rate admission,
forward. Exactly one request event per call is recorded to the sentinel and
appended to the audit chain, whatever the outcome.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional

import httpx

from . import model
from .auditlog import AuditChain
from .authz import TokenAuthority
from .errors import DuplicateService, GatekeepError, UpstreamFailure
from .identity import Certificate, InternalCA, PinStore, RejectReason, verify_peer
from .model import Clock, IdentityRegistry, IdentityState, RequestEvent, ServiceRoute
from .sentinel import BanReason, Sentinel, Verdict, VerdictKind

DEFAULT_UPSTREAM_TIMEOUT_MS = 5_000


@dataclass(frozen=True)
class GatewayRequest:
    claimed_container_id: str
    service_name: str
    payload: bytes = b""
    token_string: Optional[str] = None
    token_malformed: bool = False  # credential field present but unparsable
    presented_cert: Optional[Certificate] = None
    received_at: int = 0


@dataclass(frozen=True)
class GatewayResponse:
    status_code: int
    body: bytes = b""
    detail: str = ""


class RouteTable:
    def __init__(self) -> None:
        self._routes: dict[str, ServiceRoute] = {}
        self._lock = threading.RLock()

    def register(self, route: ServiceRoute) -> None:
        with self._lock:
            if route.service_name in self._routes:
                raise DuplicateService(route.service_name)
            self._routes[route.service_name] = route

    def get(self, service_name: str) -> Optional[ServiceRoute]:
        with self._lock:
            return self._routes.get(service_name)

    def names(self) -> set[str]:
        with self._lock:
            return set(self._routes)

    def all(self) -> list[ServiceRoute]:
        with self._lock:
            return list(self._routes.values())


class HttpForwarder:
    """Relays payloads to upstream services over HTTP, body-in body-out."""

    def __init__(self, timeout_ms: int = DEFAULT_UPSTREAM_TIMEOUT_MS) -> None:
        self._timeout = timeout_ms / 1000.0

    def forward(self, route: ServiceRoute, payload: bytes) -> bytes:
        url = f"http://{route.upstream_address}/"
        try:
            resp = httpx.post(url, content=payload, timeout=self._timeout)
        except httpx.HTTPError as exc:
            raise UpstreamFailure(str(exc)) from exc
        if resp.status_code >= 500:
            raise UpstreamFailure(f"upstream returned {resp.status_code}")
        return resp.content


class InProcessForwarder:
    """Test/sandbox transport: service name -> callable taking the payload."""

    def __init__(self, handlers: dict[str, Callable[[bytes], bytes]]) -> None:
        self.handlers = handlers
        self.hits: dict[str, int] = {}

    def forward(self, route: ServiceRoute, payload: bytes) -> bytes:
        handler = self.handlers.get(route.service_name)
        if handler is None:
            raise UpstreamFailure(f"no upstream for {route.service_name}")
        self.hits[route.service_name] = self.hits.get(route.service_name, 0) + 1
        try:
            return handler(payload)
        except Exception as exc:  # stub failures model connect/timeout faults
            raise UpstreamFailure(str(exc)) from exc


@dataclass
class Gateway:
    registry: IdentityRegistry
    authority: TokenAuthority
    sentinel: Sentinel
    routes: RouteTable
    audit_log: AuditChain
    clock: Clock
    pin_store: Optional[PinStore] = None
    ca: Optional[InternalCA] = None
    forwarder: object = None
    require_peer_cert: bool = True

    def enforce(self, request: GatewayRequest) -> GatewayResponse:
        """Request-level faults come back as status codes, never exceptions."""
        container_id = request.claimed_container_id.strip()
        response = self._decide(request, container_id)
        self._record(container_id or request.claimed_container_id, request.service_name, response)
        return response

    def _decide(self, request: GatewayRequest, container_id: str) -> GatewayResponse:
        now = self.clock.now()

        # 1. peer verification against the pin store
        if self.pin_store is not None and self.ca is not None:
            if request.presented_cert is None:
                if self.require_peer_cert:
                    return GatewayResponse(model.BANNED, detail="pin:MissingCertificate")
            else:
                verdict = verify_peer(self.pin_store, container_id, request.presented_cert, self.ca)
                if not verdict.accepted:
                    if verdict.reason is RejectReason.PIN_MISMATCH and self.registry.get(container_id):
                        self.sentinel.apply_verdict(
                            self.registry, container_id,
                            Verdict(VerdictKind.BAN, BanReason.PIN_VIOLATION), self.audit_log)
                    return GatewayResponse(model.BANNED, detail=f"pin:{verdict.reason.value}")

        # 2. ban check
        ident = self.registry.get(container_id)
        if ident is not None and ident.state is IdentityState.BANNED:
            return GatewayResponse(model.BANNED, detail="banned")

        # 3. syntactic validation
        if not container_id:
            return GatewayResponse(model.MALFORMED, detail="empty container id")
        if request.token_malformed:
            return GatewayResponse(model.MALFORMED, detail="unparsable token field")
        route = self.routes.get(request.service_name)
        if route is None:
            return GatewayResponse(model.MALFORMED, detail=f"unknown service {request.service_name!r}")

        # 4. token validation
        try:
            claims = self.authority.validate_token(request.token_string or "",
                                                   request.service_name, self.clock)
        except GatekeepError as exc:
            return GatewayResponse(model.UNAUTHORIZED, detail=type(exc).__name__)
        if claims.container_id != container_id:
            return GatewayResponse(model.UNAUTHORIZED, detail="token owned by another container")

        # 5. rate admission
        verdict = self.sentinel.evaluate(container_id, now)
        if verdict.kind is VerdictKind.BAN:
            if ident is not None:
                self.sentinel.apply_verdict(self.registry, container_id, verdict, self.audit_log)
            return GatewayResponse(model.BANNED, detail=f"ban:{verdict.ban_reason.value}")
        if not self.sentinel.admit_throttled(container_id, now):
            return GatewayResponse(model.THROTTLED, detail="throttled")

        # 6. forward
        self.sentinel.note_admission(container_id, now)
        try:
            body = self.forwarder.forward(route, request.payload)
        except UpstreamFailure as exc:
            return GatewayResponse(model.UPSTREAM_FAILURE, detail=str(exc))
        return GatewayResponse(model.OK, body=body)

    def _record(self, container_id: str, service_name: str, response: GatewayResponse) -> None:
        """One event per enforce call, then re-evaluate with the fresh event
        so threshold crossings take effect immediately."""
        with self.sentinel.lock_for(container_id):
            ts = self.clock.now()  # fresh read under the profile lock keeps per-profile order
            event = RequestEvent(
                timestamp=ts,
                container_id=container_id,
                service_name=service_name,
                status_code=response.status_code,
                detail=response.detail,
            )
            self.sentinel.record_event(event)
            self.audit_log.append_entry({"type": "request", **event.to_json()})
            verdict = self.sentinel.evaluate(container_id, ts)
            if verdict.kind is not VerdictKind.OK and self.registry.get(container_id) is not None:
                self.sentinel.apply_verdict(self.registry, container_id, verdict, self.audit_log)
