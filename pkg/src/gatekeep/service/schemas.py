"""Request/response models for the admin API."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel


class ClientRegistration(BaseModel):
    container_id: str
    display_name: str = ""


class ClientView(BaseModel):
    container_id: str
    display_name: str
    state: str
    pinned_fingerprint: Optional[str] = None


class GrantRequest(BaseModel):
    container_id: str
    scopes: list[str]


class GrantView(BaseModel):
    container_id: str
    grant_string: str
    scopes: list[str]
    revoked: bool = False


class GrantRevocation(BaseModel):
    grant_string: str


class TokenRequest(BaseModel):
    grant_string: str
    ttl_ms: Optional[int] = None


class TokenView(BaseModel):
    token_string: str
    container_id: str
    scopes: list[str]
    issued_at: int
    expires_at: int


class RouteSpec(BaseModel):
    service_name: str
    upstream_address: str
    required_scope: str


class PatternSpec(BaseModel):
    kind: str
    value: str
    port: Optional[int] = None


class EgressTestRequest(BaseModel):
    host: str
    port: int


class EgressCheckRequest(BaseModel):
    container_id: str
    host: str
    port: int


class EgressDecisionView(BaseModel):
    allowed: bool
    reason: Optional[str] = None


class EgressPolicyView(BaseModel):
    whitelist: list[PatternSpec]
    blacklist: list[PatternSpec]
    violation_ban: bool


class PinResetRequest(BaseModel):
    container_id: str


class LogVerifyRequest(BaseModel):
    records: list[dict]  # {index, entry_b64, mac_hex}
    head: Optional[dict] = None  # {length, last_mac}


class LogVerifyResult(BaseModel):
    status: str
    first_bad_index: Optional[int] = None


class DepsScanRequest(BaseModel):
    manifest: dict
    db: dict
    first_seen: Optional[int] = None
    now: Optional[int] = None


class SandboxRunRequest(BaseModel):
    scenario: dict
    thresholds: Optional[dict] = None


class SentinelView(BaseModel):
    container_id: str
    cumulative: dict[str, int]
    recent_events: int
    throttled: bool
    state: str


class ErrorBody(BaseModel):
    error: str
    detail: str = ""
