"""Token authority: registration grant -> authorization string -> short-lived
access token checked on every gateway request.

Tokens are opaque random strings validated by server-side lookup; there is
nothing to forge offline and nothing self-validating to leak.
"""
from __future__ import annotations

import base64
import json
import os
import secrets
import threading
from dataclasses import dataclass, field

from .errors import (
    GrantRevoked,
    IdentityBanned,
    ScopeMismatch,
    TokenExpired,
    UnknownGrant,
    UnknownIdentity,
    UnknownScope,
    UnknownToken,
)
from .model import Clock, ContainerIdentity, IdentityState, atomic_write_json

DEFAULT_TTL_MS = 3_600_000  # 1 hour


def _random_string() -> str:
    return base64.urlsafe_b64encode(secrets.token_bytes(32)).rstrip(b"=").decode("ascii")


@dataclass
class AuthorizationGrant:
    container_id: str
    grant_string: str
    scopes: frozenset[str]
    revoked: bool = False


@dataclass(frozen=True)
class AccessToken:
    token_string: str
    container_id: str
    scopes: frozenset[str]
    issued_at: int
    expires_at: int
    grant_string: str = field(repr=False, default="")


@dataclass(frozen=True)
class TokenClaims:
    """Successful validation result."""

    container_id: str
    scopes: frozenset[str]


class TokenAuthority:
    """Stores grants and tokens; validations take a consistent snapshot under
    the same lock that serializes issue/revoke."""

    def __init__(self, known_scopes=None, store_path: str | None = None):
        self._lock = threading.RLock()
        self._grants: dict[str, AuthorizationGrant] = {}
        self._tokens: dict[str, AccessToken] = {}
        self._known_scopes = known_scopes  # callable or container of valid service names
        self._store_path = store_path
        if store_path and os.path.exists(store_path):
            self._load(store_path)

    def _scope_known(self, scope: str) -> bool:
        if self._known_scopes is None:
            return True
        if callable(self._known_scopes):
            return self._known_scopes(scope)
        return scope in self._known_scopes

    def register_client(self, identity: ContainerIdentity, scopes) -> AuthorizationGrant:
        if identity.state is IdentityState.BANNED:
            raise IdentityBanned(identity.container_id)
        if identity.state is not IdentityState.REGISTERED:
            raise UnknownIdentity(identity.container_id)
        scopes = frozenset(scopes)
        for scope in scopes:
            if not self._scope_known(scope):
                raise UnknownScope(scope)
        grant = AuthorizationGrant(
            container_id=identity.container_id,
            grant_string=_random_string(),
            scopes=scopes,
        )
        with self._lock:
            self._grants[grant.grant_string] = grant
            self._persist()
        return grant

    def issue_token(self, grant_string: str, clock: Clock, ttl_ms: int = DEFAULT_TTL_MS) -> AccessToken:
        if ttl_ms <= 0:
            raise ValueError("ttl_ms must be positive")
        with self._lock:
            grant = self._grants.get(grant_string)
            if grant is None:
                raise UnknownGrant()
            if grant.revoked:
                raise GrantRevoked(grant.container_id)
            issued_at = clock.now()
            token = AccessToken(
                token_string=_random_string(),
                container_id=grant.container_id,
                scopes=grant.scopes,
                issued_at=issued_at,
                expires_at=issued_at + ttl_ms,
                grant_string=grant_string,
            )
            self._tokens[token.token_string] = token
            self._persist()
        return token

    def validate_token(self, token_string: str, service_name: str, clock: Clock) -> TokenClaims:
        """A token is valid strictly before expires_at, for services in scope,
        and only while its grant is unrevoked."""
        with self._lock:
            token = self._tokens.get(token_string or "")
            if token is None:
                raise UnknownToken()
            grant = self._grants.get(token.grant_string)
            if grant is None or grant.revoked:
                raise UnknownToken()
            if clock.now() >= token.expires_at:
                raise TokenExpired()
            if service_name not in token.scopes:
                raise ScopeMismatch(service_name)
            return TokenClaims(container_id=token.container_id, scopes=token.scopes)

    def revoke_grant(self, grant_string: str) -> None:
        """Revoking a grant invalidates every token derived from it."""
        with self._lock:
            grant = self._grants.get(grant_string)
            if grant is None:
                raise UnknownGrant()
            grant.revoked = True
            self._persist()

    def grants_for(self, container_id: str) -> list[AuthorizationGrant]:
        with self._lock:
            return [g for g in self._grants.values() if g.container_id == container_id]

    # -- persistence (JSON store) -------------------------------------------

    def _persist(self) -> None:
        if not self._store_path:
            return
        obj = {
            "grants": [
                {
                    "container_id": g.container_id,
                    "grant_string": g.grant_string,
                    "scopes": sorted(g.scopes),
                    "revoked": g.revoked,
                }
                for g in self._grants.values()
            ],
            "tokens": [
                {
                    "token_string": t.token_string,
                    "container_id": t.container_id,
                    "scopes": sorted(t.scopes),
                    "issued_at": t.issued_at,
                    "expires_at": t.expires_at,
                    "grant_string": t.grant_string,
                }
                for t in self._tokens.values()
            ],
        }
        atomic_write_json(self._store_path, obj)

    def _load(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        for g in obj.get("grants", []):
            grant = AuthorizationGrant(
                container_id=g["container_id"],
                grant_string=g["grant_string"],
                scopes=frozenset(g["scopes"]),
                revoked=g["revoked"],
            )
            self._grants[grant.grant_string] = grant
        for t in obj.get("tokens", []):
            token = AccessToken(
                token_string=t["token_string"],
                container_id=t["container_id"],
                scopes=frozenset(t["scopes"]),
                issued_at=t["issued_at"],
                expires_at=t["expires_at"],
                grant_string=t["grant_string"],
            )
            self._tokens[token.token_string] = token
