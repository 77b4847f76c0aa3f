"""Wiring of one complete gateway stack (the "live space"): configuration,
state stores, token authority, sentinel, pinning, audit chain and egress
policy behind a single object the service and the sandbox both use.
"""
from __future__ import annotations

import json
import os
from typing import Callable, Optional

from pydantic import BaseModel, Field, ValidationError

from .auditlog import AuditChain, load as load_records, load_head, verify_chain
from .authz import DEFAULT_TTL_MS, TokenAuthority
from .egress import EgressPolicy, handle_egress, load_policy
from .errors import ConfigError
from .gateway import (
    DEFAULT_UPSTREAM_TIMEOUT_MS,
    Gateway,
    HttpForwarder,
    InProcessForwarder,
    RouteTable,
)
from .identity import InternalCA, PinMode, PinStore
from .model import Clock, IdentityRegistry, ServiceRoute, SystemClock
from .sentinel import DEFAULT_THROTTLE_INTERVAL_MS, BehaviorPolicy, Sentinel

CONFIG_ENV = "GATEKEEP_CONFIG"
MAC_KEY_ENV = "GATEKEEP_MAC_KEY_FILE"


class RouteConfig(BaseModel):
    service_name: str
    upstream_address: str
    required_scope: str


class BindConfig(BaseModel):
    host: str = "127.0.0.1"
    port: int = 8000


class GatekeepConfig(BaseModel):
    routes: list[RouteConfig] = Field(default_factory=list)
    policy: BehaviorPolicyConfig = Field(default_factory=lambda: BehaviorPolicyConfig())
    token_ttl_ms: int = DEFAULT_TTL_MS
    upstream_timeout_ms: int = DEFAULT_UPSTREAM_TIMEOUT_MS
    throttle_interval_ms: int = DEFAULT_THROTTLE_INTERVAL_MS
    pin_mode: str = "TrustOnFirstUse"
    require_peer_cert: bool = False
    mac_key_file: Optional[str] = None
    audit_log_file: Optional[str] = None
    audit_head_file: Optional[str] = None
    registry_file: Optional[str] = None
    pin_store_file: Optional[str] = None
    egress_policy_file: Optional[str] = None
    authz_store_file: Optional[str] = None
    gateway_bind: BindConfig = Field(default_factory=BindConfig)
    egress_bind: BindConfig = Field(default_factory=lambda: BindConfig(port=8800))


class BehaviorPolicyConfig(BaseModel):
    dos_max_requests: int = 1000
    dos_window_ms: int = 5_000
    unauth_max: int = 20
    unauth_window_ms: int = 60_000
    malformed_max: int = 50
    malformed_window_ms: int = 60_000

    def to_policy(self) -> BehaviorPolicy:
        return BehaviorPolicy(**self.model_dump())


GatekeepConfig.model_rebuild()


def load_config(path: Optional[str] = None) -> GatekeepConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return GatekeepConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return GatekeepConfig.model_validate(data)
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from exc


def _load_key(config: GatekeepConfig) -> bytes:
    key_file = os.environ.get(MAC_KEY_ENV) or config.mac_key_file
    if not key_file:
        # ephemeral per-run key; fine for in-memory stacks and tests
        return os.urandom(32)
    try:
        with open(key_file, "rb") as fh:
            key = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read MAC key file {key_file}: {exc}") from exc
    if len(key) != 32:
        raise ConfigError(f"MAC key file {key_file} must hold exactly 32 bytes")
    return key


class GatewayStack:
    """Everything one deployment needs, built from a GatekeepConfig."""

    def __init__(self, config: GatekeepConfig | None = None, clock: Clock | None = None,
                 forwarder=None, key: bytes | None = None) -> None:
        self.config = config or GatekeepConfig()
        self.clock = clock or SystemClock()
        self.mac_key = key if key is not None else _load_key(self.config)

        self.registry = IdentityRegistry(self.config.registry_file)
        self.routes = RouteTable()
        for rc in self.config.routes:
            self.routes.register(ServiceRoute(rc.service_name, rc.upstream_address, rc.required_scope))
        self.authority = TokenAuthority(
            known_scopes=lambda s: s in self.routes.names(),
            store_path=self.config.authz_store_file,
        )
        self.sentinel = Sentinel(self.config.policy.to_policy(),
                                 throttle_interval_ms=self.config.throttle_interval_ms)
        self.audit_log = AuditChain(self.mac_key,
                                    log_path=self.config.audit_log_file,
                                    head_path=self.config.audit_head_file)
        self.ca = InternalCA()
        self.pin_store = PinStore(PinMode(self.config.pin_mode), path=self.config.pin_store_file)
        self.egress_policy = self._load_egress_policy()
        self.gateway = Gateway(
            registry=self.registry,
            authority=self.authority,
            sentinel=self.sentinel,
            routes=self.routes,
            audit_log=self.audit_log,
            clock=self.clock,
            pin_store=self.pin_store,
            ca=self.ca,
            forwarder=forwarder or HttpForwarder(self.config.upstream_timeout_ms),
            require_peer_cert=self.config.require_peer_cert,
        )

    def _load_egress_policy(self) -> EgressPolicy:
        path = self.config.egress_policy_file
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                return load_policy(fh.read())
        return EgressPolicy()

    # -- operations shared by service and CLI -------------------------------

    def enforce(self, request):
        return self.gateway.enforce(request)

    def handle_egress(self, container_id: str, destination: str, port: int):
        return handle_egress(container_id, destination, port, self.egress_policy,
                             self.registry, self.sentinel, self.audit_log)

    def set_egress_policy(self, policy: EgressPolicy) -> None:
        """Immutable snapshot swap; persists when a policy file is configured."""
        self.egress_policy = policy
        if self.config.egress_policy_file:
            from .model import atomic_write_json
            atomic_write_json(self.config.egress_policy_file, policy.to_json())

    def audit_admin(self, action: str, **detail) -> None:
        self.audit_log.append_entry({"type": "admin", "action": action, **detail})

    def verify_own_chain(self):
        return verify_chain(self.audit_log.records, self.audit_log.head, self.mac_key)


def verify_log_files(log_path: str, head_path: Optional[str], key: bytes):
    records = load_records(log_path)
    head = load_head(head_path) if head_path else None
    return verify_chain(records, head, key)


def make_in_process_stack(routes: dict[str, Callable[[bytes], bytes]],
                          config: GatekeepConfig | None = None,
                          clock: Clock | None = None,
                          key: bytes | None = None) -> GatewayStack:
    """Stack with stub upstreams, used by tests and the sandbox."""
    config = config or GatekeepConfig()
    if not config.routes:
        config = config.model_copy(update={"routes": [
            RouteConfig(service_name=name, upstream_address="127.0.0.1:9", required_scope=name)
            for name in routes
        ]})
    forwarder = InProcessForwarder(routes)
    return GatewayStack(config=config, clock=clock, forwarder=forwarder, key=key)
