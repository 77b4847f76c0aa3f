"""Outbound traffic filter: blacklist-then-whitelist destination matching.

Deny wins: a blacklist hit overrides any whitelist entry, and an empty
whitelist denies everything. No DNS resolution happens here; host patterns
match the name as presented, IP patterns match literal addresses.
"""
from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import MalformedDestination, ParseError, UnknownIdentity
from .sentinel import BanReason, Verdict, VerdictKind


class PatternKind(str, Enum):
    EXACT_HOST = "ExactHost"
    HOST_SUFFIX = "HostSuffix"
    EXACT_IPV4 = "ExactIPv4"
    IPV4_CIDR = "IPv4Cidr"


@dataclass(frozen=True)
class DestinationPattern:
    kind: PatternKind
    value: str
    port: Optional[int] = None

    def __post_init__(self) -> None:
        if self.port is not None and not 1 <= self.port <= 65535:
            raise ParseError(f"port {self.port} out of range")
        if self.kind is PatternKind.HOST_SUFFIX and not self.value.startswith("."):
            raise ParseError(f"suffix pattern {self.value!r} must begin with '.'")
        if self.kind is PatternKind.EXACT_IPV4:
            try:
                ipaddress.IPv4Address(self.value)
            except ValueError as exc:
                raise ParseError(f"bad IPv4 address {self.value!r}") from exc
        if self.kind is PatternKind.IPV4_CIDR:
            try:
                ipaddress.IPv4Network(self.value, strict=False)
            except ValueError as exc:
                raise ParseError(f"bad CIDR {self.value!r}") from exc

    def matches(self, host: str, ip: Optional[ipaddress.IPv4Address], port: int) -> bool:
        if self.port is not None and port != self.port:
            return False
        if self.kind is PatternKind.EXACT_HOST:
            return ip is None and host == self.value.lower()
        if self.kind is PatternKind.HOST_SUFFIX:
            return ip is None and host.endswith(self.value.lower())
        if ip is None:
            return False
        if self.kind is PatternKind.EXACT_IPV4:
            return ip == ipaddress.IPv4Address(self.value)
        return ip in ipaddress.IPv4Network(self.value, strict=False)

    def to_json(self) -> dict:
        obj = {"kind": self.kind.value, "value": self.value}
        if self.port is not None:
            obj["port"] = self.port
        return obj


@dataclass(frozen=True)
class EgressPolicy:
    whitelist: tuple[DestinationPattern, ...] = ()
    blacklist: tuple[DestinationPattern, ...] = ()
    violation_ban: bool = True

    def with_whitelisted(self, pattern: DestinationPattern) -> "EgressPolicy":
        return EgressPolicy(self.whitelist + (pattern,), self.blacklist, self.violation_ban)

    def with_blacklisted(self, pattern: DestinationPattern) -> "EgressPolicy":
        return EgressPolicy(self.whitelist, self.blacklist + (pattern,), self.violation_ban)

    def to_json(self) -> dict:
        return {
            "whitelist": [p.to_json() for p in self.whitelist],
            "blacklist": [p.to_json() for p in self.blacklist],
            "violation_ban": self.violation_ban,
        }


class DenyReason(str, Enum):
    BLACKLISTED = "Blacklisted"
    NOT_WHITELISTED = "NotWhitelisted"


@dataclass(frozen=True)
class EgressDecision:
    allowed: bool
    reason: Optional[DenyReason] = None


ALLOW = EgressDecision(True)


def _parse_destination(host_or_ip: str) -> tuple[str, Optional[ipaddress.IPv4Address]]:
    dest = host_or_ip.strip().lower()
    if not dest or any(c.isspace() for c in dest) or "/" in dest:
        raise MalformedDestination(host_or_ip)
    try:
        return dest, ipaddress.IPv4Address(dest)
    except ValueError:
        pass
    if not all(c.isalnum() or c in ".-_" for c in dest):
        raise MalformedDestination(host_or_ip)
    return dest, None


def check_destination(policy: EgressPolicy, host_or_ip: str, port: int) -> EgressDecision:
    """Blacklist has strict precedence; anything not whitelisted is denied."""
    if not 1 <= port <= 65535:
        raise MalformedDestination(f"port {port}")
    host, ip = _parse_destination(host_or_ip)
    if any(p.matches(host, ip, port) for p in policy.blacklist):
        return EgressDecision(False, DenyReason.BLACKLISTED)
    if any(p.matches(host, ip, port) for p in policy.whitelist):
        return ALLOW
    return EgressDecision(False, DenyReason.NOT_WHITELISTED)


def handle_egress(container_id: str, destination: str, port: int,
                  policy: EgressPolicy, registry, sentinel, audit_log) -> EgressDecision:
    """Enforce the policy for one outbound attempt; every attempt is logged
    and a denial bans the container when violation_ban is set."""
    if registry.get(container_id) is None:
        raise UnknownIdentity(container_id)
    decision = check_destination(policy, destination, port)
    audit_log.append_entry({
        "type": "egress",
        "container_id": container_id,
        "destination": destination,
        "port": port,
        "allowed": decision.allowed,
        "reason": decision.reason.value if decision.reason else None,
    })
    if not decision.allowed and policy.violation_ban:
        sentinel.apply_verdict(registry, container_id,
                               Verdict(VerdictKind.BAN, BanReason.EGRESS_VIOLATION), audit_log)
    return decision


def policy_from_json(obj: dict) -> EgressPolicy:
    def patterns(key: str) -> tuple[DestinationPattern, ...]:
        out = []
        for i, item in enumerate(obj.get(key, [])):
            try:
                kind = PatternKind(item["kind"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"{key}[{i}]: unknown pattern kind") from exc
            try:
                out.append(DestinationPattern(kind, item["value"], item.get("port")))
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{key}[{i}]: {exc}") from exc
            except ParseError as exc:
                raise ParseError(f"{key}[{i}]: {exc}") from exc
        return tuple(out)

    return EgressPolicy(
        whitelist=patterns("whitelist"),
        blacklist=patterns("blacklist"),
        violation_ban=bool(obj.get("violation_ban", True)),
    )


def load_policy(text: str) -> EgressPolicy:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ParseError("policy document must be a JSON object")
    return policy_from_json(obj)
