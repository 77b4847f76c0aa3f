"""Development-space harness: run a scripted app against a fresh, fully wired
gateway stack, aggregate its behavior and gate admission into the live space.

Fork-bomb / signal-exhaustion style attacks target kernel resource limits and
sit outside this harness; the bundled scenarios cover the network-visible
vectors (request flooding, credential probing, egress violations, MITM
certificate swaps).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .authz import AccessToken
from .egress import DestinationPattern, EgressPolicy, PatternKind
from .errors import ParseError, ScriptError
from .gateway import GatewayRequest
from .identity import Certificate, make_self_signed
from .model import IdentityState, ManualClock
from .stack import BehaviorPolicyConfig, GatekeepConfig, GatewayStack, RouteConfig, make_in_process_stack


class TokenMode(str, Enum):
    VALID = "Valid"
    MISSING = "Missing"
    FORGED = "Forged"
    WRONG_SCOPE = "WrongScope"


class CertMode(str, Enum):
    PINNED = "Pinned"
    FRESH_VALID = "FreshValid"
    SELF_SIGNED = "SelfSigned"


@dataclass(frozen=True)
class Step:
    at_ms: int
    action: str  # "request" | "egress" | "present_cert"
    service: Optional[str] = None
    token_mode: TokenMode = TokenMode.VALID
    host: Optional[str] = None
    port: Optional[int] = None
    cert_mode: CertMode = CertMode.PINNED


@dataclass(frozen=True)
class ScenarioScript:
    app_id: str
    steps: tuple[Step, ...]

    def __post_init__(self) -> None:
        last = -1
        for step in self.steps:
            if step.at_ms < last:
                raise ScriptError(f"step at {step.at_ms}ms is before {last}ms")
            last = step.at_ms


def parse_scenario(text: str) -> ScenarioScript:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
    try:
        steps = []
        for raw in obj["steps"]:
            action = raw["action"]
            if action not in ("request", "egress", "present_cert"):
                raise ParseError(f"unknown action {action!r}")
            # "repeat"/"every_ms" expand one line into a burst of steps
            repeat = int(raw.get("repeat", 1))
            every_ms = int(raw.get("every_ms", 0))
            for i in range(repeat):
                steps.append(Step(
                    at_ms=int(raw["at_ms"]) + i * every_ms,
                    action=action,
                    service=raw.get("service"),
                    token_mode=TokenMode(raw.get("token_mode", "Valid")),
                    host=raw.get("host"),
                    port=raw.get("port"),
                    cert_mode=CertMode(raw.get("cert_mode", "Pinned")),
                ))
        return ScenarioScript(app_id=obj["app_id"], steps=tuple(steps))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from exc


@dataclass(frozen=True)
class BehaviorReport:
    app_id: str
    status_totals: dict[str, int]
    egress_denials: int
    pin_rejections: int
    final_state: str
    ban_reason: Optional[str]
    audit_verified: bool

    def to_json(self) -> dict:
        return {
            "app_id": self.app_id,
            "status_totals": dict(sorted(self.status_totals.items())),
            "egress_denials": self.egress_denials,
            "pin_rejections": self.pin_rejections,
            "final_state": self.final_state,
            "ban_reason": self.ban_reason,
            "audit_verified": self.audit_verified,
        }


class SandboxEnv:
    """Fresh in-process gateway stack with echo upstreams and a manual clock.

    Shares no state with any live space: all stores are in-memory, so a run
    cannot touch live files.
    """

    DEFAULT_SERVICES = ("weather", "database")
    DEFAULT_EGRESS_WHITELIST = (DestinationPattern(PatternKind.EXACT_HOST, "mirror.sandbox.internal"),)

    def __init__(self, app_id: str, services=DEFAULT_SERVICES,
                 policy: BehaviorPolicyConfig | None = None) -> None:
        self.clock = ManualClock()
        config = GatekeepConfig(
            routes=[RouteConfig(service_name=s, upstream_address="127.0.0.1:9", required_scope=s)
                    for s in services],
            policy=policy or BehaviorPolicyConfig(),
        )
        # fixed key keeps sandbox reports deterministic across runs
        self.stack = make_in_process_stack(
            {s: (lambda payload: payload) for s in services},
            config=config, clock=self.clock, key=b"\x42" * 32,
        )
        self.stack.set_egress_policy(EgressPolicy(whitelist=self.DEFAULT_EGRESS_WHITELIST))
        self.app_id = app_id
        self.stack.registry.register({"id": app_id, "name": app_id})
        self.app_cert = self.stack.ca.issue(app_id)
        self._tokens: dict[frozenset, AccessToken] = {}

    def token_for(self, scopes: frozenset[str]) -> str:
        token = self._tokens.get(scopes)
        if token is None or self.clock.now() >= token.expires_at:
            grant = self.stack.authority.register_client(
                self.stack.registry.require(self.app_id), scopes)
            token = self.stack.authority.issue_token(grant.grant_string, self.clock)
            self._tokens[scopes] = token
        return token.token_string


def _token_for_step(env: SandboxEnv, step: Step, service: str) -> Optional[str]:
    if step.token_mode is TokenMode.MISSING:
        return None
    if step.token_mode is TokenMode.FORGED:
        return "forged-" + "A" * 43
    if step.token_mode is TokenMode.WRONG_SCOPE:
        others = frozenset(env.stack.routes.names()) - {service}
        return env.token_for(frozenset(sorted(others)[:1]))
    return env.token_for(frozenset({service}))


def _cert_for_step(env: SandboxEnv, mode: CertMode) -> Certificate:
    if mode is CertMode.FRESH_VALID:
        return env.stack.ca.issue(env.app_id)
    if mode is CertMode.SELF_SIGNED:
        return make_self_signed(env.app_id)
    return env.app_cert


def run_scenario(script: ScenarioScript, env: SandboxEnv | None = None) -> BehaviorReport:
    env = env or SandboxEnv(script.app_id)
    stack = env.stack
    pin_rejections = 0
    egress_denials = 0

    for step in script.steps:
        env.clock.set(step.at_ms)
        if step.action == "egress":
            decision = stack.handle_egress(script.app_id, step.host, step.port or 443)
            if not decision.allowed:
                egress_denials += 1
            continue
        service = step.service or sorted(stack.routes.names())[0]
        cert = _cert_for_step(env, step.cert_mode)
        if step.action == "present_cert":
            # connection probe: valid token, the certificate under test
            token = env.token_for(frozenset({service}))
        else:
            token = _token_for_step(env, step, service)
        response = stack.enforce(GatewayRequest(
            claimed_container_id=script.app_id,
            service_name=service,
            payload=b"probe",
            token_string=token,
            presented_cert=cert,
            received_at=env.clock.now(),
        ))
        if response.detail.startswith("pin:"):
            pin_rejections += 1

    snapshot = stack.sentinel.snapshot(script.app_id)
    ident = stack.registry.require(script.app_id)
    ban_reason = _ban_reason_from_log(stack, script.app_id)
    return BehaviorReport(
        app_id=script.app_id,
        status_totals=snapshot["cumulative"],
        egress_denials=egress_denials,
        pin_rejections=pin_rejections,
        final_state=ident.state.value,
        ban_reason=ban_reason,
        audit_verified=stack.verify_own_chain().ok,
    )


def _ban_reason_from_log(stack: GatewayStack, app_id: str) -> Optional[str]:
    for record in stack.audit_log.records:
        entry = json.loads(record.entry.decode("utf-8"))
        if entry.get("type") == "admin" and entry.get("action") == "ban" \
                and entry.get("container_id") == app_id:
            return entry.get("reason")
    return None


class Classification(str, Enum):
    BENIGN = "Benign"
    SUSPICIOUS = "Suspicious"
    MALICIOUS = "Malicious"


@dataclass(frozen=True)
class Thresholds:
    max_401: int = 0
    max_400: int = 0
    allow_any_egress_denial: bool = False


def classify(report: BehaviorReport, thresholds: Thresholds | None = None) -> Classification:
    t = thresholds or Thresholds()
    if report.final_state == IdentityState.BANNED.value or report.pin_rejections > 0:
        return Classification.MALICIOUS
    if report.status_totals.get("401", 0) > t.max_401:
        return Classification.SUSPICIOUS
    if report.status_totals.get("400", 0) > t.max_400:
        return Classification.SUSPICIOUS
    if report.egress_denials > 0 and not t.allow_any_egress_denial:
        return Classification.SUSPICIOUS
    return Classification.BENIGN


class DecisionKind(str, Enum):
    ADMIT = "Admit"
    NEEDS_REVIEW = "NeedsReview"
    REJECT = "Reject"


@dataclass(frozen=True)
class IntegrationDecision:
    kind: DecisionKind
    reasons: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is not DecisionKind.ADMIT and not self.reasons:
            raise ValueError(f"{self.kind.value} requires at least one reason")

    def to_json(self) -> dict:
        return {"decision": self.kind.value, "reasons": list(self.reasons)}


def gate(classification: Classification, report: BehaviorReport,
         thresholds: Thresholds | None = None) -> IntegrationDecision:
    t = thresholds or Thresholds()
    if classification is Classification.BENIGN:
        return IntegrationDecision(DecisionKind.ADMIT)
    reasons: list[str] = []
    if report.final_state == IdentityState.BANNED.value:
        reasons.append(f"banned: {report.ban_reason or 'unknown'}")
    if report.pin_rejections > 0:
        reasons.append(f"pin rejections: {report.pin_rejections}")
    n401 = report.status_totals.get("401", 0)
    if n401 > t.max_401:
        reasons.append(f"401 count {n401} > {t.max_401}")
    n400 = report.status_totals.get("400", 0)
    if n400 > t.max_400:
        reasons.append(f"400 count {n400} > {t.max_400}")
    if report.egress_denials > 0 and not t.allow_any_egress_denial:
        reasons.append(f"egress denials: {report.egress_denials}")
    if classification is Classification.MALICIOUS:
        return IntegrationDecision(DecisionKind.REJECT, tuple(reasons))
    return IntegrationDecision(DecisionKind.NEEDS_REVIEW, tuple(reasons))
