"""Behavior analytics: sliding-window counters over status codes per
container, turned into throttle/ban verdicts.

Thresholds are strict-greater: a count exactly at the limit is the last
tolerated point. At 80% of any limit the container is throttled down to one
admitted request per throttle interval.
"""
from __future__ import annotations

import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .errors import OutOfOrderTimestamp
from .model import IdentityRegistry, IdentityState, RequestEvent

THROTTLE_FRACTION = 0.8
DEFAULT_THROTTLE_INTERVAL_MS = 1_000


@dataclass(frozen=True)
class BehaviorPolicy:
    dos_max_requests: int = 1000
    dos_window_ms: int = 5_000
    unauth_max: int = 20
    unauth_window_ms: int = 60_000
    malformed_max: int = 50
    malformed_window_ms: int = 60_000

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def max_window(self) -> int:
        return max(self.dos_window_ms, self.unauth_window_ms, self.malformed_window_ms)


class BanReason(str, Enum):
    DOS_RATE = "DosRate"
    UNAUTHORIZED_STORM = "UnauthorizedStorm"
    MALFORMED_STORM = "MalformedStorm"
    EGRESS_VIOLATION = "EgressViolation"
    PIN_VIOLATION = "PinViolation"


class VerdictKind(str, Enum):
    OK = "Ok"
    THROTTLE = "Throttle"
    BAN = "Ban"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    ban_reason: Optional[BanReason] = None

    def __post_init__(self) -> None:
        if (self.kind is VerdictKind.BAN) != (self.ban_reason is not None):
            raise ValueError("Ban carries exactly one reason; other verdicts carry none")


OK_VERDICT = Verdict(VerdictKind.OK)
THROTTLE_VERDICT = Verdict(VerdictKind.THROTTLE)


@dataclass
class BehaviorProfile:
    """Time-ordered recent events plus lifetime per-code counters.

    Events older than the retention horizon are pruned; pruning never changes
    a window_count result because the horizon exceeds every policy window.
    """

    container_id: str
    events: deque = field(default_factory=deque)  # (timestamp, status_code)
    cumulative: Counter = field(default_factory=Counter)
    last_timestamp: int = -1

    def record(self, event: RequestEvent, retention_ms: int) -> None:
        if event.container_id != self.container_id:
            raise ValueError("event belongs to a different container")
        if event.timestamp < self.last_timestamp:
            raise OutOfOrderTimestamp(
                f"{event.timestamp} < {self.last_timestamp} for {self.container_id}"
            )
        self.events.append((event.timestamp, event.status_code))
        self.cumulative[event.status_code] += 1
        self.last_timestamp = event.timestamp
        horizon = event.timestamp - retention_ms
        while self.events and self.events[0][0] < horizon:
            self.events.popleft()

    def window_count(self, code_class: Callable[[int], bool], window_ms: int, now: int) -> int:
        if window_ms <= 0:
            raise ValueError("window_ms must be positive")
        lo = now - window_ms
        return sum(1 for ts, code in self.events if lo < ts <= now and code_class(code))


def evaluate(profile: BehaviorProfile, policy: BehaviorPolicy, now: int) -> Verdict:
    """Checks run in fixed order: DoS rate, 401 storm, 400 storm, throttle band."""
    checks = [
        (lambda c: True, policy.dos_window_ms, policy.dos_max_requests, BanReason.DOS_RATE),
        (lambda c: c == 401, policy.unauth_window_ms, policy.unauth_max, BanReason.UNAUTHORIZED_STORM),
        (lambda c: c == 400, policy.malformed_window_ms, policy.malformed_max, BanReason.MALFORMED_STORM),
    ]
    counts = []
    for pred, window, limit, reason in checks:
        count = profile.window_count(pred, window, now)
        if count > limit:
            return Verdict(VerdictKind.BAN, reason)
        counts.append((count, limit))
    if any(count >= THROTTLE_FRACTION * limit for count, limit in counts):
        return THROTTLE_VERDICT
    return OK_VERDICT


class Sentinel:
    """Per-container profiles with serialized updates per container.

    Retention: largest policy window plus one window of slack; lifetime
    counters are kept separately for reporting.
    """

    def __init__(self, policy: BehaviorPolicy | None = None,
                 throttle_interval_ms: int = DEFAULT_THROTTLE_INTERVAL_MS) -> None:
        self.policy = policy or BehaviorPolicy()
        self.throttle_interval_ms = throttle_interval_ms
        self._profiles: dict[str, BehaviorProfile] = {}
        self._throttled: set[str] = set()
        self._last_admitted: dict[str, int] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()

    def lock_for(self, container_id: str) -> threading.RLock:
        with self._registry_lock:
            lock = self._locks.get(container_id)
            if lock is None:
                lock = self._locks[container_id] = threading.RLock()
            return lock

    def profile(self, container_id: str) -> BehaviorProfile:
        with self._registry_lock:
            prof = self._profiles.get(container_id)
            if prof is None:
                prof = self._profiles[container_id] = BehaviorProfile(container_id)
            return prof

    def record_event(self, event: RequestEvent) -> BehaviorProfile:
        prof = self.profile(event.container_id)
        with self.lock_for(event.container_id):
            prof.record(event, retention_ms=2 * self.policy.max_window())
        return prof

    def evaluate(self, container_id: str, now: int) -> Verdict:
        with self.lock_for(container_id):
            return evaluate(self.profile(container_id), self.policy, now)

    def is_throttled(self, container_id: str) -> bool:
        return container_id in self._throttled

    def admit_throttled(self, container_id: str, now: int) -> bool:
        """One request per throttle interval once a container is flagged."""
        with self.lock_for(container_id):
            if container_id not in self._throttled:
                return True
            last = self._last_admitted.get(container_id)
            if last is not None and now - last < self.throttle_interval_ms:
                return False
            return True

    def note_admission(self, container_id: str, now: int) -> None:
        with self.lock_for(container_id):
            self._last_admitted[container_id] = now

    def apply_verdict(self, registry: IdentityRegistry, container_id: str,
                      verdict: Verdict, audit_log=None) -> None:
        """Bans flip the identity state and leave an audit record; throttles
        flag the container for reduced admission; Ok is a no-op."""
        ident = registry.require(container_id)
        if verdict.kind is VerdictKind.OK:
            return
        if verdict.kind is VerdictKind.THROTTLE:
            self._throttled.add(container_id)
            return
        if ident.state is not IdentityState.BANNED:
            registry.ban(container_id)
            if audit_log is not None:
                audit_log.append_entry({
                    "type": "admin",
                    "action": "ban",
                    "container_id": container_id,
                    "reason": verdict.ban_reason.value,
                })

    def unban(self, registry: IdentityRegistry, container_id: str) -> None:
        registry.unban(container_id)
        with self.lock_for(container_id):
            self._throttled.discard(container_id)

    def snapshot(self, container_id: str) -> dict:
        """Counter dump for `sentinel show` and behavior reports."""
        with self.lock_for(container_id):
            prof = self.profile(container_id)
            return {
                "container_id": container_id,
                "cumulative": {str(code): n for code, n in sorted(prof.cumulative.items())},
                "recent_events": len(prof.events),
                "throttled": container_id in self._throttled,
            }
