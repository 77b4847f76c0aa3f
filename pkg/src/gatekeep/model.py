"""Shared domain types: identities, routes, request events and the clock.

Time is integer milliseconds since the Unix epoch everywhere; window
arithmetic stays exact and portable.
"""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Optional, Protocol

from .errors import DuplicateId, EmptyId, UnknownIdentity

# Status vocabulary used by every gateway decision.
OK = 200
MALFORMED = 400
UNAUTHORIZED = 401
BANNED = 403
THROTTLED = 429
UPSTREAM_FAILURE = 502

STATUS_CODES = frozenset({OK, MALFORMED, UNAUTHORIZED, BANNED, THROTTLED, UPSTREAM_FAILURE})


class IdentityState(str, Enum):
    REGISTERED = "Registered"
    BANNED = "Banned"
    REMOVED = "Removed"


@dataclass(frozen=True)
class ContainerIdentity:
    """A registered third-party app."""

    container_id: str
    display_name: str
    pinned_fingerprint: Optional[bytes] = None
    state: IdentityState = IdentityState.REGISTERED

    def to_json(self) -> dict:
        return {
            "container_id": self.container_id,
            "display_name": self.display_name,
            "pinned_fingerprint": self.pinned_fingerprint.hex() if self.pinned_fingerprint else None,
            "state": self.state.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ContainerIdentity":
        fp = obj.get("pinned_fingerprint")
        return cls(
            container_id=obj["container_id"],
            display_name=obj.get("display_name", ""),
            pinned_fingerprint=bytes.fromhex(fp) if fp else None,
            state=IdentityState(obj.get("state", "Registered")),
        )


@dataclass(frozen=True)
class ServiceRoute:
    service_name: str
    upstream_address: str  # host:port
    required_scope: str

    def __post_init__(self) -> None:
        host, sep, port = self.upstream_address.rpartition(":")
        if not sep or not host or not port.isdigit() or not 1 <= int(port) <= 65535:
            raise ValueError(f"invalid upstream_address: {self.upstream_address!r}")


@dataclass(frozen=True)
class RequestEvent:
    """One gateway decision: who asked for which service, when, and the outcome."""

    timestamp: int
    container_id: str
    service_name: str
    status_code: int
    detail: str = ""

    def __post_init__(self) -> None:
        if self.status_code not in STATUS_CODES:
            raise ValueError(f"status_code {self.status_code} outside the platform vocabulary")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")

    def to_json(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "container_id": self.container_id,
            "service_name": self.service_name,
            "status_code": self.status_code,
            "detail": self.detail,
        }


class Clock(Protocol):
    def now(self) -> int:
        """Milliseconds since the Unix epoch, nondecreasing within one run."""


class SystemClock:
    """Wall clock, clamped so repeated reads never go backwards."""

    def __init__(self) -> None:
        self._last = 0
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            t = time.time_ns() // 1_000_000
            if t < self._last:
                t = self._last
            self._last = t
            return t


class ManualClock:
    """Injectable clock for tests and sandbox runs."""

    def __init__(self, start: int = 0) -> None:
        self._now = start

    def now(self) -> int:
        return self._now

    def set(self, t: int) -> None:
        if t < self._now:
            raise ValueError("manual clock may not move backwards")
        self._now = t

    def advance(self, delta_ms: int) -> None:
        self.set(self._now + delta_ms)


class IdentityRegistry:
    """Single shared map of container identities, guarded for exclusive mutation.

    Optionally persisted as a JSON array at `path` (rewritten atomically on
    every mutation).
    """

    def __init__(self, path: Optional[str] = None) -> None:
        self._path = path
        self._lock = threading.RLock()
        self._entries: dict[str, ContainerIdentity] = {}
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for obj in json.load(fh):
                    ident = ContainerIdentity.from_json(obj)
                    self._entries[ident.container_id] = ident

    def register(self, raw: dict) -> ContainerIdentity:
        """Validate an identity descriptor and add it to the registry."""
        container_id = (raw.get("id") or raw.get("container_id") or "").strip()
        if not container_id:
            raise EmptyId("container id must be nonempty")
        display_name = raw.get("name") or raw.get("display_name") or container_id
        with self._lock:
            if container_id in self._entries:
                raise DuplicateId(container_id)
            ident = ContainerIdentity(container_id=container_id, display_name=display_name)
            self._entries[container_id] = ident
            self._persist()
            return ident

    def get(self, container_id: str) -> Optional[ContainerIdentity]:
        with self._lock:
            return self._entries.get(container_id)

    def require(self, container_id: str) -> ContainerIdentity:
        ident = self.get(container_id)
        if ident is None:
            raise UnknownIdentity(container_id)
        return ident

    def _update(self, container_id: str, **changes) -> ContainerIdentity:
        with self._lock:
            ident = self.require(container_id)
            ident = replace(ident, **changes)
            self._entries[container_id] = ident
            self._persist()
            return ident

    def ban(self, container_id: str) -> ContainerIdentity:
        return self._update(container_id, state=IdentityState.BANNED)

    def unban(self, container_id: str) -> ContainerIdentity:
        return self._update(container_id, state=IdentityState.REGISTERED)

    def remove(self, container_id: str) -> ContainerIdentity:
        return self._update(container_id, state=IdentityState.REMOVED)

    def set_fingerprint(self, container_id: str, fingerprint: Optional[bytes]) -> ContainerIdentity:
        return self._update(container_id, pinned_fingerprint=fingerprint)

    def __len__(self) -> int:
        with self._lock:
            return sum(1 for i in self._entries.values() if i.state is not IdentityState.REMOVED)

    def __iter__(self) -> Iterator[ContainerIdentity]:
        with self._lock:
            return iter(list(self._entries.values()))

    def _persist(self) -> None:
        if not self._path:
            return
        atomic_write_json(self._path, [i.to_json() for i in self._entries.values()])


def atomic_write_json(path: str, obj) -> None:
    """Write-to-temp-then-rename so a failed write never corrupts state files."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
    os.replace(tmp, path)


def atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
