"""Tamper-evident audit log: each record's HMAC covers the previous record's
HMAC, so modification, reordering or deletion of any record breaks the chain.

Truncation of the tail is caught separately by a chain head (length + last
MAC) rewritten atomically on every append.
"""
from __future__ import annotations

import base64
import hashlib
import hmac
import json
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import IoError, ParseError
from .model import atomic_write_json

KEY_LEN = 32
GENESIS_MAC = b"\x00" * 32


def canonical_entry(obj: dict) -> bytes:
    """Sorted keys, compact separators, UTF-8: the MAC input must not depend
    on dict ordering or formatting."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _mac(key: bytes, previous_mac: bytes, entry_bytes: bytes) -> bytes:
    return hmac.new(key, previous_mac + entry_bytes, hashlib.sha256).digest()


@dataclass(frozen=True)
class ChainedLogRecord:
    index: int
    entry: bytes
    mac: bytes


@dataclass(frozen=True)
class ChainHead:
    length: int
    last_mac: bytes


class VerifyStatus(Enum):
    OK = "Ok"
    TAMPERED = "Tampered"
    TRUNCATED = "Truncated"


@dataclass(frozen=True)
class VerifyResult:
    status: VerifyStatus
    first_bad_index: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.status is VerifyStatus.OK


class AuditChain:
    """Append-only MAC chain, optionally persisted to a JSONL file plus a
    separate head file. Appends are globally serialized."""

    def __init__(self, key: bytes, log_path: Optional[str] = None,
                 head_path: Optional[str] = None) -> None:
        if len(key) != KEY_LEN:
            raise ValueError(f"key must be {KEY_LEN} bytes")
        self._key = key
        self._log_path = log_path
        self._head_path = head_path
        self._lock = threading.Lock()
        self.records: list[ChainedLogRecord] = []

    @property
    def head(self) -> ChainHead:
        with self._lock:
            last = self.records[-1].mac if self.records else GENESIS_MAC
            return ChainHead(length=len(self.records), last_mac=last)

    def append(self, entry_bytes: bytes) -> ChainedLogRecord:
        with self._lock:
            previous = self.records[-1].mac if self.records else GENESIS_MAC
            record = ChainedLogRecord(
                index=len(self.records),
                entry=entry_bytes,
                mac=_mac(self._key, previous, entry_bytes),
            )
            self.records.append(record)
            if self._log_path:
                with open(self._log_path, "a", encoding="utf-8") as fh:
                    fh.write(_record_line(record) + "\n")
            if self._head_path:
                atomic_write_json(self._head_path, {
                    "length": len(self.records),
                    "last_mac": record.mac.hex(),
                })
            return record

    def append_entry(self, obj: dict) -> ChainedLogRecord:
        return self.append(canonical_entry(obj))

    def __len__(self) -> int:
        with self._lock:
            return len(self.records)

    def flush_head(self) -> None:
        if self._head_path:
            head = self.head
            atomic_write_json(self._head_path, {
                "length": head.length,
                "last_mac": head.last_mac.hex(),
            })


def verify_chain(records: list[ChainedLogRecord], head: Optional[ChainHead],
                 key: bytes) -> VerifyResult:
    """Recompute every MAC in order; report the first bad index, then check
    the head for pure tail truncation."""
    previous = GENESIS_MAC
    for i, record in enumerate(records):
        if record.index != i:
            return VerifyResult(VerifyStatus.TAMPERED, first_bad_index=i)
        expected = _mac(key, previous, record.entry)
        if not hmac.compare_digest(expected, record.mac):
            return VerifyResult(VerifyStatus.TAMPERED, first_bad_index=i)
        previous = record.mac
    if head is not None:
        last = records[-1].mac if records else GENESIS_MAC
        if head.length > len(records) or head.last_mac != last:
            return VerifyResult(VerifyStatus.TRUNCATED)
    return VerifyResult(VerifyStatus.OK)


def _record_line(record: ChainedLogRecord) -> str:
    return json.dumps({
        "index": record.index,
        "entry_b64": base64.b64encode(record.entry).decode("ascii"),
        "mac_hex": record.mac.hex(),
    })


def export(records: list[ChainedLogRecord], path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(_record_line(record) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load(path: str) -> list[ChainedLogRecord]:
    """Rebuild a chain verbatim; verification is a separate, explicit step."""
    records: list[ChainedLogRecord] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    for lineno, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            index = obj["index"]
            entry = base64.b64decode(obj["entry_b64"], validate=True)
            mac = bytes.fromhex(obj["mac_hex"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"line {lineno + 1}: {exc}") from exc
        if index != len(records):
            raise ParseError(f"line {lineno + 1}: non-contiguous index {index}")
        if len(mac) != 32:
            raise ParseError(f"line {lineno + 1}: mac is not 32 bytes")
        records.append(ChainedLogRecord(index=index, entry=entry, mac=mac))
    return records


def load_head(path: str) -> ChainHead:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return ChainHead(length=obj["length"], last_mac=bytes.fromhex(obj["last_mac"]))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(str(exc)) from exc
