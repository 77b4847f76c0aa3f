"""Mutual authentication material: an internal flat CA, certificate
fingerprints and the pin store.

A pin is the SHA-256 of the full DER certificate, so even a validly signed
replacement certificate for the same subject is rejected once a pin exists.
"""
from __future__ import annotations

import datetime
import hashlib
import itertools
import json
import os
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from cryptography.x509.oid import NameOID

from .errors import UnknownIdentity
from .model import IdentityRegistry, atomic_write_json

# Desk-scale certificates carry no meaningful expiry window.
_NOT_BEFORE = datetime.datetime(2000, 1, 1, tzinfo=datetime.timezone.utc)
_NOT_AFTER = datetime.datetime(2100, 1, 1, tzinfo=datetime.timezone.utc)


@dataclass(frozen=True)
class Certificate:
    """Thin view over an issued X.509 certificate."""

    subject: str
    issuer: str
    serial: int
    public_key_material: bytes
    der_bytes: bytes

    @classmethod
    def from_der(cls, der_bytes: bytes) -> "Certificate":
        cert = x509.load_der_x509_certificate(der_bytes)
        return cls(
            subject=_common_name(cert.subject),
            issuer=_common_name(cert.issuer),
            serial=cert.serial_number,
            public_key_material=cert.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw),
            der_bytes=der_bytes,
        )


def _common_name(name: x509.Name) -> str:
    attrs = name.get_attributes_for_oid(NameOID.COMMON_NAME)
    return attrs[0].value if attrs else ""


def fingerprint(cert: Certificate) -> bytes:
    """Deterministic 32-byte digest of the encoded certificate."""
    return hashlib.sha256(cert.der_bytes).digest()


def _build_cert(subject: str, issuer: str, serial: int,
                subject_key: Ed25519PrivateKey, signing_key: Ed25519PrivateKey) -> bytes:
    builder = (
        x509.CertificateBuilder()
        .subject_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, subject)]))
        .issuer_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, issuer)]))
        .serial_number(serial)
        .not_valid_before(_NOT_BEFORE)
        .not_valid_after(_NOT_AFTER)
        .public_key(subject_key.public_key())
    )
    return builder.sign(signing_key, algorithm=None).public_bytes(Encoding.DER)


class InternalCA:
    """Flat internal PKI: the root signs leaf certificates directly."""

    def __init__(self, name: str = "gatekeep-root") -> None:
        self.name = name
        self._key = Ed25519PrivateKey.generate()
        self._serials = itertools.count(1)
        self._lock = threading.Lock()

    @property
    def public_key(self) -> Ed25519PublicKey:
        return self._key.public_key()

    def issue(self, subject: str) -> Certificate:
        with self._lock:
            serial = next(self._serials)
        leaf_key = Ed25519PrivateKey.generate()
        der = _build_cert(subject, self.name, serial, leaf_key, self._key)
        return Certificate.from_der(der)


def issue_certificate(ca: InternalCA, subject: str, registry: IdentityRegistry) -> Certificate:
    if registry.get(subject) is None:
        raise UnknownIdentity(subject)
    return ca.issue(subject)


def make_self_signed(subject: str) -> Certificate:
    """Attacker-style certificate: not signed by the internal root."""
    key = Ed25519PrivateKey.generate()
    der = _build_cert(subject, subject, 1, key, key)
    return Certificate.from_der(der)


class PinMode(str, Enum):
    PRELOADED = "Preloaded"
    TRUST_ON_FIRST_USE = "TrustOnFirstUse"


class RejectReason(str, Enum):
    BAD_CHAIN = "BadChain"
    PIN_MISMATCH = "PinMismatch"
    NO_PIN = "NoPin"


@dataclass(frozen=True)
class PeerVerdict:
    accepted: bool
    reason: Optional[RejectReason] = None


ACCEPT = PeerVerdict(True)


class PinStore:
    """Map container_id -> certificate fingerprint; at most one pin per id.

    Pins change only through the single TOFU first-accept path or an explicit
    administrative reset.
    """

    def __init__(self, mode: PinMode = PinMode.TRUST_ON_FIRST_USE,
                 path: Optional[str] = None) -> None:
        self.mode = mode
        self._path = path
        self._pins: dict[str, bytes] = {}
        self._lock = threading.RLock()
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                self._pins = {k: bytes.fromhex(v) for k, v in json.load(fh).items()}

    def get(self, container_id: str) -> Optional[bytes]:
        with self._lock:
            return self._pins.get(container_id)

    def pin(self, container_id: str, digest: bytes) -> None:
        with self._lock:
            self._pins[container_id] = digest
            self._persist()

    def reset(self, container_id: str) -> None:
        with self._lock:
            self._pins.pop(container_id, None)
            self._persist()

    def entries(self) -> dict[str, bytes]:
        with self._lock:
            return dict(self._pins)

    def _persist(self) -> None:
        if not self._path:
            return
        atomic_write_json(self._path, {k: v.hex() for k, v in self._pins.items()})


def verify_peer(store: PinStore, claimed_id: str, presented: Certificate,
                ca: InternalCA) -> PeerVerdict:
    """Chain check first, then the pin decision.

    TOFU records the first validly-chained certificate; any later certificate
    with a different fingerprint is rejected even if the root signed it.
    """
    try:
        cert = x509.load_der_x509_certificate(presented.der_bytes)
        ca.public_key.verify(cert.signature, cert.tbs_certificate_bytes)
    except (InvalidSignature, ValueError):
        return PeerVerdict(False, RejectReason.BAD_CHAIN)
    if _common_name(cert.issuer) != ca.name or _common_name(cert.subject) != claimed_id:
        return PeerVerdict(False, RejectReason.BAD_CHAIN)

    digest = fingerprint(presented)
    with store._lock:
        pinned = store.get(claimed_id)
        if pinned is not None:
            if pinned == digest:
                return ACCEPT
            return PeerVerdict(False, RejectReason.PIN_MISMATCH)
        if store.mode is PinMode.TRUST_ON_FIRST_USE:
            store.pin(claimed_id, digest)
            return ACCEPT
        return PeerVerdict(False, RejectReason.NO_PIN)
