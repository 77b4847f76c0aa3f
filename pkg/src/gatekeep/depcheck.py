"""Dependency manifest scanning: parse the declared library tree, match every
transitive node against a version-range vulnerability database, and turn
findings into an update deadline.

Versions are up to three numeric components compared numerically with missing
components treated as zero (so 1.0 < 1.0.1 < 1.3 < 12.0). Ranges are
half-open [min, max), which expresses "fixed in X" naturally.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import httpx

from .errors import BadVersion, ParseError
from .model import atomic_write_json

_VERSION_RE = re.compile(r"\d+(\.\d+){0,2}")

ROOT_NAME = "source code"


def parse_version(text: str) -> tuple[int, int, int]:
    if not isinstance(text, str) or not _VERSION_RE.fullmatch(text):
        raise BadVersion(repr(text))
    parts = [int(p) for p in text.split(".")]
    while len(parts) < 3:
        parts.append(0)
    return tuple(parts)  # type: ignore[return-value]


class Severity(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"
    CRITICAL = "Critical"

    @property
    def rank(self) -> int:
        return {"Low": 0, "Medium": 1, "High": 2, "Critical": 3}[self.value]


# Operator-configurable grace periods per severity, in ms.
DEFAULT_GRACE_MS = {
    Severity.CRITICAL: 7 * 86_400_000,
    Severity.HIGH: 14 * 86_400_000,
    Severity.MEDIUM: 30 * 86_400_000,
    Severity.LOW: 90 * 86_400_000,
}


@dataclass
class DependencyNode:
    name: str
    version: Optional[str]  # None only for the root
    children: list["DependencyNode"] = field(default_factory=list)


@dataclass(frozen=True)
class Advisory:
    advisory_id: str
    library_name: str
    min_inclusive: str
    max_exclusive: str
    severity: Severity

    def contains(self, version: str) -> bool:
        v = parse_version(version)
        return parse_version(self.min_inclusive) <= v < parse_version(self.max_exclusive)


@dataclass(frozen=True)
class VulnerabilityDb:
    records: tuple[Advisory, ...]


@dataclass(frozen=True)
class Finding:
    advisory_id: str
    library_name: str
    version: str
    paths: tuple[tuple[str, ...], ...]  # root-to-node name chains
    severity: Severity

    def to_json(self) -> dict:
        return {
            "advisory_id": self.advisory_id,
            "library_name": self.library_name,
            "version": self.version,
            "paths": [list(p) for p in self.paths],
            "severity": self.severity.value,
        }


@dataclass(frozen=True)
class VulnerabilityReport:
    findings: tuple[Finding, ...]
    generated_at: int = 0

    def to_json(self) -> dict:
        return {
            "findings": [f.to_json() for f in self.findings],
            "generated_at": self.generated_at,
        }


def _parse_node(obj, where: str, is_root: bool) -> DependencyNode:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    name = obj.get("name")
    if not isinstance(name, str) or not name:
        raise ParseError(f"{where}: missing or empty name")
    version = obj.get("version")
    if not is_root or version is not None:
        parse_version(version)  # raises BadVersion with the offending text
    deps = obj.get("dependencies", [])
    if not isinstance(deps, list):
        raise ParseError(f"{where}.dependencies: expected a list")
    children = [_parse_node(d, f"{where}.dependencies[{i}]", False) for i, d in enumerate(deps)]
    return DependencyNode(name=name, version=version, children=children)


def parse_manifest(text: str) -> DependencyNode:
    """Manifest format: {"name", "version", "dependencies": [...recursive...]}
    with the application itself as root."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return _parse_node(obj, "$", is_root=True)


@dataclass(frozen=True)
class FlatDependency:
    library_name: str
    version: str
    path: tuple[str, ...]  # names from root to this node, inclusive


def flatten(tree: DependencyNode) -> list[FlatDependency]:
    """Depth-first preorder over every non-root node."""
    out: list[FlatDependency] = []

    def walk(node: DependencyNode, prefix: tuple[str, ...]) -> None:
        path = prefix + (node.name,)
        if prefix:  # skip the root itself
            out.append(FlatDependency(node.name, node.version, path))
        for child in node.children:
            walk(child, path)

    walk(tree, ())
    return out


def scan(tree: DependencyNode, db: VulnerabilityDb, generated_at: int = 0) -> VulnerabilityReport:
    grouped: dict[tuple[str, str, str], list[tuple[str, ...]]] = {}
    severity: dict[str, Severity] = {}
    for dep in flatten(tree):
        for adv in db.records:
            if adv.library_name == dep.library_name and adv.contains(dep.version):
                grouped.setdefault((adv.advisory_id, dep.library_name, dep.version), []).append(dep.path)
                severity[adv.advisory_id] = adv.severity
    findings = [
        Finding(advisory_id=aid, library_name=lib, version=ver,
                paths=tuple(paths), severity=severity[aid])
        for (aid, lib, ver), paths in grouped.items()
    ]
    findings.sort(key=lambda f: (-f.severity.rank, f.library_name, parse_version(f.version)))
    return VulnerabilityReport(findings=tuple(findings), generated_at=generated_at)


class Compliance(str, Enum):
    COMPLIANT = "Compliant"
    UPDATE_REQUIRED = "UpdateRequired"
    EXCLUDED = "Excluded"


@dataclass(frozen=True)
class DeadlineDecision:
    status: Compliance
    deadline: Optional[int] = None


def enforce_deadline(report: VulnerabilityReport, grace_ms: dict[Severity, int] | None,
                     first_seen: int, now: int) -> DeadlineDecision:
    """The tightest grace period over all findings sets the deadline; past it
    the app is excluded from the platform."""
    if now < first_seen:
        raise ValueError("now must be >= first_seen")
    if not report.findings:
        return DeadlineDecision(Compliance.COMPLIANT)
    grace = grace_ms or DEFAULT_GRACE_MS
    deadline = first_seen + min(grace[f.severity] for f in report.findings)
    if now < deadline:
        return DeadlineDecision(Compliance.UPDATE_REQUIRED, deadline)
    return DeadlineDecision(Compliance.EXCLUDED, deadline)


def db_from_json(obj) -> VulnerabilityDb:
    if not isinstance(obj, dict) or not isinstance(obj.get("records"), list):
        raise ParseError("database document must be {\"records\": [...]}")
    records = []
    seen: set[str] = set()
    for i, rec in enumerate(obj["records"]):
        where = f"records[{i}]"
        try:
            adv = Advisory(
                advisory_id=rec["advisory_id"],
                library_name=rec["library_name"],
                min_inclusive=rec["affected_range"]["min_inclusive"],
                max_exclusive=rec["affected_range"]["max_exclusive"],
                severity=Severity(rec["severity"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: {exc}") from exc
        if parse_version(adv.min_inclusive) >= parse_version(adv.max_exclusive):
            raise ParseError(f"{where}: empty version range")
        if adv.advisory_id in seen:
            raise ParseError(f"{where}: duplicate advisory id {adv.advisory_id}")
        seen.add(adv.advisory_id)
        records.append(adv)
    return VulnerabilityDb(records=tuple(records))


def load_db(text: str) -> VulnerabilityDb:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
    return db_from_json(obj)


def update_db(url: str, cache_path: str, client: httpx.Client | None = None) -> VulnerabilityDb:
    """Fetch a database file (same JSON format as on disk), validate it and
    atomically replace the local cache."""
    own = client is None
    client = client or httpx.Client()
    try:
        resp = client.get(url)
        resp.raise_for_status()
        db = load_db(resp.text)
    finally:
        if own:
            client.close()
    atomic_write_json(cache_path, json.loads(resp.text))
    return db
