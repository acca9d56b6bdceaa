"""Registry and advisory snapshots: loading, validation, hashing, lockfiles."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import sys
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

import jsonschema

from .semver import Requirement, SemverError, Version, parse_requirement, parse_version

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SEVERITIES = ("LOW", "MODERATE", "HIGH", "CRITICAL")
_SEVERITY_ALIASES = {"MEDIUM": "MODERATE"}
_CVE_RE = re.compile(r"CVE-\d{4}-\d+\Z")

# snake_case spellings accepted on input; output always uses the camelCase keys
_ADVISORY_ALIASES = {
    "database_id": "databaseId",
    "published_at": "publishedAt",
    "updated_at": "updatedAt",
    "vulnerable_version_range": "vulnerableVersionRange",
    "first_patched_version": "firstPatchedVersion",
    "packageName": "package_name",
    "cweIds": "cwe_ids",
}


class IngestError(Exception):
    pass


class LockfileError(IngestError):
    pass


@dataclass(frozen=True)
class ValidationFailure:
    line: int
    message: str

    def to_dict(self) -> dict:
        return {"line": self.line, "message": self.message}


@dataclass
class ValidationReport:
    source: str = ""
    accepted: int = 0
    failures: List[ValidationFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "accepted": self.accepted,
            "rejected": len(self.failures),
            "failures": [f.to_dict() for f in self.failures],
        }


class ValidationError(IngestError):
    """Raised in strict mode when any record fails validation."""

    def __init__(self, report: ValidationReport):
        self.report = report
        lines = "; ".join(f"line {f.line}: {f.message}" for f in report.failures[:5])
        more = len(report.failures) - 5
        if more > 0:
            lines += f"; ... {more} more"
        super().__init__(f"{report.source}: {len(report.failures)} invalid record(s): {lines}")


class DependencyKind(str, Enum):
    NORMAL = "normal"
    DEV = "dev"
    BUILD = "build"


def _parse_ts(value: Optional[str]) -> Optional[datetime]:
    if value is None:
        return None
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    return datetime.fromisoformat(text)


def _ts_text(value: Optional[datetime]) -> Optional[str]:
    return None if value is None else value.isoformat()


# requirement strings repeat heavily across a registry; share the parsed objects
_cached_requirement = lru_cache(maxsize=1 << 16)(parse_requirement)


@dataclass(frozen=True)
class DependencyDecl:
    target_name: str
    requirement: Requirement
    kind: DependencyKind = DependencyKind.NORMAL
    optional: bool = False
    default_features: bool = True
    features: Tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping) -> "DependencyDecl":
        return cls(
            target_name=data["name"],
            requirement=_cached_requirement(data["req"]),
            kind=DependencyKind(data.get("kind") or "normal"),
            optional=bool(data.get("optional", False)),
            default_features=bool(data.get("default_features", True)),
            features=tuple(data.get("features") or ()),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.target_name,
            "req": str(self.requirement),
            "kind": self.kind.value,
            "optional": self.optional,
            "default_features": self.default_features,
            "features": list(self.features),
        }


@dataclass(frozen=True)
class VersionRecord:
    num: Version
    yanked: bool = False
    features: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    dependencies: Tuple[DependencyDecl, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping) -> "VersionRecord":
        return cls(
            num=parse_version(data["num"]),
            yanked=bool(data.get("yanked", False)),
            features={k: tuple(v) for k, v in (data.get("features") or {}).items()},
            dependencies=tuple(DependencyDecl.from_dict(d) for d in data.get("dependencies") or ()),
        )

    def to_dict(self) -> dict:
        return {
            "num": str(self.num),
            "yanked": self.yanked,
            "features": {k: list(v) for k, v in self.features.items()},
            "dependencies": [d.to_dict() for d in self.dependencies],
        }

    def feature_problems(self) -> List[str]:
        """References in the feature table that name neither a feature nor a dependency."""
        deps = {d.target_name for d in self.dependencies}
        known = set(self.features) | deps
        problems = []
        for feat, enables in self.features.items():
            for item in enables:
                if item.startswith("dep:"):
                    ok = item[4:] in deps
                elif "/" in item:
                    ok = item.split("/", 1)[0].rstrip("?") in deps
                else:
                    ok = item in known
                if not ok:
                    problems.append(f"feature {feat!r} of {self.num} references unknown {item!r}")
        return problems


@dataclass(frozen=True)
class LibraryRecord:
    id: str
    name: str
    newest_version: str
    versions: Tuple[VersionRecord, ...]
    created_at: Optional[datetime] = None
    updated_at: Optional[datetime] = None
    description: str = ""
    downloads: int = 0
    recent_downloads: int = 0
    max_version: Optional[str] = None
    max_stable_version: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "LibraryRecord":
        return cls(
            id=str(data["id"]),
            name=data["name"],
            newest_version=data["newest_version"],
            versions=tuple(VersionRecord.from_dict(v) for v in data["versions"]),
            created_at=_parse_ts(data.get("created_at")),
            updated_at=_parse_ts(data.get("updated_at")),
            description=data.get("description") or "",
            downloads=data.get("downloads") or 0,
            recent_downloads=data.get("recent_downloads") or 0,
            max_version=data.get("max_version"),
            max_stable_version=data.get("max_stable_version"),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "created_at": _ts_text(self.created_at),
            "updated_at": _ts_text(self.updated_at),
            "description": self.description,
            "downloads": self.downloads,
            "recent_downloads": self.recent_downloads,
            "max_version": self.max_version,
            "max_stable_version": self.max_stable_version,
            "newest_version": self.newest_version,
            "versions": [v.to_dict() for v in self.versions],
        }

    @property
    def newest(self) -> Version:
        return parse_version(self.newest_version)

    def version(self, num: Version) -> Optional[VersionRecord]:
        for v in self.versions:
            if v.num == num:
                return v
        return None

    def problems(self) -> List[str]:
        out = []
        seen = set()
        for v in self.versions:
            if v.num in seen:
                out.append(f"duplicate version {v.num}")
            seen.add(v.num)
            out.extend(v.feature_problems())
        try:
            if self.newest not in seen:
                out.append(f"newest_version {self.newest_version} is not among versions")
        except SemverError as exc:
            out.append(f"newest_version: {exc}")
        return out


@dataclass(frozen=True)
class Advisory:
    value: str
    severity: str
    vulnerable_version_range: str
    package_name: str
    requirement: Requirement = field(compare=False, repr=False)
    database_id: Optional[int] = None
    cvss: Optional[float] = None
    published_at: Optional[datetime] = None
    updated_at: Optional[datetime] = None
    summary: str = ""
    first_patched_version: Optional[str] = None
    ecosystem: str = "RUST"
    cwe_ids: Optional[Tuple[str, ...]] = None

    @property
    def key(self) -> str:
        """Identity within a feed: one CVE may name several packages."""
        return f"{self.value}/{self.package_name}"

    @classmethod
    def from_dict(cls, data: Mapping) -> "Advisory":
        data = normalize_advisory_dict(data)
        cwe = data.get("cwe_ids")
        return cls(
            value=data["value"],
            severity=data["severity"],
            vulnerable_version_range=data["vulnerableVersionRange"],
            package_name=data["package_name"],
            requirement=parse_requirement(data["vulnerableVersionRange"]),
            database_id=data.get("databaseId"),
            cvss=None if data.get("cvss") is None else float(data["cvss"]),
            published_at=_parse_ts(data.get("publishedAt")),
            updated_at=_parse_ts(data.get("updatedAt")),
            summary=data.get("summary") or "",
            first_patched_version=data.get("firstPatchedVersion"),
            ecosystem=data.get("ecosystem") or "RUST",
            cwe_ids=None if cwe is None else tuple(cwe),
        )

    def to_dict(self) -> dict:
        return {
            "databaseId": self.database_id,
            "value": self.value,
            "severity": self.severity,
            "cvss": self.cvss,
            "publishedAt": _ts_text(self.published_at),
            "updatedAt": _ts_text(self.updated_at),
            "summary": self.summary,
            "vulnerableVersionRange": self.vulnerable_version_range,
            "firstPatchedVersion": self.first_patched_version,
            "ecosystem": self.ecosystem,
            "package_name": self.package_name,
            "cwe_ids": None if self.cwe_ids is None else list(self.cwe_ids),
        }


def normalize_advisory_dict(data: Mapping) -> dict:
    out = {}
    for key, value in data.items():
        out[_ADVISORY_ALIASES.get(key, key)] = value
    sev = out.get("severity")
    if isinstance(sev, str):
        sev = sev.strip().upper()
        out["severity"] = _SEVERITY_ALIASES.get(sev, sev)
    patched = out.get("firstPatchedVersion")
    if isinstance(patched, dict):
        # GitHub's GraphQL shape: {"identifier": "1.2.3"}
        out["firstPatchedVersion"] = patched.get("identifier")
    return out


@lru_cache(maxsize=None)
def _validator(name: str):
    text = resources.files("vulngraph.schemas").joinpath(name).read_text(encoding="utf-8")
    return jsonschema.Draft202012Validator(json.loads(text))


def _schema_errors(name: str, data) -> List[str]:
    errors = sorted(_validator(name).iter_errors(data), key=lambda e: list(e.absolute_path))
    return [f"{'/'.join(str(p) for p in e.absolute_path) or '<record>'}: {e.message}" for e in errors]


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(data) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


# --- registry -------------------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    """Validated registry snapshot, keyed by library name in feed order."""

    libraries: Mapping[str, LibraryRecord]
    report: ValidationReport = field(default_factory=ValidationReport, compare=False)

    def __len__(self) -> int:
        return len(self.libraries)

    def __iter__(self) -> Iterator[LibraryRecord]:
        return iter(self.libraries.values())

    def __contains__(self, name: str) -> bool:
        return name in self.libraries

    def __getitem__(self, name: str) -> LibraryRecord:
        return self.libraries[name]

    @classmethod
    def from_records(cls, records: Iterable[LibraryRecord]) -> "Snapshot":
        libs: Dict[str, LibraryRecord] = {}
        for rec in records:
            if rec.name in libs:
                raise IngestError(f"duplicate library name {rec.name!r}")
            libs[rec.name] = rec
        return cls(libs)

    def hashes(self) -> Dict[str, str]:
        return {name: digest(rec.to_dict()) for name, rec in self.libraries.items()}

    def to_ndjson(self) -> str:
        """Canonical lines sorted by library name."""
        return "".join(canonical_json(self.libraries[n].to_dict()) + "\n" for n in sorted(self.libraries))

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")


def _iter_ndjson(text: str) -> Iterator[Tuple[int, str]]:
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            yield lineno, line


def _is_str(x, nonempty=True) -> bool:
    return type(x) is str and (bool(x) or not nonempty)


def _opt(d: dict, key: str, ok) -> bool:
    return key not in d or ok(d[key])


def _fast_library_ok(data) -> bool:
    """Hand-rolled subset of registry.schema.json.

    True only when the schema would accept the record too; anything
    unusual returns False and goes through jsonschema, which also
    produces the error messages. About 10x faster on clean records.
    """
    if type(data) is not dict:
        return False
    if not (_is_str(data.get("name")) and _is_str(data.get("newest_version"))):
        return False
    if type(data.get("id")) not in (str, int):
        return False
    for key in ("created_at", "updated_at", "description", "max_version", "max_stable_version"):
        if not _opt(data, key, lambda v: v is None or type(v) is str):
            return False
    if not _opt(data, "downloads", lambda v: type(v) is int and v >= 0):
        return False
    if not _opt(data, "recent_downloads", lambda v: v is None or (type(v) is int and v >= 0)):
        return False
    versions = data.get("versions")
    if type(versions) is not list or not versions:
        return False
    for v in versions:
        if type(v) is not dict or not _is_str(v.get("num")):
            return False
        if "yanked" in v and type(v["yanked"]) is not bool:
            return False
        feats = v.get("features", {})
        if type(feats) is not dict:
            return False
        for items in feats.values():
            if type(items) is not list or any(type(s) is not str for s in items):
                return False
        deps = v.get("dependencies", [])
        if type(deps) is not list:
            return False
        for d in deps:
            if type(d) is not dict or not (_is_str(d.get("name")) and _is_str(d.get("req"))):
                return False
            if d.get("kind") not in ("normal", "dev", "build", None):
                return False
            if type(d.get("optional", False)) is not bool or type(d.get("default_features", True)) is not bool:
                return False
            fs = d.get("features", [])
            if type(fs) is not list or any(type(s) is not str for s in fs):
                return False
    return True


def _library_from_line(line: str) -> LibraryRecord:
    data = json.loads(line)
    if not _fast_library_ok(data):
        errors = _schema_errors("registry.schema.json", data)
        if errors:
            raise ValueError("; ".join(errors))
    rec = LibraryRecord.from_dict(data)
    problems = rec.problems()
    if problems:
        raise ValueError("; ".join(problems))
    return rec


def parse_registry(text: str, source: str = "<registry>", strict: bool = False) -> Snapshot:
    report = ValidationReport(source)
    libs: Dict[str, LibraryRecord] = {}
    first_line: Dict[str, int] = {}
    for lineno, line in _iter_ndjson(text):
        try:
            rec = _library_from_line(line)
        except (ValueError, SemverError, KeyError, TypeError) as exc:
            report.failures.append(ValidationFailure(lineno, str(exc)))
            continue
        if rec.name in libs:
            report.failures.append(
                ValidationFailure(
                    lineno,
                    f"duplicate library name {rec.name!r} (first seen on line {first_line[rec.name]})",
                )
            )
            continue
        libs[rec.name] = rec
        first_line[rec.name] = lineno
    report.accepted = len(libs)
    if report.failures:
        if strict:
            raise ValidationError(report)
        log.warning("%s: dropped %d invalid record(s)", source, len(report.failures))
    return Snapshot(libs, report)


def load_registry(path: Union[str, Path], strict: bool = False) -> Snapshot:
    """Load a registry NDJSON file (one library record per line)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_registry(text, str(path), strict)


# --- advisories -----------------------------------------------------------


def _advisory_from_line(line: str) -> Advisory:
    data = normalize_advisory_dict(json.loads(line))
    errors = _schema_errors("advisory.schema.json", data)
    if errors:
        raise ValueError("; ".join(errors))
    return Advisory.from_dict(data)


def parse_advisories(text: str, source: str = "<advisories>", strict: bool = False) -> List[Advisory]:
    report = ValidationReport(source)
    out: List[Advisory] = []
    seen: Dict[str, int] = {}
    for lineno, line in _iter_ndjson(text):
        try:
            adv = _advisory_from_line(line)
        except (ValueError, SemverError, KeyError, TypeError) as exc:
            report.failures.append(ValidationFailure(lineno, str(exc)))
            continue
        if adv.key in seen:
            report.failures.append(
                ValidationFailure(lineno, f"duplicate advisory {adv.key} (first seen on line {seen[adv.key]})")
            )
            continue
        seen[adv.key] = lineno
        out.append(adv)
    report.accepted = len(out)
    if report.failures:
        if strict:
            raise ValidationError(report)
        log.warning("%s: dropped %d invalid advisory record(s)", source, len(report.failures))
    return AdvisoryList(out, report)


class AdvisoryList(list):
    """A plain list of advisories that also carries its validation report."""

    def __init__(self, items: Iterable[Advisory] = (), report: Optional[ValidationReport] = None):
        super().__init__(items)
        self.report = report or ValidationReport()


def load_advisories(path: Union[str, Path], strict: bool = False) -> List[Advisory]:
    path = Path(path)
    return parse_advisories(path.read_text(encoding="utf-8"), str(path), strict)


def advisories_to_ndjson(advisories: Iterable[Advisory]) -> str:
    return "".join(canonical_json(a.to_dict()) + "\n" for a in advisories)


def advisory_hashes(advisories: Iterable[Advisory]) -> Dict[str, str]:
    return {a.key: digest(a.to_dict()) for a in advisories}


# --- incremental updates -------------------------------------------------


@dataclass
class Changeset:
    kind: str
    added: List[str] = field(default_factory=list)
    modified: List[str] = field(default_factory=list)
    removed: List[str] = field(default_factory=list)
    content_hash: str = ""
    hashes: Dict[str, str] = field(default_factory=dict)
    records: Dict[str, object] = field(default_factory=dict, repr=False)

    @property
    def empty(self) -> bool:
        return not (self.added or self.modified or self.removed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "content_hash": self.content_hash,
            "added": self.added,
            "modified": self.modified,
            "removed": self.removed,
        }


def _feed_kind(raw: bytes) -> str:
    for line in raw.decode("utf-8").splitlines():
        if line.strip():
            return "registry" if "versions" in json.loads(line) else "advisories"
    return "empty"


def incremental_update(old, new_raw: bytes, old_hashes: Optional[Mapping[str, str]] = None) -> Changeset:
    """Compare a freshly fetched feed against the existing hash table.

    ``old`` is a :class:`Snapshot` or a list of advisories (either may be
    ``None`` when nothing was ingested yet).  The feed is parsed strictly;
    any invalid record aborts the update with :class:`ValidationError` and
    leaves ``old`` untouched.  Apply the result with :func:`apply_changeset`.
    """
    kind = _feed_kind(new_raw)
    if kind == "empty":
        kind = "advisories" if isinstance(old, list) else "registry"
    text = new_raw.decode("utf-8")
    if kind == "registry":
        new = parse_registry(text, "<update>", strict=True)
        records = dict(new.libraries)
        if old_hashes is None:
            old_hashes = old.hashes() if old is not None else {}
    else:
        new_list = parse_advisories(text, "<update>", strict=True)
        records = {a.key: a for a in new_list}
        if old_hashes is None:
            old_hashes = advisory_hashes(old or ())

    new_hashes = {k: digest(r.to_dict()) for k, r in records.items()}
    added = sorted(k for k in new_hashes if k not in old_hashes)
    modified = sorted(k for k, h in new_hashes.items() if k in old_hashes and old_hashes[k] != h)
    removed = sorted(k for k in old_hashes if k not in new_hashes)
    changed = set(added) | set(modified)
    return Changeset(
        kind=kind,
        added=added,
        modified=modified,
        removed=removed,
        content_hash=hashlib.sha256(new_raw).hexdigest(),
        hashes=new_hashes,
        records={k: records[k] for k in records if k in changed},
    )


def apply_changeset(old, changeset: Changeset):
    """Return a new snapshot (or advisory list) with only changed records replaced."""
    if changeset.kind == "registry":
        libs = dict(old.libraries) if old is not None else {}
        for name in changeset.removed:
            libs.pop(name, None)
        for name, rec in changeset.records.items():
            libs[name] = rec
        return Snapshot(libs)
    current = {a.key: a for a in (old or ())}
    for key in changeset.removed:
        current.pop(key, None)
    current.update(changeset.records)
    return AdvisoryList(current.values())


# --- lockfiles -------------------------------------------------------------


def parse_lockfile_text(text: str) -> List[Tuple[str, Version]]:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise LockfileError(f"not a lockfile: {exc}") from exc
    out = []
    for index, stanza in enumerate(data.get("package", [])):
        for key in ("name", "version"):
            if not isinstance(stanza.get(key), str):
                raise LockfileError(f"[[package]] stanza {index}: missing {key}")
        try:
            out.append((stanza["name"], parse_version(stanza["version"])))
        except SemverError as exc:
            raise LockfileError(f"[[package]] stanza {index}: {exc}") from exc
    return out


def parse_lockfile(path: Union[str, Path]) -> List[Tuple[str, Version]]:
    """Installed ``(name, version)`` pairs in lockfile order; duplicates kept."""
    return parse_lockfile_text(Path(path).read_text(encoding="utf-8"))
