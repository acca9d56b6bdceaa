"""The dependency-vulnerability knowledge graph.

Three node kinds (library, library_version, cve) and four edge kinds:

* ``has``              library -> library_version of that library
* ``library_affects``  cve -> library
* ``version_affects``  cve -> library_version inside the advisory's range
* ``version_depends``  library_version -> library, carrying the declaration
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple, Union

from .ingest import Advisory, DependencyDecl, LibraryRecord, Snapshot, VersionRecord, canonical_json
from .semver import Version, matches

log = logging.getLogger(__name__)

VersionKey = Tuple[str, Version]

NODE_KINDS = ("library", "library_version", "cve")
EDGE_KINDS = ("has", "library_affects", "version_affects", "version_depends")


@dataclass(frozen=True, order=True)
class NodeId:
    kind: str
    key: str

    @classmethod
    def library(cls, name: str) -> "NodeId":
        return cls("library", name)

    @classmethod
    def version(cls, name: str, num: Version) -> "NodeId":
        return cls("library_version", f"{name}@{num}")

    @classmethod
    def cve(cls, value: str) -> "NodeId":
        return cls("cve", value)

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        kind, _, key = text.partition(":")
        if kind not in NODE_KINDS or not key:
            raise ValueError(f"bad node id {text!r}")
        return cls(kind, key)

    def __str__(self) -> str:
        return f"{self.kind}:{self.key}"


@dataclass
class BuildReport:
    unresolved_advisories: List[str] = field(default_factory=list)
    dangling_dependencies: int = 0
    dangling_targets: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "unresolved_advisories": self.unresolved_advisories,
            "dangling_dependencies": self.dangling_dependencies,
            "dangling_targets": self.dangling_targets,
        }


class KnowledgeGraph:
    """In-memory graph with forward and reverse adjacency.

    Populate through the ``add_*`` methods (``build_graph`` does this); treat
    the instance as read-only afterwards.
    """

    def __init__(self):
        self.libraries: Dict[str, LibraryRecord] = {}
        self.versions: Dict[str, Dict[Version, VersionRecord]] = {}
        self.cves: Dict[str, List[Advisory]] = {}
        self.depends: Dict[VersionKey, List[DependencyDecl]] = {}
        self.dependents: Dict[str, List[Tuple[VersionKey, DependencyDecl]]] = defaultdict(list)
        self.library_affects: Dict[str, Set[str]] = defaultdict(set)
        self.version_affects: Dict[str, Set[VersionKey]] = defaultdict(set)
        self.affected_by: Dict[VersionKey, Set[str]] = defaultdict(set)
        self.report = BuildReport()
        self._candidates: Dict[str, List[Tuple[Version, bool]]] = {}

    # --- construction ---

    def add_library(self, record: LibraryRecord) -> None:
        self.libraries[record.name] = record
        self.versions.setdefault(record.name, {})

    def add_version(self, name: str, record: VersionRecord) -> None:
        """Adds the library_version node and its ``has`` edge."""
        self.versions[name][record.num] = record
        self.depends.setdefault((name, record.num), [])
        self._candidates.pop(name, None)

    def add_depends(self, src: VersionKey, decl: DependencyDecl) -> None:
        self.depends[src].append(decl)
        self.dependents[decl.target_name].append((src, decl))

    def add_cve(self, advisory: Advisory) -> None:
        self.cves.setdefault(advisory.value, []).append(advisory)

    def add_library_affects(self, cve: str, name: str) -> None:
        self.library_affects[cve].add(name)

    def add_version_affects(self, cve: str, key: VersionKey) -> None:
        self.version_affects[cve].add(key)
        self.affected_by[key].add(cve)

    # --- queries ---

    def has_version(self, name: str, num: Version) -> bool:
        return num in self.versions.get(name, ())

    def version_record(self, name: str, num: Version) -> Optional[VersionRecord]:
        return self.versions.get(name, {}).get(num)

    def candidates(self, name: str) -> List[Tuple[Version, bool]]:
        """``(version, yanked)`` pairs of a library, newest first."""
        cached = self._candidates.get(name)
        if cached is None:
            recs = self.versions.get(name, {})
            cached = sorted(((v, r.yanked) for v, r in recs.items()), reverse=True)
            self._candidates[name] = cached
        return cached

    def version_keys(self) -> Iterator[VersionKey]:
        for name, recs in self.versions.items():
            for num in recs:
                yield (name, num)

    def edges(self) -> Iterator[Tuple[NodeId, NodeId, str, dict]]:
        for name, recs in self.versions.items():
            for num in recs:
                yield NodeId.library(name), NodeId.version(name, num), "has", {}
        for cve, names in self.library_affects.items():
            ranges = {a.package_name: a.vulnerable_version_range for a in self.cves[cve]}
            for name in names:
                yield NodeId.cve(cve), NodeId.library(name), "library_affects", {"range": ranges[name]}
        for cve, keys in self.version_affects.items():
            for name, num in keys:
                yield NodeId.cve(cve), NodeId.version(name, num), "version_affects", {}
        for (name, num), decls in self.depends.items():
            for decl in decls:
                props = decl.to_dict()
                del props["name"]
                yield NodeId.version(name, num), NodeId.library(decl.target_name), "version_depends", props

    def nodes(self) -> Iterator[Tuple[NodeId, dict]]:
        for name, rec in self.libraries.items():
            props = rec.to_dict()
            del props["versions"]
            yield NodeId.library(name), props
        for name, recs in self.versions.items():
            for num, rec in recs.items():
                props = {"name": name, "num": str(num), "yanked": rec.yanked,
                         "features": {k: list(v) for k, v in rec.features.items()}}
                yield NodeId.version(name, num), props
        for cve, advs in self.cves.items():
            yield NodeId.cve(cve), {"advisories": [a.to_dict() for a in sorted(advs, key=lambda a: a.package_name)]}


def build_graph(snapshot: Union[Snapshot, Iterable[LibraryRecord]], advisories: Iterable[Advisory]) -> KnowledgeGraph:
    """Materialize the knowledge graph.

    Dependency declarations stay unresolved edge attributes; advisories on
    packages missing from the snapshot become isolated cve nodes.
    """
    graph = KnowledgeGraph()
    records = list(snapshot)
    for rec in records:
        graph.add_library(rec)
        for vrec in rec.versions:
            graph.add_version(rec.name, vrec)

    dangling: Set[str] = set()
    for rec in records:
        for vrec in rec.versions:
            for decl in vrec.dependencies:
                if decl.target_name not in graph.libraries:
                    graph.report.dangling_dependencies += 1
                    dangling.add(decl.target_name)
                    continue
                graph.add_depends((rec.name, vrec.num), decl)
    graph.report.dangling_targets = sorted(dangling)
    if dangling:
        log.warning("%d dependency declaration(s) name libraries missing from the snapshot",
                    graph.report.dangling_dependencies)

    unresolved = []
    for adv in advisories:
        graph.add_cve(adv)
        name = adv.package_name
        if name not in graph.libraries:
            unresolved.append(adv.key)
            log.warning("advisory %s names unknown package %r", adv.value, name)
            continue
        graph.add_library_affects(adv.value, name)
        for num in graph.versions[name]:
            if matches(adv.requirement, num):
                graph.add_version_affects(adv.value, (name, num))
    graph.report.unresolved_advisories = sorted(unresolved)
    return graph


@dataclass(frozen=True)
class GraphStats:
    library: int = 0
    library_version: int = 0
    cve: int = 0
    has: int = 0
    library_affects: int = 0
    version_affects: int = 0
    version_depends: int = 0

    @property
    def nodes(self) -> int:
        return self.library + self.library_version + self.cve

    @property
    def edges(self) -> int:
        return self.has + self.library_affects + self.version_affects + self.version_depends

    def to_dict(self) -> dict:
        out = asdict(self)
        out["nodes"] = self.nodes
        out["edges"] = self.edges
        return out


def graph_stats(graph: KnowledgeGraph) -> GraphStats:
    return GraphStats(
        library=len(graph.libraries),
        library_version=sum(len(v) for v in graph.versions.values()),
        cve=len(graph.cves),
        has=sum(len(v) for v in graph.versions.values()),
        library_affects=sum(len(v) for v in graph.library_affects.values()),
        version_affects=sum(len(v) for v in graph.version_affects.values()),
        version_depends=sum(len(v) for v in graph.depends.values()),
    )


def validate_graph(graph: KnowledgeGraph) -> List[str]:
    """Check edge-endpoint typing and forward/reverse agreement.

    Returns a list of problems; empty means the graph is consistent.
    """
    problems = []
    node_ids = {nid for nid, _ in graph.nodes()}
    expected_kinds = {
        "has": ("library", "library_version"),
        "library_affects": ("cve", "library"),
        "version_affects": ("cve", "library_version"),
        "version_depends": ("library_version", "library"),
    }
    for src, dst, kind, _ in graph.edges():
        want = expected_kinds.get(kind)
        if want is None:
            problems.append(f"unknown edge kind {kind}")
            continue
        if (src.kind, dst.kind) != want:
            problems.append(f"{kind} edge {src} -> {dst} has endpoint kinds {src.kind}/{dst.kind}")
        for end in (src, dst):
            if end not in node_ids:
                problems.append(f"{kind} edge endpoint {end} is not a node")
        if kind == "has" and dst.key.rpartition("@")[0] != src.key:
            problems.append(f"has edge {src} -> {dst} crosses libraries")

    for cve, keys in graph.version_affects.items():
        for name, num in keys:
            if name not in graph.library_affects.get(cve, ()):
                problems.append(f"version_affects {cve} -> {name}@{num} without library_affects")
            if cve not in graph.affected_by.get((name, num), ()):
                problems.append(f"reverse index misses version_affects {cve} -> {name}@{num}")
    for key, cves in graph.affected_by.items():
        for cve in cves:
            if key not in graph.version_affects.get(cve, ()):
                problems.append(f"reverse index has stray version_affects {cve} -> {key[0]}@{key[1]}")

    forward = {(src, id(d)) for src, decls in graph.depends.items() for d in decls}
    reverse = {(src, id(d)) for entries in graph.dependents.values() for src, d in entries}
    if forward != reverse:
        problems.append(
            f"version_depends forward/reverse mismatch: {len(forward - reverse)} forward-only, "
            f"{len(reverse - forward)} reverse-only"
        )
    for target, entries in graph.dependents.items():
        for _, decl in entries:
            if decl.target_name != target:
                problems.append(f"reverse index files {decl.target_name} under {target}")
    return problems


NODE_HEADER = ("id", "kind", "properties")
EDGE_HEADER = ("src", "dst", "kind", "properties")


def export_graph(graph: KnowledgeGraph, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``nodes.csv`` and ``edges.csv`` for bulk import, deterministically ordered."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nodes = sorted((str(nid), nid.kind, canonical_json(props)) for nid, props in graph.nodes())
    edges = sorted((str(s), str(d), kind, canonical_json(props)) for s, d, kind, props in graph.edges())

    nodes_path, edges_path = out_dir / "nodes.csv", out_dir / "edges.csv"
    for path, header, rows in ((nodes_path, NODE_HEADER, nodes), (edges_path, EDGE_HEADER, edges)):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    return nodes_path, edges_path


def write_build_report(graph: KnowledgeGraph, path: Union[str, Path]) -> None:
    doc = {"stats": graph_stats(graph).to_dict(), **graph.report.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
