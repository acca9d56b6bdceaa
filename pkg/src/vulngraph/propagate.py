"""Vulnerability propagation over resolved dependency trees.

Static reverse reachability over ``version_depends`` gives an
over-approximate candidate set; each candidate is then resolved and kept only
when its actual tree reaches a directly affected version.
"""

from __future__ import annotations

import logging
from collections import defaultdict, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .graph import KnowledgeGraph, VersionKey, graph_stats
from .ingest import Advisory, DependencyKind
from .resolve import ResolvedTree, ResolveLimits, Resolver

log = logging.getLogger(__name__)

OUTSIDE_RANGE = "resolved-version-outside-range"
NOT_INCLUDED = "dependency-not-included"
TRUNCATED = "truncated"

_RUNTIME_KINDS = (DependencyKind.NORMAL,)


def _key_doc(key: VersionKey) -> dict:
    return {"name": key[0], "version": str(key[1])}


@dataclass
class PropagationResult:
    advisory: str
    packages: Tuple[str, ...] = ()
    direct: List[VersionKey] = field(default_factory=list)
    transitively_affected: List[VersionKey] = field(default_factory=list)
    witness_paths: Dict[VersionKey, List[VersionKey]] = field(default_factory=dict)
    excluded_candidates: List[Tuple[str, object, str]] = field(default_factory=list)
    truncated: bool = False

    @property
    def libraries_reached(self) -> int:
        return len({name for name, _ in self.transitively_affected})

    def to_dict(self) -> dict:
        return {
            "advisory": self.advisory,
            "packages": list(self.packages),
            "direct": [_key_doc(k) for k in self.direct],
            "transitively_affected": [_key_doc(k) for k in self.transitively_affected],
            "witness_paths": [
                {"from": _key_doc(k), "path": [_key_doc(p) for p in self.witness_paths[k]]}
                for k in self.transitively_affected
            ],
            "excluded_candidates": [
                {"name": n, "version": str(v), "reason": r} for n, v, r in self.excluded_candidates
            ],
            "truncated": self.truncated,
        }


def _cve_id(advisory: Union[str, Advisory]) -> str:
    return advisory if isinstance(advisory, str) else advisory.value


def affected_versions(graph: KnowledgeGraph, advisory: Union[str, Advisory]) -> List[VersionKey]:
    """The ``version_affects`` targets of a CVE, sorted."""
    cve = _cve_id(advisory)
    if cve not in graph.cves:
        raise KeyError(f"unknown advisory {cve}")
    for adv in graph.cves[cve]:
        if adv.package_name not in graph.libraries:
            log.warning("%s: package %r is not in the graph", cve, adv.package_name)
    return sorted(graph.version_affects.get(cve, ()))


def _runtime_index(graph: KnowledgeGraph) -> Dict[str, Tuple[VersionKey, ...]]:
    """library -> versions declaring a runtime dependency on it (deduplicated)."""
    index: Dict[str, Dict[VersionKey, None]] = defaultdict(dict)
    for target, entries in graph.dependents.items():
        for src, decl in entries:
            # dev/build declarations never enter a runtime tree
            if decl.kind in _RUNTIME_KINDS:
                index[target][src] = None
    return {k: tuple(v) for k, v in index.items()}


def _reverse_closure(index, *library_names: str) -> Set[VersionKey]:
    seen_libs = set(library_names)
    queue = deque(sorted(seen_libs))
    out: Set[VersionKey] = set()
    while queue:
        for src in index.get(queue.popleft(), ()):
            out.add(src)
            if src[0] not in seen_libs:
                seen_libs.add(src[0])
                queue.append(src[0])
    return out


def reverse_dependents(graph: KnowledgeGraph, library_name: str) -> Set[VersionKey]:
    """Every version that declares a runtime dependency on ``library_name``,
    directly or through other libraries' declarations."""
    return _reverse_closure(_runtime_index(graph), library_name)


def _packages(graph: KnowledgeGraph, cve: str) -> Tuple[str, ...]:
    return tuple(sorted({a.package_name for a in graph.cves[cve]}))


def _candidates(index, packages: Iterable[str], direct: Set[VersionKey]) -> Set[VersionKey]:
    out: Set[VersionKey] = set()
    for pkg in packages:
        out |= _reverse_closure(index, pkg)
    return out - direct


def _scan_tree(tree: ResolvedTree, affected_by: Dict[VersionKey, Set[str]], wanted: Set[str]):
    """Shortest-then-lexicographic witness path per CVE hit in ``tree``."""
    best: Dict[str, List[VersionKey]] = {}
    for i, node in enumerate(tree.nodes):
        key = node.key
        if key is None or i == 0:
            continue
        hits = affected_by.get(key)
        if not hits:
            continue
        for cve in hits & wanted:
            path = [tree.nodes[j].key for j in tree.path(i)]
            cur = best.get(cve)
            if cur is None or (len(path), path) < (len(cur), cur):
                best[cve] = path
    return best


def _evaluate(tree: ResolvedTree, cves: Sequence[str], affected_by, packages_of):
    """Classify one candidate's tree against each CVE it is a candidate for."""
    hits = _scan_tree(tree, affected_by, set(cves))
    names = {n.name for n in tree.nodes if n.version is not None}
    out = {}
    for cve in cves:
        if cve in hits:
            out[cve] = ("hit", hits[cve])
        elif any(p in names for p in packages_of[cve]):
            out[cve] = ("miss", OUTSIDE_RANGE)
        elif tree.truncated:
            out[cve] = ("miss", TRUNCATED)
        else:
            out[cve] = ("miss", NOT_INCLUDED)
    return out


# worker state for --jobs > 1 (inherited through fork)
_WORKER: dict = {}


def _worker_init(graph, limits, allow_yanked, state):
    _WORKER.update(state, resolver=Resolver(graph, limits, allow_yanked))


def _classify_chunk(chunk):
    resolver = _WORKER["resolver"]
    out = []
    for cand, cves in chunk:
        tree = resolver.resolve(*cand)
        out.append((cand, tree.truncated, _evaluate(tree, cves, _WORKER["affected_by"], _WORKER["packages_of"])))
    return out


def _hit_chunk(chunk):
    resolver = _WORKER["resolver"]
    affected = _WORKER["affected"]
    out = []
    for cand in chunk:
        keys, truncated = resolver.reach(*cand)
        # the root is never in ``affected`` (direct roots are not candidates)
        out.append((cand, not affected.isdisjoint(keys), truncated))
    return out


def _run_candidates(graph, limits, allow_yanked, work, jobs, task, state):
    if jobs <= 1 or len(work) < 2:
        _worker_init(graph, limits, allow_yanked, state)
        try:
            return task(work)
        finally:
            _WORKER.clear()
    size = max(1, len(work) // (jobs * 4))
    chunks = [work[i:i + size] for i in range(0, len(work), size)]
    import multiprocessing

    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(
        jobs, mp_context=ctx, initializer=_worker_init, initargs=(graph, limits, allow_yanked, state),
    ) as pool:
        out = []
        for part in pool.map(task, chunks):
            out.extend(part)
    return out


def propagate_many(
    graph: KnowledgeGraph,
    cves: Iterable[Union[str, Advisory]],
    limits: ResolveLimits = ResolveLimits(),
    allow_yanked: bool = False,
    jobs: int = 1,
) -> List[PropagationResult]:
    """Propagation results for several CVEs, resolving each candidate once."""
    cve_ids = sorted({_cve_id(c) for c in cves})
    results: Dict[str, PropagationResult] = {}
    packages_of: Dict[str, Tuple[str, ...]] = {}
    direct_sets: Dict[str, Set[VersionKey]] = {}
    per_candidate: Dict[VersionKey, List[str]] = defaultdict(list)
    index = _runtime_index(graph)
    for cve in cve_ids:
        direct = affected_versions(graph, cve)
        packages_of[cve] = _packages(graph, cve)
        direct_sets[cve] = set(direct)
        results[cve] = PropagationResult(cve, packages_of[cve], direct)
        for cand in _candidates(index, packages_of[cve], direct_sets[cve]):
            per_candidate[cand].append(cve)

    affected_by = {k: v for k, v in graph.affected_by.items() if v}
    work = [(cand, per_candidate[cand]) for cand in sorted(per_candidate)]
    state = {"affected_by": affected_by, "packages_of": packages_of}
    outcomes = _run_candidates(graph, limits, allow_yanked, work, jobs, _classify_chunk, state)

    for cand, truncated, verdicts in outcomes:
        for cve, (status, detail) in verdicts.items():
            res = results[cve]
            res.truncated = res.truncated or truncated
            if status == "hit":
                res.transitively_affected.append(cand)
                res.witness_paths[cand] = detail
            else:
                res.excluded_candidates.append((cand[0], cand[1], detail))
    for res in results.values():
        res.transitively_affected.sort()
        res.excluded_candidates.sort(key=lambda e: (e[0], e[1]))
    return [results[c] for c in cve_ids]


def propagation_paths(
    graph: KnowledgeGraph,
    advisory: Union[str, Advisory],
    limits: ResolveLimits = ResolveLimits(),
    allow_yanked: bool = False,
) -> PropagationResult:
    """Affected dependents of one CVE, with a witness path for each."""
    return propagate_many(graph, [advisory], limits, allow_yanked)[0]


@dataclass(frozen=True)
class EcosystemStats:
    directly_affected_libraries: int = 0
    directly_affected_versions: int = 0
    propagated_libraries: int = 0
    propagated_versions: int = 0
    total_libraries: int = 0
    total_versions: int = 0
    truncated: bool = False

    @property
    def library_ratio(self) -> float:
        return self.propagated_libraries / self.total_libraries if self.total_libraries else 0.0

    @property
    def version_ratio(self) -> float:
        return self.propagated_versions / self.total_versions if self.total_versions else 0.0

    def to_dict(self) -> dict:
        return {
            "directly_affected_libraries": self.directly_affected_libraries,
            "directly_affected_versions": self.directly_affected_versions,
            "propagated_libraries": self.propagated_libraries,
            "propagated_versions": self.propagated_versions,
            "total_libraries": self.total_libraries,
            "total_versions": self.total_versions,
            "library_ratio": self.library_ratio,
            "version_ratio": self.version_ratio,
            "truncated": self.truncated,
        }


def summarize(graph: KnowledgeGraph, results: Iterable[PropagationResult]) -> EcosystemStats:
    direct: Set[VersionKey] = set()
    transitive: Set[VersionKey] = set()
    truncated = False
    for res in results:
        direct.update(res.direct)
        transitive.update(res.transitively_affected)
        truncated = truncated or res.truncated
    # a version hit both ways counts once, as direct
    propagated = transitive - direct
    stats = graph_stats(graph)
    return EcosystemStats(
        directly_affected_libraries=len({n for n, _ in direct}),
        directly_affected_versions=len(direct),
        propagated_libraries=len({n for n, _ in propagated}),
        propagated_versions=len(propagated),
        total_libraries=stats.library,
        total_versions=stats.library_version,
        truncated=truncated,
    )


def ecosystem_propagation_stats(
    graph: KnowledgeGraph,
    advisories: Optional[Iterable[Union[str, Advisory]]] = None,
    limits: ResolveLimits = ResolveLimits(),
    allow_yanked: bool = False,
    jobs: int = 1,
) -> EcosystemStats:
    """Ecosystem-wide totals without per-advisory bookkeeping.

    Gives the same numbers as ``summarize(graph, propagate_many(...))``: a
    resolved tree can only reach an affected version through runtime
    declarations, so every hit lies in the union of the reverse closures.
    One multi-source closure and one resolution per candidate suffice,
    which keeps memory linear in the graph at registry scale.
    """
    cves = sorted({_cve_id(c) for c in (graph.cves if advisories is None else advisories)})
    direct: Set[VersionKey] = set()
    packages: Set[str] = set()
    for cve in cves:
        direct.update(affected_versions(graph, cve))
        packages.update(_packages(graph, cve))
    wanted = set(cves)
    affected = {k for k, hits in graph.affected_by.items() if hits & wanted}

    index = _runtime_index(graph)
    # versions that are direct for some advisory count as direct only, so
    # their own trees are not needed (truncation there is not reported)
    work = sorted(_reverse_closure(index, *packages) - direct)
    outcomes = _run_candidates(graph, limits, allow_yanked, work, jobs, _hit_chunk, {"affected": affected})

    propagated = {cand for cand, hit, _ in outcomes if hit}
    stats = graph_stats(graph)
    return EcosystemStats(
        directly_affected_libraries=len({n for n, _ in direct}),
        directly_affected_versions=len(direct),
        propagated_libraries=len({n for n, _ in propagated}),
        propagated_versions=len(propagated),
        total_libraries=stats.library,
        total_versions=stats.library_version,
        truncated=any(t for _, hit, t in outcomes),
    )


@dataclass(frozen=True)
class ImpactRow:
    cve: str
    direct_library: str
    libraries_reached: int
    versions_reached: int

    def to_dict(self) -> dict:
        return {
            "cve": self.cve,
            "direct_library": self.direct_library,
            "libraries_reached": self.libraries_reached,
            "versions_reached": self.versions_reached,
        }


def top_impact_table(results: Iterable[PropagationResult], k: int) -> List[ImpactRow]:
    """Rank CVEs by propagated versions; ties by CVE id."""
    rows = [
        ImpactRow(r.advisory, ",".join(r.packages), r.libraries_reached, len(r.transitively_affected))
        for r in results
    ]
    rows.sort(key=lambda row: (-row.versions_reached, row.cve))
    return rows[: max(k, 0)]
