"""Descriptive statistics over advisories and the graph."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .graph import KnowledgeGraph
from .ingest import SEVERITIES, Advisory
from .semver import matches

log = logging.getLogger(__name__)

# MITRE CWE names for the weakness classes common in Rust advisories
CWE_NAMES = {
    "CWE-20": "Improper Input Validation",
    "CWE-22": "Improper Limitation of a Pathname to a Restricted Directory ('Path Traversal')",
    "CWE-77": "Improper Neutralization of Special Elements used in a Command ('Command Injection')",
    "CWE-79": "Improper Neutralization of Input During Web Page Generation ('Cross-site Scripting')",
    "CWE-94": "Improper Control of Generation of Code ('Code Injection')",
    "CWE-119": "Improper Restriction of Operations within the Bounds of a Memory Buffer",
    "CWE-120": "Buffer Copy without Checking Size of Input ('Classic Buffer Overflow')",
    "CWE-125": "Out-of-bounds Read",
    "CWE-190": "Integer Overflow or Wraparound",
    "CWE-191": "Integer Underflow (Wrap or Wraparound)",
    "CWE-200": "Exposure of Sensitive Information to an Unauthorized Actor",
    "CWE-295": "Improper Certificate Validation",
    "CWE-362": "Concurrent Execution using Shared Resource with Improper Synchronization ('Race Condition')",
    "CWE-400": "Uncontrolled Resource Consumption",
    "CWE-401": "Missing Release of Memory after Effective Lifetime",
    "CWE-415": "Double Free",
    "CWE-416": "Use After Free",
    "CWE-476": "NULL Pointer Dereference",
    "CWE-617": "Reachable Assertion",
    "CWE-662": "Improper Synchronization",
    "CWE-674": "Uncontrolled Recursion",
    "CWE-770": "Allocation of Resources Without Limits or Throttling",
    "CWE-787": "Out-of-bounds Write",
    "CWE-835": "Loop with Unreachable Exit Condition ('Infinite Loop')",
    "CWE-843": "Access of Resource Using Incompatible Type ('Type Confusion')",
    "CWE-908": "Use of Uninitialized Resource",
}


@dataclass(frozen=True)
class SeverityDistribution:
    counts: Dict[str, int]
    total: int

    @property
    def empty(self) -> bool:
        return self.total == 0

    @property
    def fractions(self) -> Dict[str, float]:
        if not self.total:
            return {s: 0.0 for s in SEVERITIES}
        return {s: self.counts.get(s, 0) / self.total for s in SEVERITIES}

    def __getitem__(self, severity: str) -> float:
        return self.fractions[severity]

    def to_dict(self) -> dict:
        return {"total": self.total, "empty": self.empty, "counts": dict(self.counts), "fractions": self.fractions}


def severity_distribution(advisories: Iterable[Advisory]) -> SeverityDistribution:
    counts = Counter(a.severity for a in advisories)
    return SeverityDistribution({s: counts.get(s, 0) for s in SEVERITIES}, sum(counts.values()))


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    edges: Tuple[float, ...]
    counts: Tuple[int, ...]
    min_score: Optional[float] = None
    max_score: Optional[float] = None

    def bins(self) -> List[Tuple[float, float, int]]:
        return [(self.edges[i], self.edges[i + 1], c) for i, c in enumerate(self.counts)]

    def nonzero(self) -> Dict[Tuple[float, float], int]:
        return {(lo, hi): c for lo, hi, c in self.bins() if c}

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "bins": [{"low": lo, "high": hi, "count": c} for lo, hi, c in self.bins()],
            "min": self.min_score,
            "max": self.max_score,
        }


def cvss_histogram(advisories: Iterable[Advisory], bin_width: float = 0.5) -> Histogram:
    """Bin CVSS scores over [0, 10]; the last bin is closed on the right.

    ``min``/``max`` describe the scored range and skip 0.0 placeholders.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    width = Fraction(str(bin_width))
    nbins = math.ceil(Fraction(10) / width)
    edges = tuple(float(min(width * i, Fraction(10))) for i in range(nbins + 1))
    counts = [0] * nbins
    scored = []
    for adv in advisories:
        if adv.cvss is None:
            continue
        idx = min(int(Fraction(str(adv.cvss)) / width), nbins - 1)
        counts[idx] += 1
        if adv.cvss > 0:
            scored.append(adv.cvss)
    return Histogram(
        float(width), edges, tuple(counts),
        min(scored) if scored else None,
        max(scored) if scored else None,
    )


@dataclass(frozen=True)
class CweRanking:
    rows: Tuple[Tuple[str, str, int], ...]
    excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "rows": [{"cwe": c, "description": d, "count": n} for c, d, n in self.rows],
            "advisories_without_cwe": self.excluded,
        }


def _cwe_number(cwe: str) -> int:
    try:
        return int(cwe.split("-", 1)[1])
    except (IndexError, ValueError):
        return 1 << 30


def cwe_top_k(advisories: Iterable[Advisory], k: int = 10) -> CweRanking:
    counts: Counter = Counter()
    missing = 0
    for adv in advisories:
        if adv.cwe_ids is None:
            missing += 1
            continue
        counts.update(set(adv.cwe_ids))
    if missing:
        log.warning("%d advisories carry no CWE data and were left out of the ranking", missing)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], _cwe_number(kv[0]), kv[0]))
    rows = tuple((cwe, CWE_NAMES.get(cwe, ""), n) for cwe, n in ranked[: max(k, 0)])
    return CweRanking(rows, missing)


def patchless_proportion(advisories: Sequence[Advisory]) -> float:
    advisories = list(advisories)
    if not advisories:
        return 0.0
    return sum(1 for a in advisories if not a.first_patched_version) / len(advisories)


@dataclass(frozen=True)
class LatestAffectedRow:
    cve: str
    library: str
    range: str
    latest_version: str
    published_at: Optional[str]
    yanked: bool

    def to_dict(self) -> dict:
        return {
            "cve": self.cve,
            "library": self.library,
            "range": self.range,
            "latest_version": self.latest_version,
            "published_at": self.published_at,
            "yanked": self.yanked,
        }


@dataclass(frozen=True)
class LatestAffected:
    fraction: float
    libraries_with_advisories: int
    still_affected: Tuple[str, ...]
    rows: Tuple[LatestAffectedRow, ...]

    def to_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "libraries_with_advisories": self.libraries_with_advisories,
            "still_affected": list(self.still_affected),
            "rows": [r.to_dict() for r in self.rows],
        }


def latest_version_still_affected(graph: KnowledgeGraph, advisories: Iterable[Advisory]) -> LatestAffected:
    """Share of advised libraries whose newest release is still in range.

    The denominator is libraries (present in the graph) with at least one
    advisory. Membership is checked with ``matches`` and cross-checked
    against the graph's ``version_affects`` edges.
    """
    by_lib: Dict[str, List[Advisory]] = {}
    for adv in advisories:
        if adv.package_name in graph.libraries:
            by_lib.setdefault(adv.package_name, []).append(adv)

    rows = []
    still = []
    for name in sorted(by_lib):
        lib = graph.libraries[name]
        latest = lib.newest
        parsed_max = max(graph.versions[name])
        if parsed_max != latest:
            log.info("%s: newest_version %s differs from greatest parsed version %s", name, latest, parsed_max)
        record = graph.version_record(name, latest)
        yanked = bool(record and record.yanked)
        hit = False
        for adv in sorted(by_lib[name], key=lambda a: a.value):
            in_range = matches(adv.requirement, latest)
            via_graph = (name, latest) in graph.version_affects.get(adv.value, ())
            if in_range != via_graph:
                log.warning("%s on %s@%s: range check and graph edge disagree", adv.value, name, latest)
            if in_range:
                hit = True
                published = adv.published_at.date().isoformat() if adv.published_at else None
                rows.append(LatestAffectedRow(adv.value, name, adv.vulnerable_version_range, str(latest), published, yanked))
        if hit:
            still.append(name)
    total = len(by_lib)
    fraction = len(still) / total if total else 0.0
    return LatestAffected(fraction, total, tuple(still), tuple(rows))


def yanked_latest_affected(graph: KnowledgeGraph, advisories: Iterable[Advisory]) -> float:
    """Among libraries whose newest release is still affected, the share
    whose newest release is yanked."""
    result = latest_version_still_affected(graph, advisories)
    if not result.still_affected:
        return 0.0
    yanked = 0
    for name in result.still_affected:
        record = graph.version_record(name, graph.libraries[name].newest)
        yanked += bool(record and record.yanked)
    return yanked / len(result.still_affected)


@dataclass
class StatsReport:
    severity: SeverityDistribution
    histogram: Histogram
    cwe: CweRanking
    patchless: float
    latest: LatestAffected
    yanked_latest: float
    advisories: int = 0

    @property
    def empty(self) -> bool:
        return self.advisories == 0

    def to_dict(self) -> dict:
        return {
            "empty": self.empty,
            "advisories": self.advisories,
            "severity": self.severity.to_dict(),
            "cvss_histogram": self.histogram.to_dict(),
            "cwe_top": self.cwe.to_dict(),
            "patchless_proportion": self.patchless,
            "latest_version_still_affected": self.latest.to_dict(),
            "yanked_latest_affected": self.yanked_latest,
        }


def compute_report(graph: KnowledgeGraph, advisories: Sequence[Advisory], bin_width: float = 0.5, k: int = 10) -> StatsReport:
    advisories = list(advisories)
    return StatsReport(
        severity=severity_distribution(advisories),
        histogram=cvss_histogram(advisories, bin_width),
        cwe=cwe_top_k(advisories, k),
        patchless=patchless_proportion(advisories),
        latest=latest_version_still_affected(graph, advisories),
        yanked_latest=yanked_latest_affected(graph, advisories),
        advisories=len(advisories),
    )
