"""Dependency-tree resolution over the knowledge graph.

For every dependency a version declares, the resolver decides whether the
declaration applies at runtime (no dev or build dependencies, optional ones
only when a feature turns them on), selects the greatest non-yanked version
that satisfies the requirement, and recurses depth-first.  A
``(name, version)`` pair is expanded once per tree; later occurrences become
``shared`` leaves, which keeps the output a finite tree even over cycles.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .graph import KnowledgeGraph, VersionKey
from .ingest import DependencyDecl, DependencyKind, VersionRecord
from .semver import Version, compat_key, max_satisfying

__all__ = [
    "ResolveLimits",
    "RuleContext",
    "ResolvedNode",
    "ResolvedTree",
    "Resolver",
    "NotFoundError",
    "include_dependency",
    "resolve_tree",
    "tree_to_json",
    "LockDiff",
    "verify_against_lockfile",
]


class NotFoundError(KeyError):
    pass


@dataclass(frozen=True)
class ResolveLimits:
    max_nodes_per_path: int = 100
    max_total_nodes: int = 1_000_000

    def __post_init__(self):
        if self.max_nodes_per_path < 1 or self.max_total_nodes < 1:
            raise ValueError("resolve limits must be positive")


@dataclass(frozen=True)
class RuleContext:
    """Features enabled on one version, closed under its feature table."""

    enabled_features: FrozenSet[str] = frozenset()
    activated_dependencies: FrozenSet[str] = frozenset()
    forwarded_features: Mapping[str, FrozenSet[str]] = field(default_factory=dict)
    kinds: FrozenSet[DependencyKind] = frozenset({DependencyKind.NORMAL})

    @classmethod
    def for_version(
        cls,
        record: VersionRecord,
        requested: Iterable[str] = (),
        default_features: bool = True,
    ) -> "RuleContext":
        """Seed with ``default`` (if asked for) plus ``requested``, then close.

        Feature entries follow the registry conventions: ``dep:x`` turns on
        dependency ``x``; ``x/f`` turns on ``x`` and forwards feature ``f``
        to it; ``x?/f`` forwards ``f`` without turning ``x`` on; any other
        entry names a feature (or the implicit feature of an optional
        dependency).
        """
        table = record.features
        dep_names = {d.target_name for d in record.dependencies}
        todo = list(requested)
        if default_features:
            todo.append("default")
        enabled = set()
        activated = set()
        weak: Dict[str, set] = defaultdict(set)
        forwarded: Dict[str, set] = defaultdict(set)
        while todo:
            item = todo.pop()
            if item.startswith("dep:"):
                activated.add(item[4:])
            elif "/" in item:
                dep, feat = item.split("/", 1)
                if dep.endswith("?"):
                    weak[dep[:-1]].add(feat)
                else:
                    activated.add(dep)
                    forwarded[dep].add(feat)
                    if dep in table and dep not in enabled:
                        todo.append(dep)
            elif item not in enabled:
                if item not in table and item not in dep_names:
                    # "default" on a version without a default feature, or a
                    # name the version does not know: nothing to enable
                    continue
                enabled.add(item)
                todo.extend(table.get(item, ()))
                if item in dep_names:
                    activated.add(item)
        for dep, feats in weak.items():
            if dep in activated:
                forwarded[dep] |= feats
        return cls(
            frozenset(enabled),
            frozenset(activated),
            {k: frozenset(v) for k, v in forwarded.items()},
        )


def include_dependency(decl: DependencyDecl, ctx: RuleContext) -> bool:
    """Whether a declaration takes part in runtime resolution."""
    if decl.kind not in ctx.kinds:
        return False
    if decl.optional and decl.target_name not in ctx.activated_dependencies:
        return False
    return True


class ResolvedNode(NamedTuple):
    # a NamedTuple: trees are built by the million during propagation
    name: str
    version: Optional[Version]
    parent: Optional[int]
    requirement: Optional[str]
    depth: int
    shared: bool = False
    unresolvable: bool = False
    truncated: bool = False

    @property
    def key(self) -> Optional[VersionKey]:
        return None if self.version is None else (self.name, self.version)


@dataclass(frozen=True)
class ResolvedTree:
    root: VersionKey
    nodes: Tuple[ResolvedNode, ...]
    truncated: bool = False

    def children(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = defaultdict(list)
        for i, node in enumerate(self.nodes):
            if node.parent is not None:
                out[node.parent].append(i)
        return out

    def path(self, index: int) -> List[int]:
        """Node indices from the root down to ``index``."""
        out = []
        while index is not None:
            out.append(index)
            index = self.nodes[index].parent
        out.reverse()
        return out

    def keys(self) -> set:
        return {n.key for n in self.nodes if n.key is not None}

    def edges(self) -> List[Tuple[VersionKey, VersionKey, str]]:
        """Resolved ``(parent, child, requirement)`` triples."""
        out = []
        for node in self.nodes:
            if node.parent is not None and node.version is not None:
                out.append((self.nodes[node.parent].key, node.key, node.requirement))
        return out


class Resolver:
    """Resolves trees against one graph, caching selections across calls.

    The caches only hold facts derived from the immutable graph, so reusing a
    resolver for many roots gives the same trees as fresh ones.
    """

    def __init__(self, graph: KnowledgeGraph, limits: ResolveLimits = ResolveLimits(), allow_yanked: bool = False):
        self.graph = graph
        self.limits = limits
        self.allow_yanked = allow_yanked
        # keyed by id(decl): declarations live as long as the graph
        self._selected: Dict[int, Optional[Version]] = {}
        self._included: Dict[tuple, List[Tuple[DependencyDecl, FrozenSet[str]]]] = {}

    def select(self, decl: DependencyDecl) -> Optional[Version]:
        key = id(decl)
        try:
            return self._selected[key]
        except KeyError:
            chosen = self._selected[key] = max_satisfying(
                self.graph.candidates(decl.target_name), decl.requirement, self.allow_yanked
            )
            return chosen

    def included(self, name: str, num: Version, requested: FrozenSet[str], default_features: bool):
        """Included declarations of a version as ``(decl, features, key)``.

        ``features`` are the ones the child is asked for; ``key`` is the
        selected ``(name, version)`` or None when nothing satisfies the
        requirement.
        """
        key = (name, num, requested, default_features)
        hit = self._included.get(key)
        if hit is None:
            record = self.graph.version_record(name, num)
            ctx = RuleContext.for_version(record, requested, default_features)
            hit = []
            for decl in self.graph.depends.get((name, num), ()):
                if include_dependency(decl, ctx):
                    chosen = self.select(decl)
                    feats = frozenset(decl.features) | ctx.forwarded_features.get(decl.target_name, frozenset())
                    hit.append((decl, feats, None if chosen is None else (decl.target_name, chosen)))
            self._included[key] = hit
        return hit

    def resolve(self, name: str, version: Version) -> ResolvedTree:
        if not self.graph.has_version(name, version):
            raise NotFoundError(f"{name}@{version} is not in the graph")
        max_depth = self.limits.max_nodes_per_path - 1
        max_total = self.limits.max_total_nodes

        nodes: List[ResolvedNode] = []
        expanded = set()
        truncated = False

        root_children = self.included(name, version, frozenset(), True)
        if max_depth == 0 and root_children:
            nodes.append(ResolvedNode(name, version, None, None, 0, truncated=True))
            return ResolvedTree((name, version), tuple(nodes), True)
        nodes.append(ResolvedNode(name, version, None, None, 0))
        expanded.add((name, version))
        stack = [(0, iter(root_children))]

        while stack:
            parent, pending = stack[-1]
            item = next(pending, None)
            if item is None:
                stack.pop()
                continue
            if len(nodes) >= max_total:
                truncated = True
                break
            decl, features, key = item
            depth = nodes[parent].depth + 1
            req = str(decl.requirement)
            if key is None:
                nodes.append(ResolvedNode(decl.target_name, None, parent, req, depth, unresolvable=True))
                continue
            chosen = key[1]
            if key in expanded:
                nodes.append(ResolvedNode(decl.target_name, chosen, parent, req, depth, shared=True))
                continue
            children = self.included(decl.target_name, chosen, features, decl.default_features)
            if children and depth >= max_depth:
                # expanding would exceed the per-path cap; leave it unexpanded
                truncated = True
                nodes.append(ResolvedNode(decl.target_name, chosen, parent, req, depth, truncated=True))
                continue
            expanded.add(key)
            nodes.append(ResolvedNode(decl.target_name, chosen, parent, req, depth))
            stack.append((len(nodes) - 1, iter(children)))

        return ResolvedTree((name, version), tuple(nodes), truncated)

    def reach(self, name: str, version: Version) -> Tuple[set, bool]:
        """``(keys, truncated)`` of ``resolve(name, version)`` without building nodes.

        Same walk, same caps; only the bookkeeping is dropped. ``keys`` holds
        every resolved ``(name, version)`` in the tree, root included.
        """
        if not self.graph.has_version(name, version):
            raise NotFoundError(f"{name}@{version} is not in the graph")
        max_depth = self.limits.max_nodes_per_path - 1
        max_total = self.limits.max_total_nodes
        included = self.included
        root_children = included(name, version, frozenset(), True)
        if max_depth == 0 and root_children:
            return {(name, version)}, True
        expanded = {(name, version)}
        cut = set()  # truncated leaves: resolved but not memoized
        count = 1
        truncated = False
        stack = [iter(root_children)]
        while stack:
            item = next(stack[-1], None)
            if item is None:
                stack.pop()
                continue
            if count >= max_total:
                truncated = True
                break
            count += 1
            decl, features, key = item
            if key is None or key in expanded:
                continue
            children = included(key[0], key[1], features, decl.default_features)
            if children and len(stack) >= max_depth:
                truncated = True
                cut.add(key)
                continue
            expanded.add(key)
            stack.append(iter(children))
        return expanded | cut, truncated


def resolve_tree(
    graph: KnowledgeGraph,
    name: str,
    version: Version,
    limits: ResolveLimits = ResolveLimits(),
    allow_yanked: bool = False,
) -> ResolvedTree:
    return Resolver(graph, limits, allow_yanked).resolve(name, version)


def _node_doc(node: ResolvedNode) -> dict:
    doc = {
        "name": node.name,
        "version": None if node.version is None else str(node.version),
        "requirement": node.requirement,
    }
    for flag in ("shared", "unresolvable", "truncated"):
        if getattr(node, flag):
            doc[flag] = True
    return doc


def tree_to_json(tree: ResolvedTree) -> bytes:
    """Nested parent-child document plus a flat ``nodes`` array."""
    docs = []
    for node in tree.nodes:
        doc = _node_doc(node)
        doc["children"] = []
        docs.append(doc)
        if node.parent is not None:
            docs[node.parent]["children"].append(doc)
    flat = []
    for i, node in enumerate(tree.nodes):
        entry = {"index": i, "parent": node.parent, "depth": node.depth}
        entry.update(_node_doc(node))
        flat.append(entry)
    top = dict(docs[0])
    top["truncated"] = tree.truncated
    top["nodes"] = flat
    return (json.dumps(top, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


@dataclass
class LockDiff:
    in_tree_only: List[Tuple[str, Version]] = field(default_factory=list)
    in_lock_only: List[Tuple[str, Version]] = field(default_factory=list)
    version_mismatch: List[Tuple[str, Version, Version]] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.in_tree_only or self.in_lock_only or self.version_mismatch)

    def to_dict(self) -> dict:
        return {
            "clean": self.clean,
            "in_tree_only": [{"name": n, "version": str(v)} for n, v in self.in_tree_only],
            "in_lock_only": [{"name": n, "version": str(v)} for n, v in self.in_lock_only],
            "version_mismatch": [
                {"name": n, "tree_version": str(t), "lock_version": str(l)} for n, t, l in self.version_mismatch
            ],
        }


def verify_against_lockfile(tree: ResolvedTree, lock: Sequence[Tuple[str, Version]]) -> LockDiff:
    """Compare a resolved tree with a lockfile's installed packages.

    Versions are bucketed per ``(name, compatibility key)`` so that two
    incompatible copies of one library are compared separately.
    """
    tree_buckets: Dict[tuple, set] = defaultdict(set)
    for key in tree.keys():
        tree_buckets[(key[0], compat_key(key[1]))].add(key[1])
    lock_buckets: Dict[tuple, set] = defaultdict(set)
    for name, num in lock:
        lock_buckets[(name, compat_key(num))].add(num)

    diff = LockDiff()
    for bucket in sorted(set(tree_buckets) | set(lock_buckets)):
        name = bucket[0]
        in_tree = tree_buckets.get(bucket, set())
        in_lock = lock_buckets.get(bucket, set())
        tree_rest = sorted(in_tree - in_lock)
        lock_rest = sorted(in_lock - in_tree)
        paired = min(len(tree_rest), len(lock_rest))
        for t, l in zip(tree_rest, lock_rest):
            diff.version_mismatch.append((name, t, l))
        diff.in_tree_only.extend((name, v) for v in tree_rest[paired:])
        diff.in_lock_only.extend((name, v) for v in lock_rest[paired:])
    return diff
