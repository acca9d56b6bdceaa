import json
import random

import pytest

from vulngraph.ingest import DependencyDecl, VersionRecord
from vulngraph.resolve import (
    NotFoundError,
    ResolveLimits,
    Resolver,
    RuleContext,
    include_dependency,
    resolve_tree,
    tree_to_json,
    verify_against_lockfile,
)
from vulngraph.semver import matches, parse_requirement, parse_version

from helpers import dep, lib, make_graph, rand_fixture, random_registry, ver
from oracles import oracle_select, oracle_tree

V = parse_version


def rows_of(tree):
    flag = lambda n: "shared" if n.shared else "unresolvable" if n.unresolvable else "truncated" if n.truncated else None
    return [
        (n.name, None if n.version is None else str(n.version), n.parent, n.requirement, n.depth, flag(n))
        for n in tree.nodes
    ]


def decl(name="x", req="1", **kw):
    return DependencyDecl.from_dict(dep(name, req, **kw))


# --- inclusion rules -------------------------------------------------------


def test_include_dependency_rules():
    ctx = RuleContext()
    assert not include_dependency(decl(kind="dev"), ctx)
    assert not include_dependency(decl(kind="build"), ctx)
    assert include_dependency(decl(), ctx)
    assert not include_dependency(decl(optional=True), ctx)
    assert include_dependency(decl(optional=True), RuleContext(activated_dependencies=frozenset({"x"})))


def _record(features, deps):
    return VersionRecord.from_dict(ver("1.0.0", deps, features=features))


def test_rule_context_closure():
    rec = _record(
        {"default": ["std"], "std": ["alloc", "serde?/std"], "alloc": ["dep:libc"], "json": ["serde/derive"]},
        [dep("libc", "0.2", optional=True), dep("serde", "1", optional=True)],
    )
    ctx = RuleContext.for_version(rec)
    assert ctx.enabled_features == {"default", "std", "alloc"}
    assert ctx.activated_dependencies == {"libc"}
    assert "serde" not in ctx.forwarded_features  # weak: serde stays off

    ctx = RuleContext.for_version(rec, ["json"])
    assert ctx.activated_dependencies == {"libc", "serde"}
    assert ctx.forwarded_features["serde"] == {"derive", "std"}

    ctx = RuleContext.for_version(rec, default_features=False)
    assert ctx.enabled_features == frozenset() and ctx.activated_dependencies == frozenset()


def test_implicit_feature_of_optional_dependency():
    rec = _record({}, [dep("log", "0.4", optional=True)])
    assert RuleContext.for_version(rec).activated_dependencies == frozenset()
    assert RuleContext.for_version(rec, ["log"]).activated_dependencies == {"log"}


def test_optional_activated_by_default_feature_in_two_crate_fixture():
    libs = [
        lib("app", [ver("1.0.0", [dep("tls", "1", optional=True)], features={"default": ["tls"]})]),
        lib("tls", ["1.0.0"]),
        lib("bare", [ver("1.0.0", [dep("app", "1", default_features=False)])]),
    ]
    g = make_graph(libs)
    assert [n.name for n in resolve_tree(g, "app", V("1.0.0")).nodes] == ["app", "tls"]
    # default-features = false on the edge keeps the optional dependency off
    assert [n.name for n in resolve_tree(g, "bare", V("1.0.0")).nodes] == ["bare", "app"]


# --- fixtures ----------------------------------------------------------------


def test_rand_fixture():
    libs, _ = rand_fixture()
    g = make_graph(libs)
    tree = resolve_tree(g, "rand", V("0.8.5"))
    children = [tree.nodes[i] for i in tree.children()[0]]
    assert [(c.name, str(c.version)) for c in children] == [
        ("rand_core", "0.6.3"), ("rand_chacha", "0.3.1"), ("libc", "0.2.119")
    ]
    doc = json.loads(tree_to_json(tree))
    assert len(doc["children"]) == 3
    assert doc["children"][1]["children"][0] == {
        "name": "rand_core", "version": "0.6.3", "requirement": "^0.6.0", "shared": True, "children": []
    }
    assert oracle_select({l["name"]: l for l in libs}, "rand_core", "^0.6") == "0.6.3"


def test_single_node_tree():
    tree = resolve_tree(make_graph([lib("solo", ["1.0.0"])]), "solo", V("1.0.0"))
    assert len(tree.nodes) == 1 and not tree.truncated
    doc = json.loads(tree_to_json(tree))
    assert (doc["name"], doc["version"], doc["children"]) == ("solo", "1.0.0", [])


def test_cycle_terminates_with_shared_leaf():
    g = make_graph([
        lib("A", [ver("1.0.0", [dep("B", "^1")])]),
        lib("B", [ver("1.0.0", [dep("A", "^1")])]),
    ])
    tree = resolve_tree(g, "A", V("1.0.0"))
    assert rows_of(tree) == [
        ("A", "1.0.0", None, None, 0, None),
        ("B", "1.0.0", 0, "^1", 1, None),
        ("A", "1.0.0", 1, "^1", 2, "shared"),
    ]
    assert '"shared": true' in tree_to_json(tree).decode()


def test_unresolvable_leaf_and_unknown_root():
    g = make_graph([lib("a", [ver("1.0.0", [dep("b", "^2")])]), lib("b", ["1.0.0"])])
    tree = resolve_tree(g, "a", V("1.0.0"))
    assert rows_of(tree)[1] == ("b", None, 0, "^2", 1, "unresolvable")
    with pytest.raises(NotFoundError):
        resolve_tree(g, "a", V("9.9.9"))
    with pytest.raises(NotFoundError):
        resolve_tree(g, "nope", V("1.0.0"))


def test_two_majors_coexist():
    g = make_graph([
        lib("top", [ver("1.0.0", [dep("mid", "1"), dep("rand", "0.7")])]),
        lib("mid", [ver("1.0.0", [dep("rand", "0.8")])]),
        lib("rand", ["0.7.3", "0.8.5"]),
    ])
    keys = {(n.name, str(n.version)) for n in resolve_tree(g, "top", V("1.0.0")).nodes}
    assert {("rand", "0.7.3"), ("rand", "0.8.5")} <= keys


def test_yanked_skipped_unless_allowed():
    g = make_graph([lib("a", [ver("1.0.0", [dep("b", "1")])]), lib("b", [ver("1.0.0"), ver("1.1.0", yanked=True)])])
    assert str(resolve_tree(g, "a", V("1.0.0")).nodes[1].version) == "1.0.0"
    assert str(resolve_tree(g, "a", V("1.0.0"), allow_yanked=True).nodes[1].version) == "1.1.0"


def chain(n):
    return make_graph([lib(f"c{i}", [ver("1.0.0", [dep(f"c{i + 1}", "1")] if i + 1 < n else [])]) for i in range(n)])


def test_path_limit_counts_nodes():
    g = chain(6)
    tree = resolve_tree(g, "c0", V("1.0.0"), ResolveLimits(max_nodes_per_path=6))
    assert len(tree.nodes) == 6 and not tree.truncated
    tree = resolve_tree(g, "c0", V("1.0.0"), ResolveLimits(max_nodes_per_path=5))
    assert len(tree.nodes) == 5 and tree.truncated and tree.nodes[-1].truncated
    tree = resolve_tree(g, "c0", V("1.0.0"), ResolveLimits(max_nodes_per_path=1))
    assert len(tree.nodes) == 1 and tree.truncated


def test_total_limit():
    tree = resolve_tree(chain(50), "c0", V("1.0.0"), ResolveLimits(max_total_nodes=10))
    assert len(tree.nodes) == 10 and tree.truncated


def test_truncated_node_is_not_memoized():
    # d reached first deep (cut off), later shallow (expanded in full)
    g = make_graph([
        lib("root", [ver("1.0.0", [dep("p", "1"), dep("d", "1")])]),
        lib("p", [ver("1.0.0", [dep("d", "1")])]),
        lib("d", [ver("1.0.0", [dep("leaf", "1")])]),
        lib("leaf", ["1.0.0"]),
    ])
    tree = resolve_tree(g, "root", V("1.0.0"), ResolveLimits(max_nodes_per_path=3))
    assert [r[0] + (":" + r[5] if r[5] else "") for r in rows_of(tree)] == ["root", "p", "d:truncated", "d", "leaf"]


def test_limits_validated():
    with pytest.raises(ValueError):
        ResolveLimits(max_nodes_per_path=0)


# --- properties ----------------------------------------------------------------


def _check_tree_invariants(g, tree):
    for i, node in enumerate(tree.nodes):
        if i == 0:
            assert node.parent is None and node.depth == 0
            continue
        assert node.parent < i and node.depth == tree.nodes[node.parent].depth + 1
        if node.version is None:
            continue
        req = parse_requirement(node.requirement)
        assert matches(req, node.version)
        better = [v for v, yanked in g.candidates(node.name) if not yanked and v > node.version and matches(req, v)]
        assert not better


def test_random_trees_oracle_and_invariants():
    rng = random.Random(2024)
    for case in range(150):
        libs = random_registry(rng)
        registry = {l["name"]: l for l in libs}
        g = make_graph(libs)
        resolver = Resolver(g, ResolveLimits(max_nodes_per_path=rng.choice([3, 5, 100])))
        for l in libs:
            for v in l["versions"]:
                tree = resolver.resolve(l["name"], V(v["num"]))
                _check_tree_invariants(g, tree)
                assert rows_of(tree) == oracle_tree(registry, l["name"], v["num"], resolver.limits.max_nodes_per_path), case


def test_termination_on_large_cyclic_graph():
    rng = random.Random(5)
    names = [f"n{i}" for i in range(200)]
    libs = [
        lib(n, [ver(f"1.{k}.0", [dep(rng.choice(names), "1") for _ in range(rng.randint(0, 4))]) for k in range(2)])
        for n in names
    ]
    g = make_graph(libs)
    resolver = Resolver(g)
    for n in names[:40]:
        tree = resolver.resolve(n, V("1.1.0"))
        # every expanded version appears at most once
        expanded = [n.key for n in tree.nodes if not (n.shared or n.truncated or n.unresolvable)]
        assert len(expanded) == len(set(expanded))


def test_json_is_deterministic_and_shared_resolver_agrees():
    libs, _ = rand_fixture()
    g = make_graph(libs)
    a = tree_to_json(resolve_tree(g, "rand", V("0.8.5")))
    shared = Resolver(g)
    shared.resolve("rand_chacha", V("0.3.1"))
    b = tree_to_json(shared.resolve("rand", V("0.8.5")))
    c = tree_to_json(resolve_tree(make_graph(libs), "rand", V("0.8.5")))
    assert a == b == c
    doc = json.loads(a)
    assert [n["index"] for n in doc["nodes"]] == list(range(len(doc["nodes"])))


# --- lockfile verification ------------------------------------------------


def test_lock_diff():
    libs, _ = rand_fixture()
    tree = resolve_tree(make_graph(libs), "rand", V("0.8.5"))
    same = sorted(tree.keys())
    assert verify_against_lockfile(tree, same).clean

    lock = [k for k in same if k[0] != "rand_core"] + [("rand_core", V("0.6.2")), ("rand_pcg", V("0.3.1"))]
    diff = verify_against_lockfile(tree, lock)
    assert diff.version_mismatch == [("rand_core", V("0.6.3"), V("0.6.2"))]
    assert diff.in_lock_only == [("rand_pcg", V("0.3.1"))]
    assert diff.in_tree_only == []


def test_lock_diff_buckets_by_major():
    g = make_graph([
        lib("top", [ver("1.0.0", [dep("rand", "0.7"), dep("mid", "1")])]),
        lib("mid", [ver("1.0.0", [dep("rand", "0.8")])]),
        lib("rand", ["0.7.3", "0.8.5"]),
    ])
    tree = resolve_tree(g, "top", V("1.0.0"))
    lock = [("top", V("1.0.0")), ("mid", V("1.0.0")), ("rand", V("0.7.3")), ("rand", V("0.8.4"))]
    diff = verify_against_lockfile(tree, lock)
    assert diff.version_mismatch == [("rand", V("0.8.5"), V("0.8.4"))]
    assert not diff.in_tree_only and not diff.in_lock_only
    assert diff.to_dict()["clean"] is False


def test_reach_matches_resolve():
    rng = random.Random(77)
    for case in range(150):
        libs = random_registry(rng)
        g = make_graph(libs)
        limits = ResolveLimits(max_nodes_per_path=rng.choice([1, 2, 3, 5, 100]), max_total_nodes=rng.choice([4, 10, 100000]))
        resolver = Resolver(g, limits)
        for l in libs:
            for v in l["versions"]:
                tree = resolver.resolve(l["name"], V(v["num"]))
                assert resolver.reach(l["name"], V(v["num"])) == (tree.keys(), tree.truncated), case
    g = chain(8)
    tree = resolve_tree(g, "c0", V("1.0.0"), ResolveLimits(max_nodes_per_path=4))
    assert Resolver(g, ResolveLimits(max_nodes_per_path=4)).reach("c0", V("1.0.0")) == (tree.keys(), True)
    with pytest.raises(NotFoundError):
        Resolver(g).reach("c0", V("9.0.0"))
