"""Independent reference implementations used as test oracles.

Nothing here calls into vulngraph's matching, ordering or resolution code;
the oracles work on plain strings, tuples and dicts so that agreement with
the library is evidence rather than tautology.
"""

import re
from functools import cmp_to_key

# --- version ordering ---------------------------------------------------------


def split_version(text):
    text = text.split("+", 1)[0]
    core, _, pre = text.partition("-")
    major, minor, patch = (int(x) for x in core.split("."))
    return (major, minor, patch), (pre.split(".") if pre else [])


def _cmp_ident(a, b):
    ad, bd = a.isdigit(), b.isdigit()
    if ad and bd:
        return (int(a) > int(b)) - (int(a) < int(b))
    if ad != bd:
        return -1 if ad else 1
    return (a > b) - (a < b)


def cmp_versions(a, b):
    """Precedence by the textbook rules, on version strings."""
    (ta, pa), (tb, pb) = split_version(a), split_version(b)
    if ta != tb:
        return -1 if ta < tb else 1
    if not pa or not pb:
        return (not pa) - (not pb)
    for x, y in zip(pa, pb):
        c = _cmp_ident(x, y)
        if c:
            return c
    return (len(pa) > len(pb)) - (len(pa) < len(pb))


version_sort_key = cmp_to_key(cmp_versions)


# --- requirement matching -----------------------------------------------------

_COMP = re.compile(r"^\s*(\^|~|=|>=|<=|>|<)?\s*(.*?)\s*$")


def _parse_partial(text):
    """'1.2' -> ([1, 2], None); '1.*' -> ([1], None) with wildcard; pre kept as text."""
    core, _, pre = text.partition("-")
    parts = core.split(".")
    nums = []
    for p in parts:
        if p in ("*", "x", "X"):
            break
        nums.append(int(p))
    return nums, (pre or None)


def _fmt(nums, pre=None):
    nums = list(nums) + [0] * (3 - len(nums))
    return ".".join(map(str, nums)) + (f"-{pre}" if pre else "")


def _bump(nums):
    nums = list(nums)
    nums[-1] += 1
    return _fmt(nums, "0")


def _desugar(op, nums, pre):
    """A comparator as a list of primitive (op, full-version) constraints.

    Partial versions stand for their whole block; ``X-0`` is the least
    version of triple X.
    """
    if not nums:
        return []
    full = len(nums) == 3
    start = _fmt(nums, pre) if full else _fmt(nums, "0")
    if op in (None, "^"):
        width = next((i + 1 for i, n in enumerate(nums) if n), len(nums))
        return [(">=", start), ("<", _bump(nums[:width]))]
    if op == "~":
        return [(">=", start), ("<", _bump(nums[:2]))]
    if op == "*":
        return [(">=", start), ("<", _bump(nums))]
    if full:
        return [({"=": "=="}.get(op, op), start)]
    if op == "=":
        return [(">=", start), ("<", _bump(nums))]
    if op == ">":
        return [(">=", _bump(nums))]
    if op == ">=":
        return [(">=", start)]
    if op == "<":
        return [("<", start)]
    if op == "<=":
        return [("<", _bump(nums))]
    raise ValueError(op)


def parse_clauses(text):
    out = []
    for clause in text.split(","):
        m = _COMP.match(clause)
        op, body = m.group(1), m.group(2)
        if body in ("*", "x", "X"):
            out.append(("*", [], None))
            continue
        nums, pre = _parse_partial(body)
        if op is None and any(p in ("*", "x", "X") for p in body.split(".")):
            op = "*"
        out.append((op, nums, pre))
    return out


def oracle_matches(req_text, version_text):
    clauses = parse_clauses(req_text)
    triple, pre = split_version(version_text)
    if pre:
        named = any(p and len(nums) == 3 and tuple(nums) == triple for _, nums, p in clauses)
        if not named:
            return False
    for op, nums, p in clauses:
        for prim, bound in _desugar(op, nums, p):
            c = cmp_versions(version_text, bound)
            ok = {"==": c == 0, ">": c > 0, ">=": c >= 0, "<": c < 0, "<=": c <= 0}[prim]
            if not ok:
                return False
    return True


# --- resolution -------------------------------------------------------------


def _feature_closure(vrec, requested, default):
    """Fixpoint over the feature table: (enabled deps, forwarded features)."""
    table = vrec.get("features", {})
    dep_names = {d["name"] for d in vrec.get("dependencies", [])}
    items = set(requested) | ({"default"} if default else set())
    while True:
        grown = set(items)
        for item in items:
            if item in table:
                grown |= set(table[item])
            if "/" in item and not item.split("/")[0].endswith("?"):
                grown.add(item.split("/")[0])
        if grown == items:
            break
        items = grown
    active = set()
    for item in items:
        if item.startswith("dep:"):
            active.add(item[4:])
        elif "/" in item:
            d = item.split("/")[0]
            if not d.endswith("?"):
                active.add(d)
        elif item in dep_names:
            active.add(item)
    forwarded = {}
    for item in items:
        if "/" in item and not item.startswith("dep:"):
            d, f = item.split("/", 1)
            d = d.rstrip("?")
            if d in active:
                forwarded.setdefault(d, set()).add(f)
    return active, forwarded


def oracle_select(registry, target, req, allow_yanked=False):
    """Filter every version by brute force, then take the maximum."""
    ok = [
        v["num"] for v in registry[target]["versions"]
        if (allow_yanked or not v.get("yanked") or req.strip() == "=" + v["num"]) and oracle_matches(req, v["num"])
    ]
    return max(ok, key=version_sort_key) if ok else None


def oracle_tree(registry, name, version, max_path=100, allow_yanked=False):
    """Recursive pre-order resolution; returns rows
    (name, version, parent, requirement, depth, flag)."""
    rows = []
    expanded = set()

    def vrec_of(n, v):
        return next(x for x in registry[n]["versions"] if x["num"] == v)

    def included(n, v, requested, default):
        rec = vrec_of(n, v)
        active, forwarded = _feature_closure(rec, requested, default)
        out = []
        for d in rec.get("dependencies", []):
            if d.get("kind", "normal") != "normal" or d["name"] not in registry:
                continue
            if d.get("optional") and d["name"] not in active:
                continue
            out.append((d, frozenset(d.get("features", [])) | frozenset(forwarded.get(d["name"], ()))))
        return out

    def visit(n, v, parent, req, depth, requested, default):
        kids = included(n, v, requested, default)
        if (n, v) in expanded:
            rows.append((n, v, parent, req, depth, "shared"))
            return
        if kids and depth >= max_path - 1:
            rows.append((n, v, parent, req, depth, "truncated"))
            return
        expanded.add((n, v))
        rows.append((n, v, parent, req, depth, None))
        me = len(rows) - 1
        for d, feats in kids:
            chosen = oracle_select(registry, d["name"], d["req"], allow_yanked)
            if chosen is None:
                rows.append((d["name"], None, me, d["req"], depth + 1, "unresolvable"))
                continue
            visit(d["name"], chosen, me, d["req"], depth + 1, feats, d.get("default_features", True))

    visit(name, version, None, None, 0, frozenset(), True)
    return rows


# --- propagation ------------------------------------------------------------


def oracle_propagation(registry, advisory_ranges, max_path=100):
    """Affected set by resolving every version in the registry.

    ``advisory_ranges`` maps package -> range text.  Returns
    (direct, {transitive version: shortest-then-smallest witness path}).
    """
    direct = {
        (n, v["num"])
        for n, rng in advisory_ranges.items() if n in registry
        for v in registry[n]["versions"] if oracle_matches(rng, v["num"])
    }
    transitive = {}
    for n, lib in registry.items():
        for v in lib["versions"]:
            if (n, v["num"]) in direct:
                continue
            rows = oracle_tree(registry, n, v["num"], max_path)
            paths = []
            for i, row in enumerate(rows):
                if i and row[1] is not None and (row[0], row[1]) in direct:
                    path, j = [], i
                    while j is not None:
                        path.append((rows[j][0], rows[j][1]))
                        j = rows[j][2]
                    path.reverse()
                    paths.append(path)
            if paths:
                transitive[(n, v["num"])] = min(paths, key=lambda p: (len(p), [(a, version_sort_key(b)) for a, b in p]))
    return direct, transitive
