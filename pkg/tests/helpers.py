"""Fixture builders shared by the test modules."""

import json
from pathlib import Path

from vulngraph.graph import build_graph
from vulngraph.ingest import parse_advisories, parse_registry


def dep(name, req, kind="normal", optional=False, default_features=True, features=()):
    return {
        "name": name,
        "req": req,
        "kind": kind,
        "optional": optional,
        "default_features": default_features,
        "features": list(features),
    }


def ver(num, deps=(), yanked=False, features=None):
    return {"num": num, "yanked": yanked, "features": features or {}, "dependencies": list(deps)}


def lib(name, versions, newest=None, **extra):
    versions = [v if isinstance(v, dict) else ver(v) for v in versions]
    rec = {
        "id": name,
        "name": name,
        "newest_version": newest or versions[-1]["num"],
        "versions": versions,
    }
    rec.update(extra)
    return rec


def adv(cve, package, rng, severity="HIGH", cvss=7.5, patched=None, cwe=None, published="2021-06-01T00:00:00Z"):
    rec = {
        "value": cve,
        "package_name": package,
        "vulnerableVersionRange": rng,
        "severity": severity,
        "cvss": cvss,
        "firstPatchedVersion": patched,
        "publishedAt": published,
    }
    if cwe is not None:
        rec["cwe_ids"] = list(cwe)
    return rec


def ndjson(records):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_ndjson(path: Path, records) -> Path:
    Path(path).write_text(ndjson(records), encoding="utf-8")
    return Path(path)


def make_graph(libs, advs=()):
    return build_graph(parse_registry(ndjson(libs)), parse_advisories(ndjson(advs)))


# --- named fixtures --------------------------------------------------------


def beef_fixture():
    """beef is vulnerable below 0.5.0.  An older audiotags pulls a vulnerable
    beef; allaudiotags pins the audiotags release that moved to 0.5."""
    libs = [
        lib("beef", ["0.4.4", "0.5.0"]),
        lib("audiotags", [
            ver("0.2.71", [dep("beef", "^0.4")]),
            ver("0.2.7182", [dep("beef", "^0.5")]),
        ]),
        lib("allaudiotags", [ver("0.1.0", [dep("audiotags", "=0.2.7182")])]),
    ]
    advs = [adv("CVE-2020-36442", "beef", "<0.5.0", severity="CRITICAL", cvss=9.8, patched="0.5.0")]
    return libs, advs


def rand_fixture():
    libs = [
        lib("rand", [ver("0.8.5", [
            dep("rand_core", "^0.6"),
            dep("rand_chacha", "^0.3", optional=True),
            dep("libc", "^0.2", optional=True, default_features=False),
            dep("rand_pcg", "^0.3", kind="dev"),
        ], features={
            "default": ["std", "std_rng"],
            "std": ["rand_core/std", "rand_chacha?/std", "alloc", "libc"],
            "alloc": ["rand_core/alloc"],
            "std_rng": ["rand_chacha"],
        })]),
        lib("rand_core", ["0.6.0", "0.6.3"]),
        lib("rand_chacha", [ver("0.3.1", [dep("rand_core", "^0.6.0"), dep("ppv-lite86", "^0.2.8")])]),
        lib("ppv-lite86", ["0.2.16"]),
        lib("libc", ["0.2.119"]),
        lib("rand_pcg", ["0.3.1"]),
    ]
    return libs, []


# --- random registries -----------------------------------------------------

_REQ_SHAPES = ("^{a}.{b}", "^{a}.{b}.{c}", "~{a}.{b}", "={a}.{b}.{c}", ">={a}.{b}, <{n}", "*", "{a}", "<{a}.{b}.{c}", ">{a}")


def random_requirement(rng):
    a, b, c = rng.randint(0, 2), rng.randint(0, 2), rng.randint(0, 2)
    return rng.choice(_REQ_SHAPES).format(a=a, b=b, c=c, n=a + 1)


def random_registry(rng, max_libs=6, max_versions=4, max_deps=3):
    """Small registry with cycles, optional and dev/build edges, feature
    tables and yanked releases."""
    names = [f"l{i}" for i in range(rng.randint(1, max_libs))]
    libs = []
    for name in names:
        nums = set()
        while len(nums) < rng.randint(1, max_versions):
            nums.add(f"{rng.randint(0, 2)}.{rng.randint(0, 2)}.{rng.randint(0, 2)}")
        versions = []
        for num in sorted(nums, key=lambda t: tuple(map(int, t.split(".")))):
            deps = []
            for _ in range(rng.randint(0, max_deps)):
                deps.append(dep(
                    rng.choice(names),
                    random_requirement(rng),
                    kind=rng.choice(["normal"] * 4 + ["dev", "build"]),
                    optional=rng.random() < 0.3,
                    default_features=rng.random() < 0.8,
                    features=["extra"] if rng.random() < 0.2 else [],
                ))
            optional = sorted({d["name"] for d in deps if d["optional"]})
            features = {"extra": []}
            if optional and rng.random() < 0.7:
                pick = rng.choice(optional)
                features["default"] = [rng.choice([pick, f"dep:{pick}", f"{pick}/extra", f"{pick}?/extra"])]
            if optional and rng.random() < 0.5:
                features["extra"] = [rng.choice(optional)]
            versions.append(ver(num, deps, yanked=rng.random() < 0.15, features=features))
        libs.append(lib(name, versions))
    return libs


def ten_library_fixture():
    """Ten libraries, three advisories, ground truth enumerated by hand in
    TEN_LIBRARY_TRUTH."""
    libs = [
        lib("vuln_a", ["0.1.0", "0.2.0"]),
        lib("vuln_b", [ver("1.0.0"), ver("1.1.0", yanked=True)], newest="1.1.0"),
        lib("dep1", [ver("1.0.0", [dep("vuln_a", "=0.1.0")])]),
        lib("dep2", [ver("0.1.0", [dep("vuln_a", "^0.1")]), ver("0.2.0", [dep("vuln_a", "^0.2")])]),
        lib("dep3", [ver("2.0.0", [dep("dep1", "^1")]), ver("2.1.0", [dep("dep1", "^1"), dep("leaf", "1")])]),
        lib("dep4", [ver("1.0.0", [dep("vuln_b", "^1")])]),
        lib("dev_user", [ver("1.0.0", [dep("vuln_a", "=0.1.0", kind="dev")])]),
        lib("opt_user", [ver("1.0.0", [dep("vuln_a", "^0.1", optional=True)])]),
        lib("quiet", ["0.3.0"]),
        lib("leaf", ["1.0.0"]),
    ]
    advs = [
        adv("CVE-2021-1001", "vuln_a", "<0.2.0", severity="HIGH", cvss=7.5, patched="0.2.0", cwe=["CWE-119"]),
        adv("CVE-2021-1002", "vuln_b", "=1.1.0", severity="CRITICAL", cvss=9.8, patched=None, cwe=["CWE-416", "CWE-119"]),
        adv("CVE-2021-1003", "quiet", "<0.1.0", severity="MODERATE", cvss=5.3, patched="0.1.0"),
    ]
    return libs, advs


# counted by hand from the fixture above
TEN_LIBRARY_TRUTH = {
    "total_libraries": 10,
    "total_versions": 14,
    # vuln_a@0.1.0 and vuln_b@1.1.0
    "directly_affected_libraries": 2,
    "directly_affected_versions": 2,
    # dep1@1.0.0, dep2@0.1.0, dep3@2.0.0, dep3@2.1.0
    "propagated_libraries": 3,
    "propagated_versions": 4,
    "library_ratio": 3 / 10,
    "version_ratio": 4 / 14,
    "severity": {"LOW": 0.0, "MODERATE": 1 / 3, "HIGH": 1 / 3, "CRITICAL": 1 / 3},
    # CVE-2021-1002 has no patched release
    "patchless": 1 / 3,
    # vuln_b's newest (1.1.0) is in range; vuln_a's (0.2.0) and quiet's (0.3.0) are not
    "latest_still_affected": 1 / 3,
    # ...and vuln_b 1.1.0 is yanked
    "yanked_latest": 1.0,
    "excluded": {
        "CVE-2021-1001": {("dep2", "0.2.0"): "resolved-version-outside-range",
                          ("opt_user", "1.0.0"): "dependency-not-included"},
        "CVE-2021-1002": {("dep4", "1.0.0"): "resolved-version-outside-range"},
        "CVE-2021-1003": {},
    },
}
