"""Command-line entry point.

Every command writes its files under ``<out>/<command>/`` together with a
``manifest.json`` listing each file's sha256 and the digests of the inputs.
Exit codes: 0 success, 1 input or environment error, 2 validation failure
in strict mode.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from . import report
from .graph import build_graph, export_graph, graph_stats, validate_graph, write_build_report
from .ingest import (
    AdvisoryList,
    IngestError,
    Snapshot,
    ValidationError,
    advisories_to_ndjson,
    apply_changeset,
    incremental_update,
    load_advisories,
    load_registry,
    parse_advisories,
    parse_lockfile,
    parse_registry,
)
from .propagate import propagate_many, summarize, top_impact_table
from .resolve import NotFoundError, ResolveLimits, Resolver, tree_to_json, verify_against_lockfile
from .semver import SemverError, parse_version
from .stats import compute_report

log = logging.getLogger("vulngraph")

EXIT_OK, EXIT_INPUT, EXIT_INVALID = 0, 1, 2
DEFAULT_OUT = "vulngraph-out"


class InputError(Exception):
    """Bad arguments or unreadable inputs (exit code 1)."""


@dataclass(frozen=True)
class Config:
    """Resolved command options.

    Defaults: output directory from ``$VULNGRAPH_OUT`` or ``./vulngraph-out``,
    100 nodes per root-to-leaf path, 10^6 nodes per tree, lenient
    validation, yanked versions skipped, one worker process.
    """

    registry_path: Optional[Path]
    advisories_path: Optional[Path]
    output_dir: Path
    limits: ResolveLimits = ResolveLimits()
    strict: bool = False
    allow_yanked: bool = False
    jobs: int = 1
    fmt: str = "text"

    @classmethod
    def from_args(cls, args, need_registry=False, need_advisories=False) -> "Config":
        registry = Path(args.registry) if args.registry else None
        advisories = Path(args.advisories) if args.advisories else None
        if need_registry and registry is None:
            raise InputError("--registry is required for this command")
        if need_advisories and advisories is None:
            raise InputError("--advisories is required for this command")
        for path in (registry, advisories):
            if path is not None and not path.is_file():
                raise InputError(f"input file not found: {path}")
        if args.jobs < 1:
            raise InputError("--jobs must be at least 1")
        try:
            limits = ResolveLimits(max_nodes_per_path=args.max_path_nodes)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        out = Path(args.out or os.environ.get("VULNGRAPH_OUT") or DEFAULT_OUT)
        return cls(registry, advisories, out, limits, args.strict, args.allow_yanked, args.jobs, args.format)

    def command_dir(self, command: str) -> Path:
        path = self.output_dir / command
        path.mkdir(parents=True, exist_ok=True)
        return path

    def provenance(self, command: str, **params) -> dict:
        params.setdefault("strict", self.strict)
        params.setdefault("allow_yanked", self.allow_yanked)
        params.setdefault("max_path_nodes", self.limits.max_nodes_per_path)
        return report.provenance(
            command, {"registry": self.registry_path, "advisories": self.advisories_path}, **params
        )


def _load_inputs(cfg: Config):
    snapshot = load_registry(cfg.registry_path, cfg.strict) if cfg.registry_path else Snapshot({})
    advisories = load_advisories(cfg.advisories_path, cfg.strict) if cfg.advisories_path else AdvisoryList()
    return snapshot, advisories


def _graph(cfg: Config):
    snapshot, advisories = _load_inputs(cfg)
    return build_graph(snapshot, advisories), advisories


def _emit(text: str) -> None:
    sys.stdout.write(text)


# --- commands --------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = Config.from_args(args)
    if cfg.registry_path is None and cfg.advisories_path is None:
        raise InputError("give --registry and/or --advisories")
    out = cfg.command_dir("ingest")
    prov = cfg.provenance("ingest")
    files: List[Path] = []
    reports = []
    failed = False
    if cfg.registry_path:
        try:
            snap = load_registry(cfg.registry_path, cfg.strict)
            rep = snap.report
        except ValidationError as exc:
            rep, failed = exc.report, True
        else:
            path = out / "registry.ndjson"
            snap.write(path)
            files.append(path)
        reports.append(rep)
    if cfg.advisories_path:
        try:
            advs = load_advisories(cfg.advisories_path, cfg.strict)
            rep = advs.report
        except ValidationError as exc:
            rep, failed = exc.report, True
        else:
            path = out / "advisories.ndjson"
            path.write_text(advisories_to_ndjson(advs), encoding="utf-8")
            files.append(path)
        reports.append(rep)

    doc = {"ok": not failed, "reports": [r.to_dict() for r in reports]}
    files.append(report.write_json(out / "validation_report.json", doc, prov))
    report.write_manifest(out, "ingest", prov, files)

    if cfg.fmt == "json":
        _emit(report.dumps(doc))
    else:
        rows = [(r.source, r.accepted, len(r.failures)) for r in reports]
        render = report.text_table if cfg.fmt == "text" else report.csv_text
        _emit(render(("source", "accepted", "rejected"), rows))
        for r in reports:
            for f in r.failures:
                print(f"{r.source}:{f.line}: {f.message}", file=sys.stderr)
    return EXIT_INVALID if failed else EXIT_OK


def _read_state(state: Path, name: str):
    path = state / name
    return path.read_text(encoding="utf-8") if path.is_file() else None


def cmd_update(args) -> int:
    cfg = Config.from_args(args)
    if cfg.registry_path is None and cfg.advisories_path is None:
        raise InputError("give --registry and/or --advisories")
    state = cfg.command_dir("update")
    hashes_text = _read_state(state, "hashes.json")
    all_hashes = json.loads(hashes_text) if hashes_text else {}

    # compute every changeset before touching the stored state
    pending = []
    for kind, path, store in (
        ("registry", cfg.registry_path, "registry.ndjson"),
        ("advisories", cfg.advisories_path, "advisories.ndjson"),
    ):
        if path is None:
            continue
        old_text = _read_state(state, store)
        if kind == "registry":
            old = parse_registry(old_text, store) if old_text is not None else None
        else:
            old = parse_advisories(old_text, store) if old_text is not None else AdvisoryList()
        try:
            change = incremental_update(old, path.read_bytes(), all_hashes.get(kind))
        except ValidationError as exc:
            for f in exc.report.failures:
                print(f"{path}:{f.line}: {f.message}", file=sys.stderr)
            print(f"update aborted; stored {kind} snapshot left unchanged", file=sys.stderr)
            return EXIT_INPUT
        if change.kind != kind:
            raise InputError(f"{path} does not look like a {kind} feed")
        pending.append((kind, store, old, change))

    changesets = []
    for kind, store, old, change in pending:
        changesets.append(change)
        if change.empty and (state / store).is_file():
            continue
        new = apply_changeset(old, change)
        if kind == "registry":
            new.write(state / store)
        else:
            (state / store).write_text(advisories_to_ndjson(sorted(new, key=lambda a: a.key)), encoding="utf-8")
        all_hashes[kind] = change.hashes
    (state / "hashes.json").write_text(report.dumps(all_hashes), encoding="utf-8")

    prov = cfg.provenance("update")
    doc = {"changed": any(not c.empty for c in changesets), "changesets": [c.to_dict() for c in changesets]}
    files = [report.write_json(state / "changeset.json", doc, prov)]
    files += [state / n for n in ("registry.ndjson", "advisories.ndjson", "hashes.json") if (state / n).is_file()]
    report.write_manifest(state, "update", prov, files)

    if cfg.fmt == "json":
        _emit(report.dumps(doc))
    elif not doc["changed"]:
        _emit("no changes\n")
    else:
        rows = [(c.kind, len(c.added), len(c.modified), len(c.removed)) for c in changesets]
        render = report.text_table if cfg.fmt == "text" else report.csv_text
        _emit(render(("feed", "added", "modified", "removed"), rows))
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = Config.from_args(args)
    graph, _ = _graph(cfg)
    problems = validate_graph(graph)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_INVALID
    out = cfg.command_dir("build")
    prov = cfg.provenance("build")
    files = list(export_graph(graph, out))
    stats = graph_stats(graph)
    files.append(report.write_json(out / "stats.json", stats.to_dict(), prov))
    write_build_report(graph, out / "build_report.json")
    files.append(out / "build_report.json")
    report.write_manifest(out, "build", prov, files)

    if cfg.fmt == "json":
        _emit(report.dumps({"provenance": prov, **stats.to_dict()}))
    else:
        rows = list(stats.to_dict().items())
        if cfg.fmt == "text":
            _emit(report.text_table(("kind", "count"), rows, prov))
        else:
            _emit(report.csv_text(("kind", "count"), rows))
    return EXIT_OK


def cmd_resolve(args) -> int:
    cfg = Config.from_args(args, need_registry=True)
    graph, _ = _graph(cfg)
    if args.name not in graph.libraries:
        raise InputError(f"unknown library {args.name!r}")
    try:
        num = parse_version(args.version) if args.version else graph.libraries[args.name].newest
    except SemverError as exc:
        raise InputError(f"bad version {args.version!r}: {exc}") from exc
    resolver = Resolver(graph, cfg.limits, cfg.allow_yanked)
    try:
        tree = resolver.resolve(args.name, num)
    except NotFoundError as exc:
        raise InputError(exc.args[0]) from exc
    body = tree_to_json(tree)

    out = cfg.command_dir("resolve")
    prov = cfg.provenance("resolve", name=args.name, version=str(num))
    tree_path = Path(args.output) if args.output else out / f"{args.name}@{num}.json"
    tree_path.write_bytes(body)
    files = [tree_path] if tree_path.parent.resolve() == out.resolve() else []

    if args.verify_lock:
        lock_path = Path(args.verify_lock)
        if not lock_path.is_file():
            raise InputError(f"lockfile not found: {lock_path}")
        diff = verify_against_lockfile(tree, parse_lockfile(lock_path))
        prov["inputs"]["lockfile"] = {"file": lock_path.name, "sha256": report.file_digest(lock_path)}
        files.append(report.write_json(out / "lock_diff.json", diff.to_dict(), prov))
        report.write_manifest(out, "resolve", prov, files)
        if cfg.fmt == "json":
            _emit(report.dumps(diff.to_dict()))
        else:
            rows = [("tree-only", n, str(v), "") for n, v in diff.in_tree_only]
            rows += [("lock-only", n, "", str(v)) for n, v in diff.in_lock_only]
            rows += [("mismatch", n, str(t), str(l)) for n, t, l in diff.version_mismatch]
            render = report.text_table if cfg.fmt == "text" else report.csv_text
            _emit(render(("status", "name", "tree", "lock"), rows))
        return EXIT_OK

    report.write_manifest(out, "resolve", prov, files)
    if args.output:
        return EXIT_OK
    if cfg.fmt == "json":
        _emit(body.decode("utf-8"))
    else:
        rows = [
            ("  " * n.depth + n.name, "" if n.version is None else str(n.version), n.requirement or "",
             ",".join(f for f in ("shared", "unresolvable", "truncated") if getattr(n, f)))
            for n in tree.nodes
        ]
        render = report.text_table if cfg.fmt == "text" else report.csv_text
        _emit(render(("name", "version", "requirement", "flags"), rows))
    return EXIT_OK


def cmd_propagate(args) -> int:
    cfg = Config.from_args(args, need_registry=True, need_advisories=True)
    if bool(args.cve) == bool(args.all):
        raise InputError("give either a CVE id or --all")
    graph, _ = _graph(cfg)
    if args.cve and args.cve not in graph.cves:
        raise InputError(f"unknown advisory {args.cve}")
    cves = sorted(graph.cves) if args.all else [args.cve]
    results = propagate_many(graph, cves, cfg.limits, cfg.allow_yanked, cfg.jobs)
    eco = summarize(graph, results)
    top = top_impact_table(results, args.top)

    out = cfg.command_dir("propagate")
    prov = cfg.provenance("propagate", top=args.top, all=bool(args.all))
    header = ("cve", "direct_library", "libraries_reached", "versions_reached")
    rows = [(r.cve, r.direct_library, r.libraries_reached, r.versions_reached) for r in top]
    name = "results.json" if args.all else f"{args.cve}.json"
    files = [
        report.write_json(out / name, {"results": [r.to_dict() for r in results]}, prov),
        report.write_json(out / "ecosystem_stats.json", eco.to_dict(), prov),
        report.write_csv(out / "top_impact.csv", header, rows),
    ]
    (out / "top_impact.txt").write_text(report.text_table(header, rows, prov), encoding="utf-8")
    files.append(out / "top_impact.txt")
    if args.all and top:
        from .plotting import plot_top_impact

        files.append(plot_top_impact(top, out / "top_impact.svg"))
    report.write_manifest(out, "propagate", prov, files)

    if cfg.fmt == "json":
        doc = results[0].to_dict() if not args.all else {"ecosystem": eco.to_dict(), "top": [r.to_dict() for r in top]}
        _emit(report.dumps(doc))
    elif cfg.fmt == "csv":
        _emit(report.csv_text(header, rows))
    else:
        _emit(report.text_table(header, rows, prov))
        e = eco
        _emit(
            f"\ndirectly affected: {e.directly_affected_libraries} libraries, {e.directly_affected_versions} versions\n"
            f"propagated:        {e.propagated_libraries} libraries ({e.library_ratio:.2%}), "
            f"{e.propagated_versions} versions ({e.version_ratio:.2%})\n"
        )
        if e.truncated:
            _emit("note: some trees hit the resolution limits; counts are lower bounds\n")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = Config.from_args(args, need_advisories=True)
    graph, advisories = _graph(cfg)
    rep = compute_report(graph, advisories, args.bin_width, args.top)

    out = cfg.command_dir("stats")
    prov = cfg.provenance("stats", bin_width=args.bin_width, top=args.top)
    files = [report.write_json(out / "stats.json", rep.to_dict(), prov)]
    sev_rows = [(s, rep.severity.counts[s], rep.severity.fractions[s]) for s in rep.severity.counts]
    files.append(report.write_csv(out / "severity.csv", ("severity", "count", "fraction"), sev_rows))
    files.append(report.write_csv(out / "cvss_histogram.csv", ("low", "high", "count"), rep.histogram.bins()))
    files.append(report.write_csv(out / "cwe_top.csv", ("cwe", "description", "count"), rep.cwe.rows))
    latest_rows = [
        (r.cve, r.library, r.range, r.latest_version, r.published_at or "", r.yanked) for r in rep.latest.rows
    ]
    files.append(report.write_csv(
        out / "latest_affected.csv", ("cve", "library", "range", "latest_version", "published_at", "yanked"),
        latest_rows,
    ))

    from .plotting import plot_cvss_histogram, plot_severity

    files.append(plot_severity(rep.severity, out / "severity.svg"))
    files.append(plot_cvss_histogram(rep.histogram, out / "cvss_histogram.svg"))
    report.write_manifest(out, "stats", prov, files)

    if cfg.fmt == "json":
        _emit(report.dumps({"provenance": prov, **rep.to_dict()}))
    elif cfg.fmt == "csv":
        _emit(report.csv_text(("severity", "count", "fraction"), sev_rows))
    else:
        if rep.empty:
            _emit("no advisories: report is empty\n")
        _emit(report.text_table(("severity", "count", "fraction"), sev_rows, prov))
        _emit(
            f"\nadvisories without a patched version: {rep.patchless:.2%}\n"
            f"libraries whose newest release is still affected: {rep.latest.fraction:.2%} "
            f"({len(rep.latest.still_affected)}/{rep.latest.libraries_with_advisories})\n"
            f"  of those, newest release yanked: {rep.yanked_latest:.2%}\n"
        )
    return EXIT_OK


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--registry", help="registry snapshot (NDJSON, one library per line)")
    common.add_argument("--advisories", help="advisory snapshot (NDJSON, one advisory per line)")
    common.add_argument("--out", help="output directory (default: $VULNGRAPH_OUT or ./vulngraph-out)")
    common.add_argument("--strict", action="store_true", help="fail on the first invalid record set")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for propagation")
    common.add_argument("--max-path-nodes", type=int, default=100, help="node cap per root-to-leaf path")
    common.add_argument("--allow-yanked", action="store_true", help="let yanked versions satisfy requirements")
    common.add_argument("--format", choices=("json", "csv", "text"), default="text", help="stdout format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vulngraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate and normalize snapshots")
    p.set_defaults(func=cmd_ingest)
    p = sub.add_parser("update", parents=[common], help="diff fresh feeds against the stored snapshot")
    p.set_defaults(func=cmd_update)
    p = sub.add_parser("build", parents=[common], help="build the graph and export CSV")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("resolve", parents=[common], help="resolve one version's dependency tree")
    p.add_argument("name")
    p.add_argument("version", nargs="?", help="defaults to the newest version")
    p.add_argument("--output", help="write the tree JSON here instead of stdout")
    p.add_argument("--verify-lock", metavar="CARGO_LOCK", help="compare the tree with a lockfile")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("propagate", parents=[common], help="propagate advisories to dependents")
    p.add_argument("cve", nargs="?")
    p.add_argument("--all", action="store_true", help="every advisory in the snapshot")
    p.add_argument("--top", type=int, default=10, help="rows in the top-impact table")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("stats", parents=[common], help="advisory and ecosystem statistics")
    p.add_argument("--bin-width", type=float, default=0.5, help="CVSS histogram bin width")
    p.add_argument("--top", type=int, default=10, help="CWE classes to rank")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        for f in exc.report.failures:
            print(f"{exc.report.source}:{f.line}: {f.message}", file=sys.stderr)
        return EXIT_INVALID
    except (InputError, IngestError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
