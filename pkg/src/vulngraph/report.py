"""Writers for JSON / CSV / aligned-text outputs and the per-command manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

from . import __version__


def file_digest(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def provenance(command: str, inputs: Mapping[str, Optional[Path]], **params) -> dict:
    """Input digests for an output header; file names only, so output is
    independent of where the inputs live."""
    doc = {"tool": "vulngraph", "tool_version": __version__, "command": command, "inputs": {}}
    for label, path in sorted(inputs.items()):
        if path is not None:
            doc["inputs"][label] = {"file": Path(path).name, "sha256": file_digest(path)}
    if params:
        doc["parameters"] = params
    return doc


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Path, doc, prov: Optional[dict] = None) -> Path:
    if prov is not None:
        doc = {"provenance": prov, **doc}
    path.write_text(dumps(doc), encoding="utf-8")
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))
    return path


def text_table(header: Sequence[str], rows: Iterable[Sequence], prov: Optional[dict] = None) -> str:
    rows = [[_cell(c) for c in r] for r in rows]
    widths = [len(h) for h in header]
    for r in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, r)]
    lines = []
    if prov is not None:
        digests = ", ".join(f"{k}={v['sha256'][:12]}" for k, v in prov["inputs"].items())
        lines.append(f"# {prov['command']}  inputs: {digests or 'none'}")
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.rjust(w) if _numeric(c) else c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _numeric(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_manifest(out_dir: Path, command: str, prov: dict, files: Iterable[Path]) -> Path:
    entries: List[Dict[str, str]] = []
    for path in sorted(set(files)):
        entries.append({"file": path.name, "sha256": file_digest(path)})
    doc = {"provenance": prov, "command": command, "files": entries}
    return write_json(out_dir / "manifest.json", doc)
