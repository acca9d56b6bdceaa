"""Figures written next to the tabular reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .ingest import SEVERITIES  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    # fixed salt keeps SVG element ids stable between runs
    "svg.hashsalt": "vulngraph",
}

_SEVERITY_COLORS = {"LOW": "#9bbb59", "MODERATE": "#f2c14e", "HIGH": "#f78154", "CRITICAL": "#b33f40"}


def _save(fig, path: Path) -> Path:
    fmt = path.suffix.lstrip(".") or "svg"
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(path, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_severity(distribution, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        fractions = distribution.fractions
        bars = ax.bar(SEVERITIES, [fractions[s] for s in SEVERITIES],
                      color=[_SEVERITY_COLORS[s] for s in SEVERITIES])
        for bar, sev in zip(bars, SEVERITIES):
            ax.annotate(f"{fractions[sev]:.3f}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=8)
        ax.set_ylim(0, 1)
        ax.set_ylabel("share of advisories")
        ax.set_title(f"Severity (n={distribution.total})")
        return _save(fig, path)


def plot_cvss_histogram(histogram, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        lefts = [lo for lo, _, _ in histogram.bins()]
        ax.bar(lefts, histogram.counts, width=histogram.bin_width, align="edge",
               color="#4c72b0", edgecolor="white")
        if histogram.min_score is not None:
            ax.axvspan(histogram.min_score, histogram.max_score, color="#dddddd", zorder=0)
        ax.set_xlim(0, 10)
        ax.set_xlabel("CVSS score")
        ax.set_ylabel("advisories")
        ax.set_title("CVSS distribution")
        return _save(fig, path)


def plot_top_impact(rows: Sequence, path: Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 0.45 * max(len(rows), 1) + 1))
        labels = [f"{r.cve}\n({r.direct_library})" for r in rows][::-1]
        ax.barh(labels, [r.versions_reached for r in rows][::-1], color="#b33f40", label="versions")
        ax.barh(labels, [r.libraries_reached for r in rows][::-1], color="#4c72b0", label="libraries", height=0.4)
        ax.set_xlabel("dependents reached through propagation")
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)
