"""Figure rendering for run directories.

Reads the delimited tables a run or sweep wrote and renders a PNG next to
each one.  Rendering is header-driven: any directory holding recognized
tables can be rendered, including ones assembled by hand.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .errors import UsageError  # noqa: E402


def _read_csv(path: str) -> tuple:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise UsageError(f"empty table {path}")
    return rows[0], rows[1:]


def _png_path(csv_path: str) -> str:
    return csv_path.rsplit(".", 1)[0] + ".png"


def render_breakdown(csv_path: str) -> str:
    header, rows = _read_csv(csv_path)
    names = [r[0] for r in rows]
    means = [float(r[1]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(rows) + 1.5))
    pos = np.arange(len(rows))[::-1]
    ax.barh(pos, means, color="#4878a8")
    ax.set_yticks(pos, names)
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("mean over kept paths")
    ax.set_title("Wealth accounts and decomposition terms")
    fig.tight_layout()
    out = _png_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_sweep(csv_path: str, summary: Optional[dict] = None) -> str:
    header, rows = _read_csv(csv_path)
    col = {name: i for i, name in enumerate(header)}
    values = np.array([float(r[col["value"]]) for r in rows])
    means = np.array([float(r[col["mean"]]) for r in rows])
    errs = np.array([float(r[col["stderr"]]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.errorbar(values, means, yerr=3.0 * errs, fmt="o", capsize=4,
                color="#203864", label="mean wealth (3 stderr bars)")
    label = "swept parameter"
    if summary and "sweep" in summary:
        sw = summary["sweep"]
        label = sw.get("parameter", label)
        poly = sw.get("poly")
        if poly:
            dense = np.linspace(values.min(), values.max(), 200)
            ax.plot(dense, np.polyval(poly, dense), "-", color="#b04a2f",
                    label=f"trend fit: {sw.get('verdict', '')}".strip())
    ax.set_xlabel(label)
    ax.set_ylabel("mean terminal wealth")
    ax.set_title("Parameter sweep")
    ax.legend()
    fig.tight_layout()
    out = _png_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_trace(csv_path: str) -> str:
    header, rows = _read_csv(csv_path)
    col = {name: i for i, name in enumerate(header)}
    data = {name: np.array([float(r[i]) for r in rows])
            for name, i in col.items()}
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(data["t"], data["S"], label="price S", color="#203864")
    ax.plot(data["t"], data["X"], label="signal X", color="#4878a8",
            alpha=0.8)
    ax.plot(data["t"], data["Y"], label="total demand Y", color="#9dbcd4",
            alpha=0.8)
    ax2 = ax.twinx()
    ax2.plot(data["t"], data["theta"], label="holdings", color="#b04a2f",
             linewidth=1.0)
    ax2.set_ylabel("holdings", color="#b04a2f")
    jump_path = csv_path.rsplit(".", 1)[0] + "_jumps.csv"
    if os.path.exists(jump_path):
        _, jrows = _read_csv(jump_path)
        for row in jrows:
            ax.axvline(float(row[0]), color="gray", linestyle=":",
                       linewidth=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("level")
    ax.set_title(os.path.basename(csv_path).rsplit(".", 1)[0])
    ax.legend(loc="upper left")
    fig.tight_layout()
    out = _png_path(csv_path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_dir(path: str) -> list:
    """Render a PNG beside every recognized table under ``path``."""
    if not os.path.isdir(path):
        raise UsageError(f"report: {path} is not a directory")
    summary = None
    summary_path = os.path.join(path, "summary.json")
    if os.path.exists(summary_path):
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
    written = []
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if name == "breakdown.csv":
            written.append(render_breakdown(full))
        elif name == "sweep.csv":
            written.append(render_sweep(full, summary))
        elif (name.startswith("trace_") and name.endswith(".csv")
              and not name.endswith("_jumps.csv")):
            written.append(render_trace(full))
    return written
