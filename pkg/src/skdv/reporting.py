"""Artifact emission: delimited CSV tables, JSON summaries, and matplotlib
figures rendered to files next to the data they plot."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["write_csv", "write_summary", "line_figure", "loglog_figure"]


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_summary(path, summary: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    try:
        import numpy as np
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.bool_,)):
            return bool(obj)
    except ImportError:
        pass
    raise TypeError(f"not JSON serializable: {type(obj)}")


def line_figure(path, x, curves: dict, xlabel: str, ylabel: str, title: str = "",
                yscale: str = "linear"):
    """Render labeled curves against a shared x axis to a PNG file."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for label, y in curves.items():
        ax.plot(x, y, label=label, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_yscale(yscale)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def loglog_figure(path, x, curves: dict, xlabel: str, ylabel: str, title: str = "",
                  reference_slope: float | None = None):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for label, y in curves.items():
        ax.loglog(x, y, "o-", label=label, lw=1.2)
    if reference_slope is not None and len(x) > 1:
        first = next(iter(curves.values()))
        ref = [first[0] * (xi / x[0]) ** reference_slope for xi in x]
        ax.loglog(x, ref, "k--", lw=0.8,
                  label=f"slope {reference_slope:g} reference")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
