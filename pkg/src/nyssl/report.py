"""Render run artifacts into figures plus a delimited summary.

Reads the CSVs a run directory accumulates (training curve, spectrum,
influence rankings) and writes PNG figures next to them, together with a
report_summary.csv indexing what was rendered. Matplotlib runs on the Agg
backend so reports work headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

FIG_KW = {"figsize": (6.4, 4.0), "dpi": 120}


class ReportError(ValueError):
    pass


def _read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ReportError(f"empty CSV: {path}")
    return rows[0], rows[1:]


def plot_loss_curve(report_csv, out_png) -> None:
    header, rows = _read_csv(report_csv)
    col = {name: i for i, name in enumerate(header)}
    epochs = [int(r[col["epoch"]]) for r in rows]
    losses = [float(r[col["loss"]]) for r in rows]
    fig, ax = plt.subplots(**FIG_KW)
    ax.plot(epochs, losses, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title("training curve")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def plot_spectrum_figure(spectrum_csv, out_png) -> None:
    header, rows = _read_csv(spectrum_csv)
    col = {name: i for i, name in enumerate(header)}
    idx = [int(r[col["index"]]) for r in rows]
    evs = [max(float(r[col["eigenvalue"]]), 1e-16) for r in rows]
    fig, ax = plt.subplots(**FIG_KW)
    ax.semilogy(idx, evs, marker="o", markersize=3)
    ax.set_xlabel("component index")
    ax.set_ylabel("eigenvalue")
    ax.set_title("coefficient spectrum")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def plot_influence_figure(influence_csv, out_png, top: int = 10) -> None:
    header, rows = _read_csv(influence_csv)
    col = {name: i for i, name in enumerate(header)}
    rows = rows[:top]
    if not rows:
        raise ReportError(f"no influence rows in {influence_csv}")
    landmarks = [r[col["landmark_id"]] for r in rows]
    iotas = [float(r[col["iota"]]) for r in rows]
    fig, ax = plt.subplots(**FIG_KW)
    ax.bar(np.arange(len(rows)), iotas)
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(landmarks)
    ax.set_xlabel("landmark id")
    ax.set_ylabel("influence")
    ax.set_title("top landmark influence")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def render_report(run_dir) -> list:
    """Render every known artifact present in run_dir; returns (name, path) pairs."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"run directory does not exist: {run_dir}")
    rendered = []
    jobs = [
        ("loss_curve", run_dir / "train_report.csv", plot_loss_curve, run_dir / "loss_curve.png"),
        ("spectrum", run_dir / "spectrum.csv", plot_spectrum_figure, run_dir / "spectrum.png"),
        ("influence", run_dir / "influence.csv", plot_influence_figure, run_dir / "influence.png"),
    ]
    for name, src, fn, dst in jobs:
        if src.exists():
            fn(src, dst)
            rendered.append((name, str(dst)))
    if not rendered:
        raise ReportError(f"no renderable artifacts found in {run_dir}")
    with open(run_dir / "report_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["figure", "path"])
        writer.writerows(rendered)
    return rendered
