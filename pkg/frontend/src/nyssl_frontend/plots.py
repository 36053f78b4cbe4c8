"""Figure scripts over run CSVs.

The delimited files are the entire contract: nothing here imports the core
library, so these renderers work on any artifacts with the same columns.
Three figure types: spectrum overlays (one curve per training variant),
influence bar charts, and ranked-landmark grids.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

FIG_KW = {"figsize": (6.4, 4.0), "dpi": 120}
GRID_COLUMNS = ("kernel_sim", "row_norm", "iota", "alignment", "score")


class PlotError(ValueError):
    pass


def _read_rows(path) -> tuple[dict, list]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise PlotError(f"cannot read {path}: {exc}") from None
    if len(rows) < 2:
        raise PlotError(f"no data rows in {path}")
    return {name: i for i, name in enumerate(rows[0])}, rows[1:]


def _column(col: dict, body: list, name: str, path, cast=float) -> list:
    if name not in col:
        raise PlotError(f"malformed CSV {path}: missing column {name!r}")
    try:
        return [cast(r[col[name]]) for r in body]
    except (ValueError, IndexError) as exc:
        raise PlotError(f"malformed CSV {path}: {exc}") from None


def plot_spectrum(csv_paths, out_png) -> None:
    """Log-scale eigenvalue-vs-index overlay, one labeled curve per CSV."""
    paths = [csv_paths] if isinstance(csv_paths, (str, Path)) else list(csv_paths)
    if not paths:
        raise PlotError("need at least one spectrum CSV")
    fig, ax = plt.subplots(**FIG_KW)
    for path in paths:
        col, body = _read_rows(path)
        idx = _column(col, body, "index", path, cast=int)
        evs = [max(ev, 1e-16) for ev in _column(col, body, "eigenvalue", path)]
        ax.semilogy(idx, evs, marker="o", markersize=3, label=Path(path).stem)
    ax.set_xlabel("component index")
    ax.set_ylabel("eigenvalue")
    ax.set_title("embedding spectrum")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def plot_influence(csv_path, out_png, top: int = 10) -> None:
    """Bar chart of the top ranked (landmark, influence) rows."""
    col, body = _read_rows(csv_path)
    body = body[:top]
    landmarks = _column(col, body, "landmark_id", csv_path, cast=str)
    iotas = _column(col, body, "iota", csv_path)
    fig, ax = plt.subplots(**FIG_KW)
    ax.bar(np.arange(len(body)), iotas)
    ax.set_xticks(np.arange(len(body)))
    ax.set_xticklabels(landmarks)
    ax.set_xlabel("landmark id")
    ax.set_ylabel("influence")
    ax.set_title(f"top-{len(body)} landmarks by influence")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def plot_landmark_grid(csv_path, out_png, top: int = 10) -> None:
    """Ranked-landmark table as a heat grid: one row per landmark, one
    column per populated score; cells annotated, columns scaled to [0, 1]
    independently so heat encodes within-column rank."""
    col, body = _read_rows(csv_path)
    body = body[:top]
    landmarks = _column(col, body, "landmark_id", csv_path, cast=str)
    columns = []
    values = []
    for name in GRID_COLUMNS:
        if name not in col or any(r[col[name]] == "" for r in body):
            continue
        columns.append(name)
        values.append(_column(col, body, name, csv_path))
    if not columns:
        raise PlotError(f"no populated score columns in {csv_path}")
    raw = np.array(values, dtype=np.float64).T  # rows = landmarks
    lo = raw.min(axis=0)
    span = np.where(raw.max(axis=0) > lo, raw.max(axis=0) - lo, 1.0)
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(columns), 0.9 + 0.45 * len(body)),
                           dpi=120)
    ax.imshow((raw - lo) / span, cmap="viridis", aspect="auto",
              vmin=0.0, vmax=1.0)
    for i in range(raw.shape[0]):
        for j in range(raw.shape[1]):
            ax.text(j, i, f"{raw[i, j]:.3g}", ha="center", va="center",
                    fontsize=8, color="white")
    ax.set_xticks(np.arange(len(columns)))
    ax.set_xticklabels(columns, rotation=30, ha="right")
    ax.set_yticks(np.arange(len(body)))
    ax.set_yticklabels([f"landmark {l}" for l in landmarks])
    ax.set_title("ranked landmarks")
    fig.tight_layout()
    fig.savefig(out_png)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nyssl-plots",
        description="Render pipeline CSV artifacts into figures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="eigenvalue overlay from one or more spectrum CSVs")
    p.add_argument("csvs", nargs="+", help="spectrum CSV paths, one curve each")
    p.add_argument("--out-png", required=True)

    p = sub.add_parser("influence", help="bar chart from an influence CSV")
    p.add_argument("csv")
    p.add_argument("--out-png", required=True)
    p.add_argument("--top", type=int, default=10)

    p = sub.add_parser("grid", help="ranked-landmark heat grid from an influence CSV")
    p.add_argument("csv")
    p.add_argument("--out-png", required=True)
    p.add_argument("--top", type=int, default=10)

    args = parser.parse_args(argv)
    try:
        if args.command == "spectrum":
            plot_spectrum(args.csvs, args.out_png)
        elif args.command == "influence":
            plot_influence(args.csv, args.out_png, top=args.top)
        else:
            plot_landmark_grid(args.csv, args.out_png, top=args.top)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out_png}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
