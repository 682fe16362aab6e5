"""Publication-style plots for renyi-qkd CSV result files.

One figure per producing subcommand: `fig2` draws the trusted-noise gain
against the Renyi order (sweep-alpha), `fig3` the optimal-flip heatmap
with a red no-key region (heatmap), `fig4` certified rates against block
size (rate-vs-m), and `fig5` tolerable-QBER thresholds against block size
(max-qber).  Every plotted number is taken verbatim from the CSV; nothing
is recomputed here.

Rendering is deterministic: the same CSV and options produce byte-identical
image files.  PDF date metadata is suppressed and all styling is fixed, so
image hashes are stable across reruns.

Exit codes: 0 success, 2 bad input or schema mismatch, 3 output failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import ListedColormap


class RenderError(Exception):
    """Unusable input: schema mismatch, empty file, or malformed cells."""


class OutputError(Exception):
    """The figure could not be written to the requested path."""


FIGURE_IDS = ("fig2", "fig3", "fig4", "fig5")

# Column sets as written by the matching renyi-qkd subcommand, in order.
SCHEMAS: dict[str, tuple[str, ...]] = {
    "fig2": ("alpha", "delta_r", "p_at_max"),
    "fig3": ("alpha", "p", "q_star", "rate", "forbidden"),
    "fig4": ("m", "rate_q0", "rate_qstar", "q_star", "alpha_star"),
    "fig5": ("m", "pmax_q0", "pmax_qstar"),
}

# Fixed styling keeps output byte-stable; user matplotlibrc is ignored.
_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 100.0,
    "savefig.dpi": 150.0,
    "legend.framealpha": 0.9,
}

_NO_KEY_COLOR = "red"


@dataclass(frozen=True)
class FigureSpec:
    """What to draw, from which CSV, and where to put the image."""

    input_csv: str
    figure_id: str
    output_image: str
    png: bool = False
    annotate: bool = True
    log_x: bool | None = None  # None = the figure's own default
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None


def load_rows(path: str, figure_id: str) -> list[dict[str, str]]:
    """Read one result CSV and enforce the producing subcommand's schema."""
    if figure_id not in SCHEMAS:
        raise RenderError(f"unknown figure id {figure_id!r}")
    schema = SCHEMAS[figure_id]
    try:
        with open(path, newline="") as handle:
            reader = csv.DictReader(handle)
            fields = tuple(reader.fieldnames or ())
            for column in schema:
                if column not in fields:
                    raise RenderError(
                        f"{path}: missing column {column!r} required for {figure_id}"
                    )
            for column in fields:
                if column not in schema:
                    raise RenderError(
                        f"{path}: unexpected column {column!r} for {figure_id}"
                    )
            rows = list(reader)
    except OSError as exc:
        raise RenderError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise RenderError(f"{path}: zero data rows")
    return rows


def _cell(row: dict[str, str], column: str, path: str) -> float:
    raw = row.get(column)
    if raw is None or raw.strip() == "":
        raise RenderError(f"{path}: empty value in column {column!r}")
    try:
        return float(raw)
    except ValueError as exc:
        raise RenderError(f"{path}: bad value {raw!r} in column {column!r}") from exc


def _edges(centers: np.ndarray) -> np.ndarray:
    """Cell edges at midpoints; end cells keep their neighbor's width."""
    if centers.size == 1:
        half = max(0.05 * abs(float(centers[0])), 0.05)
        return np.array([centers[0] - half, centers[0] + half])
    mids = 0.5 * (centers[:-1] + centers[1:])
    first = centers[0] - (mids[0] - centers[0])
    last = centers[-1] + (centers[-1] - mids[-1])
    return np.concatenate([[first], mids, [last]])


def _apply_window(ax: plt.Axes, spec: FigureSpec) -> None:
    if spec.xlim is not None:
        ax.set_xlim(spec.xlim)
    if spec.ylim is not None:
        ax.set_ylim(spec.ylim)


def build_fig2(
    rows: list[dict[str, str]], spec: FigureSpec
) -> tuple[plt.Figure, dict]:
    """Largest trusted-noise gain per order, peak QBER printed above."""
    path = spec.input_csv
    points = sorted(
        (
            _cell(row, "alpha", path),
            _cell(row, "delta_r", path),
            _cell(row, "p_at_max", path),
        )
        for row in rows
    )
    alphas = [a for a, _, _ in points]
    deltas = [d for _, d, _ in points]
    peaks = [p for _, _, p in points]

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(alphas, deltas, marker="o", color="#1f77b4", linewidth=1.5)
    annotations = 0
    if spec.annotate:
        # headroom so the labels above the top points stay inside the axes
        ax.margins(y=0.15)
        for alpha, delta, peak in zip(alphas, deltas, peaks):
            ax.annotate(
                f"{peak:g}",
                (alpha, delta),
                xytext=(0, 7),
                textcoords="offset points",
                ha="center",
                fontsize=8,
            )
            annotations += 1
    ax.set_xlabel("Renyi order α")
    ax.set_ylabel("largest gain from trusted noise Δr")
    _apply_window(ax, spec)
    return fig, {"points": len(points), "annotations": annotations}


def build_fig3(
    rows: list[dict[str, str]], spec: FigureSpec
) -> tuple[plt.Figure, dict]:
    """Optimal flip probability over (order, QBER); no-key cells in red."""
    path = spec.input_csv
    parsed = []
    for row in rows:
        alpha = _cell(row, "alpha", path)
        p = _cell(row, "p", path)
        rate = _cell(row, "rate", path)
        flag = (row.get("forbidden") or "").strip()
        if flag not in ("0", "1"):
            raise RenderError(f"{path}: bad value {flag!r} in column 'forbidden'")
        forbidden = flag == "1"
        if forbidden != (rate <= 0.0):
            raise RenderError(
                f"{path}: forbidden flag disagrees with rate at "
                f"alpha={alpha:g}, p={p:g}"
            )
        q_star = np.nan if forbidden else _cell(row, "q_star", path)
        parsed.append((alpha, p, q_star, forbidden))

    alphas = np.array(sorted({a for a, _, _, _ in parsed}))
    ps = np.array(sorted({p for _, p, _, _ in parsed}))
    index_a = {a: i for i, a in enumerate(alphas)}
    index_p = {p: j for j, p in enumerate(ps)}
    q_grid = np.full((ps.size, alphas.size), np.nan)
    forb = np.zeros((ps.size, alphas.size), dtype=bool)
    seen = np.zeros((ps.size, alphas.size), dtype=bool)
    for alpha, p, q_star, forbidden in parsed:
        j, i = index_p[p], index_a[alpha]
        if seen[j, i]:
            raise RenderError(f"{path}: duplicate cell alpha={alpha:g}, p={p:g}")
        seen[j, i] = True
        q_grid[j, i] = q_star
        forb[j, i] = forbidden
    if not seen.all():
        j, i = np.argwhere(~seen)[0]
        raise RenderError(
            f"{path}: incomplete grid, missing cell alpha={alphas[i]:g}, p={ps[j]:g}"
        )

    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    ax.grid(False)
    x_edges = _edges(alphas)
    y_edges = _edges(ps)
    allowed = np.ma.masked_where(forb, q_grid)
    mesh = ax.pcolormesh(x_edges, y_edges, allowed, cmap="viridis", shading="flat")
    # the no-key overlay masks everything except the forbidden cells, so the
    # number of drawn red cells equals the number of forbidden rows exactly
    no_key = np.ma.masked_where(~forb, np.zeros_like(q_grid))
    red = ax.pcolormesh(
        x_edges,
        y_edges,
        no_key,
        cmap=ListedColormap([_NO_KEY_COLOR]),
        vmin=0.0,
        vmax=1.0,
        shading="flat",
    )
    fig.colorbar(mesh, ax=ax, label="optimal flip probability q*")
    ax.set_xlabel("Renyi order α")
    ax.set_ylabel("channel QBER p")
    _apply_window(ax, spec)
    return fig, {
        "cells": int(seen.size),
        "red_cells": int(forb.sum()),
        "orders": int(alphas.size),
        "qbers": int(ps.size),
        "quadmesh": mesh,
        "red_mesh": red,
    }


def build_fig4(
    rows: list[dict[str, str]], spec: FigureSpec
) -> tuple[plt.Figure, dict]:
    """Certified rate against block size, with and without trusted noise."""
    path = spec.input_csv
    data = sorted(
        (
            _cell(row, "m", path),
            _cell(row, "rate_q0", path),
            _cell(row, "rate_qstar", path),
        )
        for row in rows
    )
    ms = [m for m, _, _ in data]
    plain = [r for _, r, _ in data]
    tuned = [r for _, _, r in data]

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(ms, plain, marker="s", color="#7f7f7f", label="no trusted noise (q = 0)")
    ax.plot(ms, tuned, marker="o", color="#1f77b4", label="optimized trusted noise q*")
    if spec.log_x is not False:
        ax.set_xscale("log")
    ax.set_xlabel("sifted block size m")
    ax.set_ylabel("certified secret-key rate")
    ax.legend(loc="upper left")
    _apply_window(ax, spec)
    return fig, {"points": len(data)}


def build_fig5(
    rows: list[dict[str, str]], spec: FigureSpec
) -> tuple[plt.Figure, dict]:
    """Largest tolerable QBER against block size, for both noise modes."""
    path = spec.input_csv
    data = sorted(
        (
            _cell(row, "m", path),
            _cell(row, "pmax_q0", path),
            _cell(row, "pmax_qstar", path),
        )
        for row in rows
    )
    ms = [m for m, _, _ in data]
    plain = [p for _, p, _ in data]
    tuned = [p for _, _, p in data]

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(ms, plain, marker="s", color="#7f7f7f", label="without trusted noise")
    ax.plot(ms, tuned, marker="o", color="#1f77b4", label="with trusted noise")
    if spec.log_x is not False:
        ax.set_xscale("log")
    ax.set_xlabel("sifted block size m")
    ax.set_ylabel("maximum tolerable QBER")
    ax.legend(loc="lower right")
    _apply_window(ax, spec)
    return fig, {"points": len(data)}


_BUILDERS = {
    "fig2": build_fig2,
    "fig3": build_fig3,
    "fig4": build_fig4,
    "fig5": build_fig5,
}


def render(spec: FigureSpec) -> dict:
    """Draw one figure and write it; returns plotted-data facts for checks."""
    rows = load_rows(spec.input_csv, spec.figure_id)
    with matplotlib.rc_context(_RC):
        fig, info = _BUILDERS[spec.figure_id](rows, spec)
        try:
            if spec.png:
                # constant text chunk instead of the library version string
                fig.savefig(
                    spec.output_image,
                    format="png",
                    metadata={"Software": "qkd-figures"},
                )
            else:
                # dropping the date entries makes reruns byte-identical
                fig.savefig(
                    spec.output_image,
                    format="pdf",
                    metadata={"CreationDate": None},
                )
        except OSError as exc:
            raise OutputError(f"cannot write {spec.output_image}: {exc}") from exc
        finally:
            plt.close(fig)
    return info


def _parse_pair(text: str) -> tuple[float, float]:
    parts = [token for token in text.replace(" ", "").split(",") if token]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from exc
    return lo, hi


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkd-figures",
        description="Render publication figures from renyi-qkd CSV files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    rend = sub.add_parser("render", help="draw one figure from one CSV")
    rend.add_argument("--figure", required=True, choices=FIGURE_IDS)
    rend.add_argument(
        "--in", dest="input_csv", required=True, metavar="DATA_CSV",
        help="CSV written by the matching renyi-qkd subcommand",
    )
    rend.add_argument(
        "--out", dest="output_image", required=True, metavar="IMAGE",
        help="output image path (vector PDF unless --png)",
    )
    rend.add_argument(
        "--png", action="store_true",
        help="write a raster PNG instead of the default vector PDF",
    )
    rend.add_argument(
        "--no-annotate", action="store_true",
        help="fig2: leave out the peak-QBER labels above the points",
    )
    rend.add_argument(
        "--linear-x", action="store_true",
        help="fig4/fig5: linear block-size axis instead of log",
    )
    rend.add_argument(
        "--xlim", type=_parse_pair, default=None, metavar="LO,HI",
        help="override the horizontal axis range",
    )
    rend.add_argument(
        "--ylim", type=_parse_pair, default=None, metavar="LO,HI",
        help="override the vertical axis range",
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return 0 if exc.code in (0, None) else 2
    spec = FigureSpec(
        input_csv=args.input_csv,
        figure_id=args.figure,
        output_image=args.output_image,
        png=args.png,
        annotate=not args.no_annotate,
        log_x=False if args.linear_x else None,
        xlim=args.xlim,
        ylim=args.ylim,
    )
    try:
        render(spec)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
