"""Result tables and figures.

A report page is a cells-by-features grid of "mean +/- std" entries, the
shape the study's result tables use, rendered three ways: CSV, Markdown,
and a grouped bar chart PNG saved next to the delimited output. Cells
sharing a group also get pooled average rows (mean/std over all seed
values of the group, the across-seeds-and-SNRs average).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluate import EvalReport, aggregate_seeds
from .filterbanks import FEATURE_NAMES, get_filterbank


@dataclass
class ReportTable:
    name: str
    features: tuple
    rows: list  # (row label, {feature -> (mean, std)})


def add_pooled_rows(reports: list[EvalReport]) -> list[EvalReport]:
    """Append per-group pooled averages and a grand pooled average.

    Pooling concatenates every seed value of the group's cells, so a
    six-cell group evaluated over 5 seeds averages 30 values.
    """
    out = list(reports)
    groups: dict[str, dict[str, list[float]]] = {}
    for r in reports:
        if r.group:
            groups.setdefault(r.group, {}).setdefault(r.feature_name, []).extend(r.values)
    for group, by_feature in groups.items():
        for feature, values in by_feature.items():
            mean, std = aggregate_seeds(values)
            out.append(
                EvalReport(f"{group}/avg", feature, (), tuple(values), mean, std, group="")
            )
    if len(groups) > 1:
        pooled: dict[str, list[float]] = {}
        for by_feature in groups.values():
            for feature, values in by_feature.items():
                pooled.setdefault(feature, []).extend(values)
        for feature, values in pooled.items():
            mean, std = aggregate_seeds(values)
            out.append(EvalReport("all/avg_all", feature, (), tuple(values), mean, std))
    return out


def build_table(name: str, reports: list[EvalReport], features=None) -> ReportTable:
    features = tuple(features) if features else tuple(
        sorted({r.feature_name for r in reports})
    )
    by_cell: dict[str, dict[str, tuple[float, float]]] = {}
    order: list[str] = []
    for r in reports:
        if r.cell_id not in by_cell:
            by_cell[r.cell_id] = {}
            order.append(r.cell_id)
        by_cell[r.cell_id][r.feature_name] = (r.mean, r.std)
    rows = [(cell, by_cell[cell]) for cell in order]
    return ReportTable(name, features, rows)


def _fmt(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


def render_markdown(table: ReportTable) -> str:
    lines = [f"### {table.name}", ""]
    lines.append("| train/test | " + " | ".join(table.features) + " |")
    lines.append("|---" * (len(table.features) + 1) + "|")
    for label, entries in table.rows:
        cells = [
            _fmt(*entries[f]) if f in entries else "—" for f in table.features
        ]
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_table_csv(table: ReportTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id"] + [f"{f}_mean" for f in table.features]
                        + [f"{f}_std" for f in table.features])
        for label, entries in table.rows:
            means = [repr(entries[f][0]) if f in entries else "" for f in table.features]
            stds = [repr(entries[f][1]) if f in entries else "" for f in table.features]
            writer.writerow([label] + means + stds)


def render_table_figure(table: ReportTable, path) -> None:
    """Grouped bar chart of the table: one bar group per cell, with std bars."""
    labels = [label for label, _ in table.rows]
    n_cells = len(labels)
    n_feats = len(table.features)
    width = 0.8 / max(n_feats, 1)
    x = np.arange(n_cells)

    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * n_cells + 2), 4.0))
    for j, feature in enumerate(table.features):
        means = [entries.get(feature, (np.nan, 0.0))[0] for _, entries in table.rows]
        stds = [entries.get(feature, (np.nan, 0.0))[1] for _, entries in table.rows]
        ax.bar(x + (j - (n_feats - 1) / 2) * width, means, width,
               yerr=stds, capsize=2, label=feature)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("ROCAUC")
    ax.set_ylim(0.0, 1.05)
    ax.axhline(0.5, color="grey", lw=0.8, ls="--")
    ax.set_title(table.name)
    ax.legend(fontsize=8, ncol=min(n_feats, 5))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_filterbank_gallery(path) -> None:
    """All five default banks as gain-vs-frequency line plots."""
    fig, axes = plt.subplots(len(FEATURE_NAMES), 1, figsize=(7, 2.0 * len(FEATURE_NAMES)),
                             sharex=True)
    for ax, feature in zip(axes, FEATURE_NAMES):
        fb = get_filterbank(feature)
        freqs = fb.spec.bin_freqs_hz()
        for row in fb.gains:
            ax.plot(freqs, row, lw=0.7)
        ax.set_ylabel(feature, fontsize=9)
    axes[-1].set_xlabel("frequency (Hz)")
    fig.suptitle("Filter bank gains over FFT bins")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(name: str, reports: list[EvalReport], out_dir,
                 features=None, with_filterbank_gallery: bool = True) -> dict:
    """Render one experiment's reports into CSV + Markdown + PNG files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pooled = add_pooled_rows(reports)
    table = build_table(name, pooled, features)

    csv_path = out_dir / f"{name}.csv"
    md_path = out_dir / f"{name}.md"
    fig_path = out_dir / f"{name}.png"
    write_table_csv(table, csv_path)
    md_path.write_text(render_markdown(table))
    render_table_figure(table, fig_path)
    written = {"csv": csv_path, "markdown": md_path, "figure": fig_path}
    if with_filterbank_gallery:
        gallery = out_dir / "filterbanks.png"
        render_filterbank_gallery(gallery)
        written["filterbanks"] = gallery
    return written
