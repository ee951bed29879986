"""Report emission: JSON metric dumps, CSV tables and the matching figures.

Everything here writes files; nothing is interactive. The reliability table
has exactly one row per bin (empty bins keep their row with nan statistics),
so downstream tooling can rely on the row count. Figures are rendered to
PNG next to the delimited output with the Agg backend.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import BinningScheme, MetricReport, bin_edges, partition_from_bins
from .tensor import argmax_rows, as_labels, as_matrix


def write_reports_json(reports, path) -> None:
    payload = [r.to_dict() for r in reports]
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


# ---------------------------------------------------------------------------
# Reliability diagram data
# ---------------------------------------------------------------------------

def reliability_table(probs, labels, scheme: BinningScheme) -> list:
    """Per-bin rows: (bin_center, mean_confidence, accuracy, count)."""
    p = as_matrix(probs, "probs")
    y = as_labels(labels, p.shape[1])
    preds = argmax_rows(p)
    conf = p[np.arange(p.shape[0]), preds]
    correct = (preds == y).astype(np.float64)
    part = partition_from_bins(conf, scheme)
    edges = bin_edges(conf, scheme)
    rows = []
    for i in range(scheme.num_bins):
        mask = part.group_ids == i
        count = int(mask.sum())
        center = float((edges[i] + edges[i + 1]) / 2.0)
        if count:
            rows.append((center, float(conf[mask].mean()), float(correct[mask].mean()), count))
        else:
            rows.append((center, float("nan"), float("nan"), 0))
    return rows


def save_reliability_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "mean_confidence", "accuracy", "count"])
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def render_reliability_figure(rows_by_stage: dict, path) -> None:
    """Accuracy vs confidence per stage, with the identity diagonal."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", label="perfect")
    markers = {"before": "s", "after": "o"}
    for stage, rows in rows_by_stage.items():
        pts = [(c, a) for _, c, a, n in rows if n > 0]
        if not pts:
            continue
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker=markers.get(stage, "."), label=stage)
    ax.set_xlabel("mean confidence")
    ax.set_ylabel("accuracy")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Group composition (class fractions inside each learned group)
# ---------------------------------------------------------------------------

def group_composition(partitions, labels, num_classes: int) -> list:
    """Rows: (member, group, size, frac_class_0, ..., frac_class_M-1).

    Only nonempty groups get a row; per-row fractions sum to 1.
    """
    y = as_labels(labels, num_classes)
    rows = []
    for u, part in enumerate(partitions):
        for g in range(part.num_groups):
            mask = part.group_ids == g
            size = int(mask.sum())
            if size == 0:
                continue
            fracs = np.bincount(y[mask], minlength=num_classes) / size
            rows.append((u, g, size, *[float(f) for f in fracs]))
    return rows


def save_group_composition_csv(rows, num_classes: int, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["member", "group", "size"] + [f"frac_class_{u}" for u in range(num_classes)]
        )
        for row in rows:
            writer.writerow(
                list(row[:3]) + [repr(v) for v in row[3:]]
            )


def render_group_composition_figure(rows, num_classes: int, path, max_members: int = 2) -> None:
    """Stacked class-fraction bars for the first few members' groups."""
    members = sorted({r[0] for r in rows})[:max_members]
    if not members:
        return
    fig, axes = plt.subplots(1, len(members), figsize=(4 * len(members), 3.2), squeeze=False)
    cmap = plt.get_cmap("tab10" if num_classes <= 10 else "tab20")
    for ax, member in zip(axes[0], members):
        member_rows = [r for r in rows if r[0] == member]
        groups = [r[1] for r in member_rows]
        bottom = np.zeros(len(member_rows))
        for u in range(num_classes):
            heights = np.array([r[3 + u] for r in member_rows])
            ax.bar(
                range(len(groups)),
                heights,
                bottom=bottom,
                color=cmap(u % cmap.N),
                label=f"class {u}" if member == members[0] else None,
            )
            bottom += heights
        ax.set_xticks(range(len(groups)))
        ax.set_xticklabels([f"g{g}" for g in groups])
        ax.set_ylim(0, 1)
        ax.set_title(f"member {member}")
        ax.set_ylabel("class fraction")
    if num_classes <= 10:
        axes[0][0].legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Sweep summaries
# ---------------------------------------------------------------------------

def save_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "u", "lambda", "ece", "nll", "accuracy"])
        for row in rows:
            writer.writerow([row[0], row[1], repr(row[2])] + [repr(v) for v in row[3:]])


def render_sweep_figure(rows, path) -> None:
    """ECE against the partition count, one line per (K, lambda) setting."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    settings = sorted({(r[0], r[2]) for r in rows})
    for k, lam in settings:
        pts = sorted((r[1], r[3]) for r in rows if r[0] == k and r[2] == lam)
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="o",
            label=f"K={k}, lambda={lam:g}",
        )
    ax.set_xlabel("partitions")
    ax.set_ylabel("ece")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def metric_value(reports, name: str) -> float:
    for rep in reports:
        if rep.metric == name:
            return rep.value
    raise KeyError(name)
