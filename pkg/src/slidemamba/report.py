"""Artifact emission: delimited outputs (metrics.json, folds.csv,
loss_curve.csv, fusion_trace.csv, scores.csv) and matplotlib figures
rendered alongside them under <outdir>/figures/.

JSON/CSV writing is deterministic: sorted keys, shortest round-trip float
repr, fixed column order.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def write_metrics_json(path, report, config: dict):
    doc = {
        "aggregate": report.aggregate,
        "folds": report.per_fold,
        "config": config,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path, rows: list[dict], columns: list[str]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


FOLD_COLUMNS = ["graph_path", "slide_id", "label", "fold"]
LOSS_COLUMNS = ["fold", "epoch", "train_loss", "val_ap"]
TRACE_COLUMNS = ["slide_id", "block", "h_sg", "h_mamba", "alpha"]
SCORE_COLUMNS = ["slide_id", "label", "score"]


def roc_points(scores, labels):
    """(fpr, tpr) arrays over descending score thresholds."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    y = np.asarray(labels, dtype=int)[order]
    tp = np.concatenate([[0], np.cumsum(y == 1)])
    fp = np.concatenate([[0], np.cumsum(y == 0)])
    n_pos = max(int((y == 1).sum()), 1)
    n_neg = max(int((y == 0).sum()), 1)
    return fp / n_neg, tp / n_pos


def pr_points(scores, labels):
    """(recall, precision) arrays over descending score thresholds."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    y = np.asarray(labels, dtype=int)[order]
    tp = np.cumsum(y == 1)
    ranks = np.arange(1, y.size + 1)
    n_pos = max(int((y == 1).sum()), 1)
    return tp / n_pos, tp / ranks


def render_training_figures(outdir, loss_rows, fold_scores, trace_rows):
    """Loss curves, per-fold ROC/PR curves, and alpha distributions."""
    figdir = os.path.join(outdir, "figures")
    os.makedirs(figdir, exist_ok=True)
    paths = []

    if loss_rows:
        folds = sorted({r["fold"] for r in loss_rows})
        fig, (ax_loss, ax_ap) = plt.subplots(1, 2, figsize=(9, 3.5))
        for f in folds:
            rows = [r for r in loss_rows if r["fold"] == f]
            epochs = [r["epoch"] for r in rows]
            ax_loss.plot(epochs, [r["train_loss"] for r in rows], label=f"fold {f}")
            ax_ap.plot(epochs, [r["val_ap"] for r in rows], label=f"fold {f}")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_ap.set_xlabel("epoch")
        ax_ap.set_ylabel("validation AP")
        ax_ap.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(figdir, "loss_curve.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    if fold_scores:
        fig, (ax_roc, ax_pr) = plt.subplots(1, 2, figsize=(9, 3.8))
        for f, (scores, labels) in enumerate(fold_scores):
            fpr, tpr = roc_points(scores, labels)
            rec, prec = pr_points(scores, labels)
            ax_roc.plot(fpr, tpr, label=f"fold {f}")
            ax_pr.plot(rec, prec, label=f"fold {f}")
        ax_roc.plot([0, 1], [0, 1], ls=":", c="gray", lw=0.8)
        ax_roc.set_xlabel("false positive rate")
        ax_roc.set_ylabel("true positive rate")
        ax_pr.set_xlabel("recall")
        ax_pr.set_ylabel("precision")
        ax_pr.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(figdir, "roc_pr.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    if trace_rows:
        blocks = sorted({r["block"] for r in trace_rows})
        data = [[r["alpha"] for r in trace_rows if r["block"] == b] for b in blocks]
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.boxplot(data, tick_labels=[f"block {b}" for b in blocks])
        ax.axhline(0.5, ls=":", c="gray", lw=0.8)
        ax.set_ylabel("fusion weight alpha")
        ax.set_ylim(-0.02, 1.02)
        fig.tight_layout()
        path = os.path.join(figdir, "fusion_alpha.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    return paths


def emit_training_artifacts(outdir, report, artifacts, plots: bool = True):
    """Write every delimited output (and figures unless disabled)."""
    write_metrics_json(os.path.join(outdir, "metrics.json"), report,
                       artifacts["config"])
    write_csv(os.path.join(outdir, "folds.csv"), artifacts["fold_rows"], FOLD_COLUMNS)
    write_csv(os.path.join(outdir, "loss_curve.csv"), artifacts["loss_rows"],
              LOSS_COLUMNS)
    if artifacts["trace_rows"]:
        write_csv(os.path.join(outdir, "fusion_trace.csv"),
                  artifacts["trace_rows"], TRACE_COLUMNS)
    if plots:
        render_training_figures(outdir, artifacts["loss_rows"],
                                artifacts["fold_scores"], artifacts["trace_rows"])
