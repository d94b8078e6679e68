"""Figures written next to the tab-separated outputs. Uses the non-interactive Agg backend."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({"figure.figsize": (5.0, 3.4), "axes.linewidth": 0.6, "font.size": 9,
                     "axes.spines.top": False, "axes.spines.right": False, "savefig.dpi": 120})


def _rows(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def embedding_loss(loss_tsv, out) -> Path:
    rows = _rows(loss_tsv)
    fig, ax = plt.subplots()
    for graph in sorted({r["graph"] for r in rows}):
        pts = [(int(r["epoch"]), float(r["loss"])) for r in rows if r["graph"] == graph]
        ax.plot(*zip(*pts), marker=".", label=f"{graph} graph")
    ax.set_xlabel("epoch")
    ax.set_ylabel("co-occurrence loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    return _save(fig, out)


def training_loss(log_tsv, out) -> Path:
    rows = _rows(log_tsv)
    fig, ax = plt.subplots()
    ax.plot([int(r["epoch"]) for r in rows], [float(r["mean_loss"]) for r in rows], marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean BCE per example")
    return _save(fig, out)


def metrics_by_cutoff(report, out, baseline=None) -> Path:
    fig, ax = plt.subplots()
    ks = report.cutoffs
    ax.plot(ks, [report.hr[k] for k in ks], "o-", label="HR (model)")
    ax.plot(ks, [report.ndcg[k] for k in ks], "s-", label="NDCG (model)")
    if baseline is not None:
        ax.plot(ks, [baseline.hr[k] for k in ks], "o--", color="grey", label="HR (popularity)")
        ax.plot(ks, [baseline.ndcg[k] for k in ks], "s--", color="silver", label="NDCG (popularity)")
    ax.set_xticks(ks)
    ax.set_xlabel("cutoff K")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=7)
    return _save(fig, out)


def rank_histogram(report, out) -> Path:
    ranks = np.array([r for _, _, r in report.details])
    fig, ax = plt.subplots()
    if ranks.size:
        ax.hist(ranks, bins=np.arange(1, ranks.max() + 2) - 0.5, color="steelblue")
    ax.set_xlabel("rank of held-out item")
    ax.set_ylabel("users")
    return _save(fig, out)


def ablation(reports: dict, out, k: int = 10) -> Path:
    names = list(reports)
    fig, ax = plt.subplots()
    x = np.arange(len(names))
    ax.bar(x - 0.2, [reports[n].hr[k] for n in names], 0.4, label=f"HR@{k}")
    ax.bar(x + 0.2, [reports[n].ndcg[k] for n in names], 0.4, label=f"NDCG@{k}")
    ax.set_xticks(x, names, rotation=20, fontsize=7)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    return _save(fig, out)


def sweep(axis: str, reports: dict, out, k: int = 10) -> Path:
    values = list(reports)
    fig, ax = plt.subplots()
    ax.plot(range(len(values)), [reports[v].hr[k] for v in values], "o-", label=f"HR@{k}")
    ax.plot(range(len(values)), [reports[v].ndcg[k] for v in values], "s-", label=f"NDCG@{k}")
    ax.set_xticks(range(len(values)), [str(v) for v in values])
    ax.set_xlabel(axis)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    return _save(fig, out)
