"""Delimited output and the figures rendered alongside it.

Every CLI command that writes a metrics CSV also renders a PNG next to it
(unless figures are disabled). CSV files open with a single timestamp
comment line; comparisons for reproducibility skip that line.
"""

import csv
import datetime

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _stamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def write_csv(path, header: list, rows: list, timestamp: bool = True) -> None:
    """UTF-8 comma-separated output; None becomes an empty cell."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        if timestamp:
            f.write(f"# generated_at={_stamp()}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def read_csv(path) -> tuple[list, list]:
    """Header and row dicts of a CSV written by :func:`write_csv`."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [dict(zip(header, row)) for row in reader]


def csv_body(path) -> str:
    """File content with comment lines removed, for byte comparisons."""
    with open(path, "r", encoding="utf-8") as f:
        return "".join(ln for ln in f if not ln.startswith("#"))


def training_figure(log, path) -> None:
    """Loss, accuracy, damping, and sensitivity extrema over training."""
    rows = log.rows
    if not rows:
        return
    steps = np.arange(len(rows))
    loss = [r.loss for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    axes[0, 0].plot(steps, loss, lw=0.8)
    axes[0, 0].set_xlabel("step")
    axes[0, 0].set_ylabel("batch loss")

    epochs = sorted({r.epoch for r in rows})
    acc = [next(r.train_acc for r in rows if r.epoch == e) for e in epochs]
    axes[0, 1].plot(epochs, acc, marker="o", ms=3)
    axes[0, 1].set_xlabel("epoch")
    axes[0, 1].set_ylabel("train accuracy")
    axes[0, 1].set_ylim(0, 1.02)

    if rows[0].gamma is not None:
        axes[1, 0].plot(steps, [r.gamma for r in rows], label="gamma")
        axes[1, 0].plot(steps, [r.alpha for r in rows], label="alpha")
        axes[1, 0].set_xlabel("step")
        axes[1, 0].legend(fontsize=8)
    if rows[0].bsm_max is not None:
        bmax = [next(r.bsm_max for r in rows if r.epoch == e) for e in epochs]
        bmin = [next(r.bsm_min for r in rows if r.epoch == e) for e in epochs]
        axes[1, 1].plot(epochs, bmax, label="max norm")
        axes[1, 1].plot(epochs, bmin, label="min norm")
        axes[1, 1].axhline(1.0, color="k", lw=0.6, ls="--")
        axes[1, 1].set_xlabel("epoch")
        axes[1, 1].set_ylabel("sensitivity norm")
        axes[1, 1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def decision_regions_figure(spec, features, labels, path, margin: float = 0.8) -> None:
    """Predicted class over a 2D grid with the dataset scattered on top."""
    from .data import _predict

    x0 = np.linspace(features[:, 0].min() - margin, features[:, 0].max() + margin, 160)
    x1 = np.linspace(features[:, 1].min() - margin, features[:, 1].max() + margin, 160)
    gx, gy = np.meshgrid(x0, x1)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    pred = _predict(spec, grid).reshape(gx.shape)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.contourf(gx, gy, pred, levels=np.arange(-0.5, pred.max() + 1), cmap="coolwarm", alpha=0.35)
    ax.scatter(features[:, 0], features[:, 1], c=labels, cmap="coolwarm", edgecolors="k", s=40)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def accuracy_bars_figure(names: list, means: list, errs: list, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = np.arange(len(names))
    ax.bar(pos, means, yerr=errs, capsize=3, color="steelblue")
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def decay_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(report.times, report.distances, lw=1.2)
    ax.set_xlabel("time")
    ax.set_ylabel("trajectory distance")
    ax.set_title(f"fitted slope {report.slope:.4g}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def bsm_figure(profile, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = np.arange(len(profile.norms))
    ax.plot(steps, profile.norms, marker="o", ms=3, label="sensitivity norm")
    ax.plot(steps, profile.rho_bound + profile.tolerance, ls="--", label="bound + slack")
    ax.set_xlabel("steps back from the output")
    ax.set_ylabel("spectral norm")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
