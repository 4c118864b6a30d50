"""Convergence plots rendered from trace CSV files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .benchmarks import read_trace_csv  # noqa: E402


def plot_traces(csv_paths, png_path, labels=None, title: str | None = None) -> Path:
    """Error and loss against iteration, log scale, one line per trace."""
    csv_paths = [Path(p) for p in csv_paths]
    labels = labels or [p.stem for p in csv_paths]
    fig, (ax_err, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    for path, label in zip(csv_paths, labels):
        rows = read_trace_csv(path)
        it = np.array([r.iteration for r in rows])
        err = np.array([r.error for r in rows])
        loss = np.array([r.loss for r in rows])
        if np.any(np.isfinite(err)):
            ax_err.semilogy(it, np.maximum(err, 1e-300), label=label)
        ax_loss.semilogy(it, np.maximum(loss, 1e-300), label=label)
    ax_err.set_xlabel("iteration")
    ax_err.set_ylabel("error")
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    for ax in (ax_err, ax_loss):
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    png_path = Path(png_path)
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def plot_conditioning(csv_path, png_path) -> Path:
    """``kappa(A_lambda)`` and ``kappa(A)^2`` against ``lambda``."""
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    lam = np.atleast_1d(data["lambda"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(lam, np.atleast_1d(data["kappa_A_lambda"]), "o-", label="kappa(A_lambda)")
    ax.loglog(lam, np.atleast_1d(data["kappa_A_squared"]), "--", label="kappa(A)^2")
    ax.set_xlabel("lambda")
    ax.set_ylabel("condition number")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    png_path = Path(png_path)
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path
