"""Static figures for diagnostics and fitted clusterings (matplotlib, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .panel import PanelData  # noqa: E402
from .selection import DiagnosticsReport  # noqa: E402

__all__ = ["plot_acf_boxplot", "plot_dispersion", "plot_cluster_profiles", "plot_series_by_cluster",
           "cluster_profiles"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None, "Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_acf_boxplot(report: DiagnosticsReport, path) -> None:
    acf = report.acf
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot([acf.acf[:, k] for k in range(acf.lags.size)], positions=acf.lags, widths=0.6)
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("lag")
    ax.set_ylabel("autocorrelation")
    ax.set_title("Per-series autocorrelation by lag")
    _save(fig, path)


def plot_dispersion(report: DiagnosticsReport, path) -> None:
    disp = report.dispersion
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(disp.means, disp.variances, s=10, alpha=0.6)
    top = float(max(disp.means.max(initial=0.0), 1.0))
    ax.plot([0, top], [0, top], color="red", lw=1.0, label="variance = mean")
    ax.set_xlabel("mean")
    ax.set_ylabel("variance")
    ax.legend(loc="upper left")
    _save(fig, path)


def cluster_profiles(panel: PanelData, labels, G: int | None = None) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-cluster mean trajectory and the number of series observed at each t.

    Ragged series contribute only where observed.
    """
    labels = np.asarray(labels)
    G = int(labels.max()) + 1 if G is None else G
    X = panel.to_matrix()
    out = {}
    for g in range(G):
        rows = X[labels == g]
        cnt = np.sum(~np.isnan(rows), axis=0) if rows.size else np.zeros(X.shape[1], dtype=int)
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(rows, axis=0) if rows.size and cnt.any() else np.full(X.shape[1], np.nan)
        out[g] = (mean, cnt)
    return out


def plot_cluster_profiles(panel: PanelData, labels, path, titles=None) -> None:
    prof = cluster_profiles(panel, labels)
    fig, ax = plt.subplots(figsize=(8, 4))
    t = np.arange(1, panel.lengths.max() + 1)
    for g, (mean, cnt) in prof.items():
        label = titles[g] if titles else f"cluster {g + 1}"
        ax.plot(t, mean, marker="o", ms=3, label=f"{label} (n={int(np.sum(np.asarray(labels) == g))})")
    ax.set_xlabel("t")
    ax.set_ylabel("mean count")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_series_by_cluster(panel: PanelData, labels, path, max_per_cluster: int = 30) -> None:
    labels = np.asarray(labels)
    G = int(labels.max()) + 1
    fig, axes = plt.subplots(G, 1, figsize=(8, 2.2 * G), sharex=True, squeeze=False)
    for g in range(G):
        ax = axes[g, 0]
        for i in np.flatnonzero(labels == g)[:max_per_cluster]:
            x = panel.series[i]
            ax.plot(np.arange(1, x.size + 1), x, lw=0.6, alpha=0.6)
        ax.set_ylabel(f"cluster {g + 1}")
    axes[-1, 0].set_xlabel("t")
    _save(fig, path)
