"""Matplotlib renderings saved next to the CSV/JSON report outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_purity_bars(report, path: str | Path) -> None:
    """Per-cluster purity bars with the coverage threshold line."""
    clusters = [c for c in report.clusters if c.size > 0]
    ids = [c.cluster for c in clusters]
    purities = [c.purity if c.purity is not None else 0.0 for c in clusters]
    defined = [c.purity is not None for c in clusters]
    fig, ax = plt.subplots(figsize=(max(6, 0.22 * len(ids)), 4))
    colors = ["#4c72b0" if d else "#c44e52" for d in defined]
    ax.bar(range(len(ids)), purities, color=colors)
    ax.axhline(report.tau, color="gray", ls="--", lw=1, label=f"tau = {report.tau:g}")
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels([str(i) for i in ids], fontsize=7, rotation=90)
    ax.set_xlabel("cluster")
    ax.set_ylabel("label purity")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"coverage at tau={report.tau:g}: {report.coverage:.3f}")
    ax.legend(frameon=False)
    _save(fig, path)


def save_coverage_sweep(coverages: dict[int, float], tau: float, path: str | Path) -> None:
    ks = sorted(coverages)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ks, [coverages[k] for k in ks], marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xticks(ks)
    ax.set_xticklabels([str(k) for k in ks])
    ax.set_xlabel("number of clusters")
    ax.set_ylabel(f"tile coverage at purity >= {tau:g}")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3, ls=":")
    _save(fig, path)


def save_head_to_head(base_concordance, aug_concordance, win_fraction, path) -> None:
    """Per-split concordance scatter, augmented vs baseline, with the diagonal."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    lo = min(np.min(base_concordance), np.min(aug_concordance)) - 0.02
    hi = max(np.max(base_concordance), np.max(aug_concordance)) + 0.02
    ax.plot([lo, hi], [lo, hi], color="gray", lw=1, ls="--")
    ax.scatter(base_concordance, aug_concordance, s=8, alpha=0.5)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("baseline concordance")
    ax.set_ylabel("augmented concordance")
    ax.set_title(f"augmented wins {100 * win_fraction:.1f}% of splits")
    _save(fig, path)


def save_td_auc(times, curves: dict[str, np.ndarray], path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, values in curves.items():
        values = np.asarray(values, dtype=float)
        ok = ~np.isnan(values)
        ax.plot(np.asarray(times)[ok], values[ok], marker=".", label=name)
    ax.set_xlabel("years")
    ax.set_ylabel("time-dependent AUC")
    ax.grid(alpha=0.3, ls=":")
    ax.legend(frameon=False)
    _save(fig, path)


def save_net_benefit(thresholds, curves: dict[str, np.ndarray], horizon: float, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, values in curves.items():
        style = {"treat all": {"ls": "--", "color": "gray"}, "treat none": {"color": "black", "lw": 1}}
        ax.plot(thresholds, values, label=name, **style.get(name, {}))
    ax.set_xlabel("threshold probability")
    ax.set_ylabel(f"net benefit at {horizon:g} years")
    floor = min(-0.01, float(np.nanmin([np.nanmin(v) for v in curves.values()])) )
    ax.set_ylim(max(floor, -0.1), None)
    ax.grid(alpha=0.3, ls=":")
    ax.legend(frameon=False)
    _save(fig, path)


def save_km_curves(groups: dict[str, tuple], path, horizon: float | None = None) -> None:
    """Stepped Kaplan-Meier curves, one per named group of (times, survival)."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, (times, survival) in groups.items():
        xs = np.concatenate([[0.0], np.asarray(times, dtype=float)])
        ys = np.concatenate([[1.0], np.asarray(survival, dtype=float)])
        ax.step(xs, ys, where="post", label=name)
    if horizon is not None:
        ax.axvline(horizon, color="gray", ls="--", lw=1)
    ax.set_xlabel("years")
    ax.set_ylabel("survival probability")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3, ls=":")
    ax.legend(frameon=False)
    _save(fig, path)
