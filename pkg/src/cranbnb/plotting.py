"""Figure rendering for the report path (headless-safe)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

METHOD_STYLE = {
    "exact": dict(color="black", marker="s", label="branch-and-bound"),
    "learned": dict(color="tab:red", marker="o", label="imitation learning"),
    "gsbf": dict(color="tab:blue", marker="^", label="group sparse beamforming"),
    "rminlp": dict(color="tab:green", marker="v", label="relaxed MINLP"),
}


def _series(agg, value_key):
    by_method = {}
    for a in agg:
        if a[value_key] is None:
            continue
        by_method.setdefault(a["method"], []).append((a["tsinr_db"], a[value_key]))
    return {m: sorted(pts) for m, pts in by_method.items()}


def render_power_figure(agg, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, pts in _series(agg, "power_mean_w").items():
        style = METHOD_STYLE.get(method, dict(marker="x", label=method))
        ax.plot([p[0] for p in pts], [p[1] for p in pts], **style)
    ax.set_xlabel("target SINR (dB)")
    ax.set_ylabel("average network power (W)")
    ax.grid(True, alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_speedup_figure(agg, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, pts in _series(agg, "speedup_mean").items():
        if method == "exact":
            continue
        style = METHOD_STYLE.get(method, dict(marker="x", label=method))
        ax.plot([p[0] for p in pts], [p[1] for p in pts], **style)
    ax.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("target SINR (dB)")
    ax.set_ylabel("conic-solve speedup vs exact")
    ax.grid(True, alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
