"""Matplotlib figure rendering for reports and density sweeps.

Everything renders through the Agg backend to PNG files with pinned
metadata, so a fixed (configuration, seed) pair produces identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be set first

from .metrics import SimReport  # noqa: E402

_META = {"Software": "mnfsim"}
_DPI = 120


def _new_axes(xlabel, ylabel, title):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=_DPI)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def save_utilization_vs_density(rows: list, path: str) -> str:
    """rows: dicts with density, utilization_active, utilization_total."""
    fig, ax = _new_axes("input density", "multiplier utilization",
                        "utilization vs density")
    d = [r["density"] for r in rows]
    ax.plot(d, [r["utilization_active"] for r in rows], marker="o",
            label="active cycles basis")
    ax.plot(d, [r["utilization_total"] for r in rows], marker="s",
            label="total cycles basis")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def save_energy_vs_density(rows: list, path: str) -> str:
    """rows: dicts with density, total_pj, cycles."""
    fig, ax = _new_axes("input density", "energy per frame (uJ)",
                        "energy and cycles vs density")
    d = [r["density"] for r in rows]
    ax.plot(d, [r["total_pj"] * 1e-6 for r in rows], marker="o",
            color="tab:red", label="energy")
    ax2 = ax.twinx()
    ax2.set_ylabel("cycles per frame")
    ax2.plot(d, [r["cycles"] for r in rows], marker="s",
             color="tab:blue", label="cycles")
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def save_layer_breakdown(report: SimReport, path: str) -> str:
    """Cycles and energy per layer for one run."""
    layers = report.layers
    idx = range(len(layers))
    names = [f"{s.index}:{s.name}" for s in layers]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 5.5), dpi=_DPI,
                                   sharex=True)
    ax1.bar(idx, [s.cycles for s in layers], color="tab:blue")
    ax1.set_ylabel("cycles")
    ax1.set_title(f"{report.network}: per-layer cost")
    ax1.grid(True, axis="y", alpha=0.3)
    ax2.bar(idx, [s.energy.total_pj * 1e-6 for s in layers], color="tab:red")
    ax2.set_ylabel("energy (uJ)")
    ax2.set_xlabel("layer")
    ax2.set_xticks(list(idx), names, rotation=30, ha="right")
    ax2.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path
