"""SVG figures for experiment reports, rendered with matplotlib.

Figures are built on a bare :class:`~matplotlib.figure.Figure` (no pyplot
state) at 72 dpi, so one display pixel is one SVG user unit. Output is
deterministic: the SVG hash salt is fixed and no date is embedded.
"""

from __future__ import annotations

from collections import OrderedDict

import matplotlib
import numpy as np
from matplotlib.figure import Figure

DPI = 72
_TITLES = {
    "width": "Average width",
    "cond_hard": "Conditional coverage (hard)",
    "cond_easy": "Conditional coverage (easy)",
    "marginal": "Simultaneous marginal coverage",
}


def _save(fig: Figure, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "cafht", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def plot_metric(rows, metric: str, path, xlabel: str = "") -> float:
    """Line chart of ``metric`` against the sweep value, one series per
    method, with error bars of 2 standard errors.

    ``rows`` are dicts with ``value``, ``method``, ``<metric>_mean`` and
    ``<metric>_se``. Returns the vertical scale in SVG units per data unit.
    """
    series = OrderedDict()
    for r in rows:
        series.setdefault(r["method"], []).append(r)
    fig = Figure(figsize=(6, 4), dpi=DPI)
    ax = fig.add_subplot(1, 1, 1)
    for name, rs in series.items():
        x = np.array([float(r["value"]) for r in rs])
        y = np.array([np.nan if r[f"{metric}_mean"] is None else r[f"{metric}_mean"] for r in rs], dtype=float)
        se = np.array([r[f"{metric}_se"] if r[f"{metric}_se"] is not None else np.nan for r in rs], dtype=float)
        err = np.where(np.isfinite(se), 2.0 * se, 0.0)
        cont = ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=name)
        cont.lines[0].set_gid(f"line-{name}")
        for coll in cont.lines[2]:
            coll.set_gid(f"errbar-{name}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(_TITLES.get(metric, metric))
    ax.legend(fontsize="small")
    fig.tight_layout()
    lo, hi = ax.get_ylim()
    p0 = ax.transData.transform((0.0, lo))
    p1 = ax.transData.transform((0.0, lo + 1.0))
    scale = float(p1[1] - p0[1])
    _save(fig, path)
    return scale


def plot_bands(rows, path, dim: int = 0) -> None:
    """Per-trajectory panels of one-step bands from ``bands_sample.csv`` rows."""
    trajs = OrderedDict()
    for r in rows:
        if int(r["tau"]) != 1 or int(r["dim"]) != dim:
            continue
        trajs.setdefault(r["traj_id"], OrderedDict()).setdefault(r["method"], []).append(r)
    k = max(len(trajs), 1)
    fig = Figure(figsize=(5 * min(k, 2), 3.2 * ((k + 1) // 2)), dpi=DPI)
    for i, (tid, methods) in enumerate(trajs.items()):
        ax = fig.add_subplot((k + 1) // 2, min(k, 2), i + 1)
        observed = None
        for name, rs in methods.items():
            t = np.array([int(r["t"]) + 1 for r in rs])
            lo = np.clip(np.array([float(r["lower"]) for r in rs]), -1.0, 1.0)
            hi = np.clip(np.array([float(r["upper"]) for r in rs]), -1.0, 1.0)
            ax.fill_between(t, lo, hi, alpha=0.25, label=name)
            observed = (t, np.array([float(r["observed"]) for r in rs]))
        if observed is not None:
            ax.plot(*observed, color="black", linewidth=1, label="observed")
        label = next(iter(methods.values()))[0].get("label", "")
        ax.set_title(f"trajectory {tid} ({label})" if label else f"trajectory {tid}", fontsize="small")
        ax.set_xlabel("t")
    if trajs:
        fig.axes[0].legend(fontsize="x-small")
    fig.tight_layout()
    _save(fig, path)
