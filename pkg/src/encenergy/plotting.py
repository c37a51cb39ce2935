"""Figures written next to the delimited reports.

Uses the object-oriented matplotlib API with the Agg canvas, so nothing
touches pyplot's global state and no display is required.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .attribution import AttributionReport, X265_CATEGORIES
from .evaluation import CrossValidation
from .report import PixelReportRow

MODE_LABELS = {
    "posterior": "posterior (PE)",
    "prior_uf": "prior (UF PE)",
    "time_baseline": "time baseline",
}


def _new_figure(width=6.4, height=3.6) -> Figure:
    fig = Figure(figsize=(width, height), dpi=150)
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    return path


def figure_path_for(output, suffix: str = ".png") -> Path:
    """``report.csv`` -> ``report.png``."""
    return Path(output).with_suffix(suffix)


def plot_energy_per_pixels(rows: list[PixelReportRow], path, normalizer: int = 100_000) -> Path:
    modes = [m for m in MODE_LABELS if any(m in r.estimates for r in rows)]
    series = [("measured", [r.measured for r in rows])]
    series += [(MODE_LABELS[m], [r.estimates.get(m, np.nan) for r in rows]) for m in modes]

    fig = _new_figure()
    ax = fig.add_subplot()
    x = np.arange(len(rows))
    width = 0.8 / len(series)
    for i, (label, values) in enumerate(series):
        ax.bar(x + (i - (len(series) - 1) / 2) * width, values, width, label=label)
    ax.set_xticks(x, [r.preset for r in rows], rotation=30, ha="right")
    ax.set_ylabel(f"energy per {normalizer:,} pixels (J)")
    ax.legend(frameon=False)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def plot_attribution(reports: dict[str, AttributionReport], path) -> Path:
    """Stacked bars, one per labelled report (e.g. one per CRF)."""
    labels = list(reports)
    seen = {c for rep in reports.values() for c in rep.per_category}
    categories = [c for c in X265_CATEGORIES if c in seen] + sorted(seen - set(X265_CATEGORIES))

    fig = _new_figure()
    ax = fig.add_subplot()
    bottom = np.zeros(len(labels))
    for cat in categories:
        vals = np.array([reports[l].per_category[cat].energy_j if cat in reports[l].per_category
                         else 0.0 for l in labels])
        ax.bar(labels, vals, bottom=bottom, label=cat)
        bottom += vals
    ax.set_ylabel("estimated energy (J)")
    ax.legend(frameon=False, fontsize=7, loc="center left", bbox_to_anchor=(1.0, 0.5))
    return _save(fig, path)


def plot_cross_validation(cv: CrossValidation, path) -> Path:
    """MAPE per preset with the confidence interval of the signed error."""
    fig = _new_figure()
    ax = fig.add_subplot()
    presets = [r.preset for r in cv.rows]
    x = np.arange(len(presets))
    ax.bar(x - 0.2, [r.mape for r in cv.rows], 0.4, label="MAPE")
    mean = np.array([r.mean_err for r in cv.rows])
    err = np.array([[r.mean_err - r.ci_low for r in cv.rows], [r.ci_high - r.mean_err for r in cv.rows]])
    ax.errorbar(x + 0.2, mean, yerr=err, fmt="o", capsize=3, label=f"mean error, {cv.confidence:.0%} CI")
    ax.axhline(0, color="black", lw=0.5)
    ax.set_xticks(x, presets, rotation=30, ha="right")
    ax.set_ylabel("percent")
    ax.set_title(f"{MODE_LABELS.get(cv.mode, cv.mode)}, {cv.k}-fold, average MAPE {cv.average:.2f}%")
    ax.legend(frameon=False)
    return _save(fig, path)
