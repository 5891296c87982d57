"""
Static SVG charts of benchmark results: one chart per metric, one panel per
source kind, one line per region. Noisy runs appear next to their noiseless
counterpart with a trailing star per noise level.
"""

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from simulator import SourceKind  # noqa: E402

METRIC_TITLES = {
    "le_score": "Localization",
    "vis_score": "Visibility",
    "sr_score": "Spatial resolution",
}

# Reproducible SVG bytes.
SVG_RC = {"svg.hashsalt": "moeaar", "svg.fonttype": "none"}
SVG_METADATA = {"Date": None}


def category_labels(methods: Sequence[str], snr_levels: Sequence[float]) -> list:
    """(method, snr) pairs and their axis labels, noisy levels starred."""
    levels = sorted(snr_levels)
    noisy = [snr for snr in levels if snr > 0]
    categories = []
    for method in methods:
        for snr in levels:
            stars = "*" * (noisy.index(snr) + 1) if snr > 0 else ""
            categories.append(((method, snr), f"{method}{stars}"))
    return categories


def _mean_score(rows, metric, method, region, kind, snr) -> float:
    scores = [
        row[metric]
        for row in rows
        if row["status"] == "ok"
        and row["method"] == method
        and row["region"] == region
        and row["kind"] == kind
        and row["snr"] == snr
    ]
    return float(np.mean(scores)) if scores else float("nan")


def plot_metric(
    rows: Sequence[dict],
    metric: str,
    path: Union[str, Path],
    methods: Sequence[str],
) -> Path:
    """Write one metric chart; rows are result-CSV records."""
    path = Path(path)
    regions = sorted({row["region"] for row in rows})
    snr_levels = sorted({row["snr"] for row in rows})
    categories = category_labels(methods, snr_levels)
    x = np.arange(len(categories))

    with plt.rc_context(SVG_RC):
        figure, axes = plt.subplots(
            1, len(SourceKind), figsize=(12, 4.5), sharey=True, squeeze=False
        )
        for axis, kind in zip(axes[0], SourceKind):
            for region in regions:
                values = [
                    _mean_score(rows, metric, method, region, kind.value, snr)
                    for (method, snr), _ in categories
                ]
                axis.plot(x, values, marker="o", label=region)
            axis.set_title(f"{METRIC_TITLES.get(metric, metric)} ({kind.value})")
            axis.set_xticks(x, [label for _, label in categories], rotation=45)
            axis.set_ylim(-0.05, 1.05)
            axis.grid(alpha=0.3)
        axes[0][0].set_ylabel("score")
        axes[0][-1].legend(loc="lower right", fontsize="small")
        figure.tight_layout()
        figure.savefig(path, format="svg", metadata=SVG_METADATA)
        plt.close(figure)
    return path


def plot_front(
    objectives: Sequence[tuple[float, float]],
    knee: tuple[float, float],
    path: Union[str, Path],
    title: str = "",
) -> Path:
    """Known Pareto front with the decision marked."""
    path = Path(path)
    values = np.asarray(objectives, dtype=float).reshape(-1, 2)
    order = np.argsort(values[:, 0], kind="stable")

    with plt.rc_context(SVG_RC):
        figure, axis = plt.subplots(figsize=(5, 4))
        axis.plot(values[order, 0], values[order, 1], marker="o", label="front")
        axis.scatter(
            [knee[0]],
            [knee[1]],
            s=120,
            facecolors="none",
            edgecolors="red",
            label="decision",
            zorder=3,
        )
        axis.set_xlabel("||V - KJ||^2")
        axis.set_ylabel("penalty")
        if title:
            axis.set_title(title)
        axis.legend(fontsize="small")
        figure.tight_layout()
        figure.savefig(path, format="svg", metadata=SVG_METADATA)
        plt.close(figure)
    return path
