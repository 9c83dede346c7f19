"""
Metric charts and sample grids (PNG)
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .colors import ReportColors

logger = logging.getLogger(__name__)

PLOT_METRICS = ["KID", "MMD", "SSIM", "probe_acc"]


def _label_column(table: pd.DataFrame) -> pd.Series:
    """Ablation tables are labelled by configuration, sweeps by omega"""
    if table["config_name"].nunique() > 1:
        return table["config_name"].astype(str)
    return table["omega"].map(lambda w: f"ω={w:g}")


def plot_metric_bars(table: pd.DataFrame, output_dir: Path, prefix: str) -> List[Path]:
    """
    One bar chart per metric column present in the table.

    Returns:
        paths of the written PNG files
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    labels = _label_column(table)
    bar_colors = [ReportColors.hex(ReportColors.get_config_color(name)) for name in table["config_name"]]

    written = []
    for metric in PLOT_METRICS:
        if metric not in table.columns:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(labels, table[metric], color=bar_colors)
        ax.set_title(f"{metric} ({prefix})")
        ax.set_ylabel(metric)
        ax.tick_params(axis="x", labelrotation=20)
        for x, value in enumerate(table[metric]):
            ax.annotate(f"{value:.3f}", (x, value), ha="center", va="bottom", fontsize=8)
        fig.tight_layout()
        path = output_dir / f"{prefix}_{metric}.png"
        fig.savefig(path, dpi=120, format="png")
        plt.close(fig)
        written.append(path)
    logger.info(f"📊 Wrote {len(written)} {prefix} charts to {output_dir}")
    return written


def plot_probe_accuracy(table: pd.DataFrame, output_dir: Path) -> Path:
    """Image-probe vs seed-probe accuracy bars"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    row = table.iloc[0]
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.bar(["images", "seeds"], [row["acc_images"], row["acc_seeds"]],
           color=[ReportColors.hex(ReportColors.PRIMARY), ReportColors.hex(ReportColors.SECONDARY)])
    ax.set_ylim(0.0, 1.0)
    ax.set_title(f"Probe accuracy ({row['task']})")
    fig.tight_layout()
    path = output_dir / "probe_accuracy.png"
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)
    return path


def plot_sample_grid(sources: np.ndarray, outputs: Dict[str, np.ndarray], path: Path,
                     num_samples: int = 6) -> Path:
    """
    Rows are samples; the first column is the source, then one column per
    configuration.
    """
    columns: Sequence[str] = ["source", *outputs.keys()]
    count = min(num_samples, len(sources), *(len(v) for v in outputs.values()))
    fig, axes = plt.subplots(count, len(columns), figsize=(1.6 * len(columns), 1.6 * count), squeeze=False)
    for row in range(count):
        images = [sources[row], *(outputs[name][row] for name in outputs)]
        for col, image in enumerate(images):
            ax = axes[row][col]
            ax.imshow(np.clip(np.transpose(image, (1, 2, 0)), 0.0, 1.0), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if row == 0:
                ax.set_title(columns[col], fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)
    return path
