import numpy as np
import pandas as pd
import matplotlib.pyplot as plt
import seaborn as sns
from matplotlib.axes import Axes
from typing import Sequence, Tuple


def plot_center_errors(detail: pd.DataFrame, limit_px: float = 2.0, ax: Axes = None):
    """Distribution of center errors of matched screws, split by in-spec flag."""
    if ax is None:
        ax = plt.gca()
    matched = detail[detail['matched'].astype(bool)]
    if len(matched):
        sns.histplot(matched, x='error_px', hue='in_spec', bins=40, element='step', ax=ax)
    ax.axvline(limit_px, c='k', linestyle=':')
    ax.set_xlabel('center error (px)')
    return ax


def plot_detections(
        rgb: np.ndarray,
        detections: Sequence[Tuple[float, float]],
        truth: Sequence[Tuple[float, float]],
        ax: Axes = None,
):
    if ax is None:
        ax = plt.gca()
    ax.imshow(rgb)
    if len(truth):
        t = np.asarray(truth)
        ax.scatter(t[:, 0], t[:, 1], marker='o', s=60, facecolors='none',
                   edgecolors='lime', label='truth')
    if len(detections):
        d = np.asarray(detections)
        ax.scatter(d[:, 0], d[:, 1], marker='+', s=40, c='red', label='detected')
    if len(truth) or len(detections):
        ax.legend(loc='upper right')
    ax.set_axis_off()
    return ax
