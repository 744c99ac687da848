import numpy as np
import pandas as pd
import matplotlib.pyplot as plt
import seaborn as sns
from matplotlib.axes import Axes
from typing import Dict


def plot_error_distributions(
        errors: Dict[str, pd.DataFrame],
        limit: float = 0.35,
        ax: Axes = None,
):
    """Histogram of positioning errors per verification mode, with the limit marked."""
    if ax is None:
        ax = plt.gca()
    df = pd.concat(
        [e[['error']].assign(mode=mode) for mode, e in errors.items()],
        ignore_index=True,
    )
    sns.histplot(df, x='error', hue='mode', bins=60, log_scale=(False, True),
                 element='step', ax=ax)
    ax.axvline(limit, c='k', linestyle=':')
    ax.set_xlabel('positioning error (mm)')
    return ax


def plot_error_field(
        errors: pd.DataFrame,
        plane: str = 'xy',
        ax: Axes = None,
):
    """Scatter of query positions projected on a plane, colored by error."""
    if ax is None:
        ax = plt.gca()
    a, b = plane
    order = np.argsort(errors['error'].to_numpy())
    sc = ax.scatter(errors[a].to_numpy()[order], errors[b].to_numpy()[order],
                    c=errors['error'].to_numpy()[order], s=4, cmap='viridis')
    plt.colorbar(sc, ax=ax, label='error (mm)')
    ax.set_xlabel(f'{a} (mm)')
    ax.set_ylabel(f'{b} (mm)')
    ax.set_aspect('equal')
    return ax


def plot_region_max(summary: Dict[str, float], limit: float = 0.35, ax: Axes = None):
    if ax is None:
        ax = plt.gca()
    s = pd.Series(summary).sort_index()
    sns.barplot(x=s.index, y=s.to_numpy(), color='gray', ax=ax)
    ax.axhline(limit, c='k', linestyle=':')
    ax.set_ylabel('max error (mm)')
    ax.tick_params(axis='x', rotation=90)
    return ax
