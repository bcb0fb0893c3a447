#!/usr/bin/env python3

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
from typing import Dict, Sequence, Tuple

# text stays text and ids are stable, so identical data gives identical files
matplotlib.rcParams['svg.fonttype'] = 'none'
matplotlib.rcParams['svg.hashsalt'] = 'cs-imaging'


def add_line_series_to_axis(ax: plt.Axes, series: Dict[str, Tuple[Sequence[float], Sequence[float]]]):
    for label, (x_vals, y_vals) in series.items():
        line, = ax.plot(np.asarray(x_vals, dtype=float), np.asarray(y_vals, dtype=float), marker='o', label=label)
        line.set_gid(label)


def add_stacked_histogram_data_to_axis(ax: plt.Axes, histogram_column_names: Sequence[str],
                                       stacked_data_labels: Sequence[str],
                                       dataset_dicts: Sequence[Dict[str, float]], scale_data=1.0):
    bottom = np.array([0.0] * len(histogram_column_names))
    for label in stacked_data_labels:
        data_for_this_label = np.array([d.get(label, 0.0) * scale_data for d in dataset_dicts])
        ax.bar(histogram_column_names, data_for_this_label, bottom=bottom, label=label)
        bottom = bottom + data_for_this_label


def add_titles_to_axis(ax: plt.Axes, title: str, y_label: str, x_label: str = None):
    ax.set_title(title)
    ax.set_ylabel(y_label)
    if x_label is not None:
        ax.set_xlabel(x_label)
    ax.legend(bbox_to_anchor=(1.0, 1.0), loc='upper left')
    plt.subplots_adjust(right=0.75)
    ax.grid(axis='y', linestyle='--')


def save_svg(fig: plt.Figure, filename: str):
    fig.savefig(filename, format='svg', metadata={'Date': None})
    plt.close(fig)


def line_plot_svg(series: Dict[str, Tuple[Sequence[float], Sequence[float]]], filename: str,
                  title: str, x_label: str, y_label: str):
    if not series:
        raise ValueError("Nothing to plot, no series given")
    fig, ax = plt.subplots()
    add_line_series_to_axis(ax, series)
    add_titles_to_axis(ax, title, y_label, x_label)
    save_svg(fig, filename)


def stacked_bar_svg(column_names: Sequence[str], dataset_dicts: Sequence[Dict[str, float]], filename: str,
                    title: str, y_label: str):
    labels = sorted({label for d in dataset_dicts for label in d})
    fig, ax = plt.subplots()
    add_stacked_histogram_data_to_axis(ax, column_names, labels, dataset_dicts)
    add_titles_to_axis(ax, title, y_label)
    save_svg(fig, filename)
