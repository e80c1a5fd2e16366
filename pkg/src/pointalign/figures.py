"""Matplotlib renderings for CLI reports.

Every helper writes one PNG and returns its path. Rendering uses the Agg
backend so the CLI works headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_error_heatmap(values, valid, path, title):
    """Per-pixel error map; invalid pixels are blanked out."""
    shown = np.array(values, dtype=float)
    shown[~np.asarray(valid, dtype=bool)] = np.nan
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(shown, cmap="magma")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return os.fspath(path)


def save_histogram(values, path, title, vline=None, xlabel=""):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(np.asarray(values, dtype=float).ravel(), bins=60, color="#4878a8")
    if vline is not None:
        ax.axvline(vline, color="crimson", linestyle="--", linewidth=1.2)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("pixels")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return os.fspath(path)


def save_bar_chart(labels, values, path, title, ylabel=""):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = np.arange(len(labels))
    ax.bar(xs, values, color="#4878a8")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return os.fspath(path)
