"""Figures rendered from the per-option fit table written by ``essvi calibrate``."""

from __future__ import annotations

import math
import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _grid(n: int) -> tuple[int, int]:
    cols = min(4, n)
    return math.ceil(n / cols), cols


def _by_maturity(rows: Sequence[Mapping]) -> dict[float, list[Mapping]]:
    groups: dict[float, list[Mapping]] = {}
    for r in rows:
        groups.setdefault(float(r["T"]), []).append(r)
    return dict(sorted(groups.items()))


def plot_iv_fit(rows: Sequence[Mapping], path: str | os.PathLike) -> None:
    """Market against model implied volatility in log-moneyness, one panel per maturity."""
    groups = _by_maturity(rows)
    nr, nc = _grid(len(groups))
    fig, axes = plt.subplots(nr, nc, figsize=(3.2 * nc, 2.6 * nr), squeeze=False)
    for ax, (T, rs) in zip(axes.flat, groups.items()):
        k = np.array([float(r["k"]) for r in rs])
        ax.plot(k, [100 * float(r["market_iv"]) for r in rs], ".", ms=3, label="market")
        ax.plot(k, [100 * float(r["model_iv"]) for r in rs], "-", lw=1, label="model")
        ax.set_title(f"T = {T:.4f}", fontsize=8)
        ax.tick_params(labelsize=7)
    for ax in list(axes.flat)[len(groups):]:
        ax.axis("off")
    axes.flat[0].legend(fontsize=7)
    fig.supxlabel("log-forward moneyness k")
    fig.supylabel("implied volatility (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_price_errors(rows: Sequence[Mapping], path: str | os.PathLike, unit_label: str = "bp of F") -> None:
    """Absolute price error against the half bid-ask spread, both in basis points."""
    groups = _by_maturity(rows)
    nr, nc = _grid(len(groups))
    fig, axes = plt.subplots(nr, nc, figsize=(3.2 * nc, 2.6 * nr), squeeze=False)
    for ax, (T, rs) in zip(axes.flat, groups.items()):
        k = np.array([float(r["k"]) for r in rs])
        ax.plot(k, [float(r["abs_error_bp"]) for r in rs], ".", ms=3, label="|model - mid|")
        ax.plot(k, [float(r["half_spread_bp"]) for r in rs], "-", lw=1, label="half spread")
        ax.set_title(f"T = {T:.4f}", fontsize=8)
        ax.tick_params(labelsize=7)
    for ax in list(axes.flat)[len(groups):]:
        ax.axis("off")
    axes.flat[0].legend(fontsize=7)
    fig.supxlabel("log-forward moneyness k")
    fig.supylabel(unit_label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
