"""
plots.py: figures for training runs, field maps and error analysis.
All figures are written as PNG with matplotlib (Agg) + seaborn.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

# ── Colour palette ────────────────────────────────────────────────────────────
C = {
    "primary":     "#F46036",
    "secondary":   "#5B85AA",
    "accent":      "#9C7A97",
    "text_dark":   "#171123",
    "text_light":  "#888DA7",
    "success":     "#2A9D8F",
    "danger":      "#C44027",
}

sns.set_theme(style="whitegrid", context="notebook")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


# ── Plot A: Training loss curve ───────────────────────────────────────────────
def plot_loss_curve(log: pd.DataFrame, path) -> Path:
    """Per-epoch Huber loss (log scale) with the learning rate on a twin axis."""
    fig, ax = plt.subplots(figsize=(7, 4))
    sns.lineplot(data=log, x="epoch", y="loss", ax=ax, color=C["primary"], marker="o", label="loss")
    ax.set_yscale("log")
    ax.set_ylabel("Huber loss")
    lr_ax = ax.twinx()
    lr_ax.plot(log["epoch"], log["lr"], color=C["text_light"], linestyle="--", label="lr")
    lr_ax.set_yscale("log")
    lr_ax.set_ylabel("learning rate")
    lr_ax.grid(False)
    ax.set_title("Training loss")
    return _save(fig, path)


# ── Plot B: Field map ─────────────────────────────────────────────────────────
def plot_field(grid, path, title: str = "Total field") -> Path:
    """Real part and magnitude of u_tot on the grid plane; obstacles shown masked."""
    half = 0.5 * grid.spec.side
    extent = [-half, half, -half, half]
    values = np.ma.masked_array(grid.total, mask=grid.mask | ~np.isfinite(grid.total))

    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
    for ax, data, label, cmap in (
        (axes[0], values.real, "Re u", "RdBu_r"),
        (axes[1], np.abs(values), "|u|", "magma"),
    ):
        image = ax.imshow(data, origin="lower", extent=extent, cmap=cmap)
        ax.set_title(f"{title}: {label}")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.colorbar(image, ax=ax, shrink=0.85)
    return _save(fig, path)


# ── Plot C: Error vs. sample difficulty ───────────────────────────────────────
def plot_error_scatter(metrics: pd.DataFrame, path, metric: str = "err_rel") -> Path:
    """``metric`` against GMRES iterations, wavenumber and obstacle dispersion."""
    drivers = [c for c in ("gmres_iterations", "wavenumber", "dispersion") if metrics[c].notna().any()]
    fig, axes = plt.subplots(1, len(drivers), figsize=(4.5 * len(drivers), 4), squeeze=False)
    for ax, driver in zip(axes[0], drivers):
        sns.regplot(data=metrics, x=driver, y=metric, ax=ax, color=C["secondary"],
                    scatter_kws={"s": 18}, line_kws={"color": C["danger"]})
        ax.set_title(f"{metric} vs {driver}")
    return _save(fig, path)
