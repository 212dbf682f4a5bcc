"""Figure rendering for the train and eval report paths (matplotlib, Agg)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricReport
from .training import LossReport


def _moving_average(xs: list[float], window: int) -> np.ndarray:
    arr = np.asarray(xs, dtype=np.float64)
    if len(arr) < window:
        return arr
    kernel = np.ones(window) / window
    return np.convolve(arr, kernel, mode="valid")


def plot_loss_curves(reports: list[LossReport], path: str, ma_window: int = 50) -> None:
    steps = [r.step for r in reports]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.plot(steps, [r.diffusion_loss for r in reports], alpha=0.3, label="diffusion")
    ax1.plot(steps, [r.physics_loss for r in reports], alpha=0.3, label="physics")
    if len(reports) >= ma_window:
        ma_steps = steps[ma_window - 1 :]
        ax1.plot(ma_steps, _moving_average([r.diffusion_loss for r in reports], ma_window),
                 label=f"diffusion ({ma_window}-step MA)")
        ax1.plot(ma_steps, _moving_average([r.physics_loss for r in reports], ma_window),
                 label=f"physics ({ma_window}-step MA)")
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    ax1.legend(fontsize=8)
    ax1.set_title("loss components")

    gates = np.array([r.gate_values for r in reports])
    for i in range(gates.shape[1]):
        ax2.plot(steps, gates[:, i], label=f"gate {i}")
    ax2.set_xlabel("step")
    ax2.set_ylabel("gate value")
    ax2.legend(fontsize=8)
    ax2.set_title("physics gates")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_report(reports: list[MetricReport], path: str) -> None:
    ok = [r for r in reports if r.error is None]
    if not ok:
        return
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    names = [r.name for r in ok]
    xs = np.arange(len(ok))
    specs = [
        ("flow_mean_magnitude", "mean flow magnitude (px/frame)"),
        ("embed_consistency", "embedding consistency (cosine)"),
        ("tlpips_mean", "temporal perceptual distance"),
    ]
    for ax, (key, label) in zip(axes, specs):
        vals = [getattr(r, key) for r in ok]
        if any(v is None for v in vals):
            ax.set_visible(False)
            continue
        ax.bar(xs, vals)
        ax.set_xticks(xs)
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_title(label, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_physics_norms(norms: list[float], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(norms)), norms)
    ax.set_xlabel("reverse step index")
    ax.set_ylabel("|predicted physics tokens|")
    ax.set_title("per-step physics token norm")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
