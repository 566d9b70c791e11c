"""Static SVG figures for evaluation and ablation reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import read_report_csv  # noqa: E402

# reproducible SVG output: fixed id salt, no date stamp
matplotlib.rcParams["svg.hashsalt"] = "unisynth"
SVG_META = {"Date": None}


def _grouped_bars(ax, rows, metric, modalities, configs):
    width = 0.8 / max(len(modalities), 1)
    x = np.arange(len(configs))
    for j, mod in enumerate(modalities):
        means, stds = [], []
        for cfg in configs:
            hit = [r for r in rows if r["ac"] == cfg and r["modality"] == mod]
            means.append(hit[0][f"{metric}_mean"] if hit else np.nan)
            stds.append(hit[0][f"{metric}_std"] if hit else 0.0)
        ax.bar(x + (j - (len(modalities) - 1) / 2) * width, means, width, yerr=stds, capsize=2, label=mod)
    ax.set_xticks(x)
    ax.set_xticklabels(configs, rotation=45, ha="right", fontsize=8)
    ax.set_xlabel("availability condition")
    ax.set_ylabel("PSNR (dB)" if metric == "psnr" else "SSIM")
    ax.legend(title="synthesized", fontsize=8)
    ax.grid(axis="y", alpha=0.3)


def plot_report(csv_path, out_dir=None) -> list[Path]:
    """Render PSNR and SSIM bar charts (one group per condition) next to ``csv_path``."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir) if out_dir else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_report_csv(csv_path)
    configs = list(dict.fromkeys(r["ac"] for r in rows))
    modalities = list(dict.fromkeys(r["modality"] for r in rows))
    paths = []
    for metric in ("psnr", "ssim"):
        fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(configs) + 2), 4))
        _grouped_bars(ax, rows, metric, modalities, configs)
        fig.tight_layout()
        path = out_dir / f"{csv_path.stem}_{metric}.svg"
        fig.savefig(path, format="svg", metadata=SVG_META)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_ablation(rows, path) -> Path:
    """Bar chart of seed-averaged PSNR per ablation variant, seeds as dots."""
    path = Path(path)
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, variant in enumerate(variants):
        vals = [r["psnr_mean"] for r in rows if r["variant"] == variant]
        ax.bar(k, np.mean(vals), 0.6, color="0.75")
        ax.plot([k] * len(vals), vals, "o", color="k", ms=4)
    ax.set_xticks(range(len(variants)))
    ax.set_xticklabels(variants)
    ax.set_ylabel("mean PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path
