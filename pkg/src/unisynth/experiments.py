"""End-to-end phantom experiments and ablation sweeps."""
from __future__ import annotations

import copy
import csv
import io
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import (MultiModalVolume, extract_center_slices, generate_phantom_dataset, load_split,
                   mean_normalize)
from .metrics import MetricsReport, evaluate_matrix
from .training import load_checkpoint, train

ABLATION_VARIANTS = {
    "CDS+DFUM": {"encoder_variant": "CDS", "fusion": "DFUM"},
    "MMS+DFUM": {"encoder_variant": "MMS", "fusion": "DFUM"},
    "C+DFUM": {"encoder_variant": "C", "fusion": "DFUM"},
    "CDS+MAX": {"encoder_variant": "CDS", "fusion": "MAX"},
    "CDS+HEMIS": {"encoder_variant": "CDS", "fusion": "HEMIS"},
}


def phantom_splits(cfg: ExperimentConfig) -> dict[str, list[MultiModalVolume]]:
    """Deterministic phantom subjects split into train / val / test."""
    p = cfg.phantom
    spec = p.spec(cfg.model, cfg.modalities)
    # the dataset seed is fixed so that model seeds vary independently of the data
    vols = generate_phantom_dataset(np.random.default_rng(1234), spec, p.n_train + p.n_val + p.n_test)
    return {"train": vols[:p.n_train], "val": vols[p.n_train:p.n_train + p.n_val],
            "test": vols[p.n_train + p.n_val:]}


def preprocess(volumes, cfg: ExperimentConfig) -> list[np.ndarray]:
    """Normalize and slice each subject; returns per-subject S x M x H x W arrays."""
    d = cfg.data
    out = []
    for vol in volumes:
        if d.normalize:
            vol = mean_normalize(vol, d.normalize_nonzero)
        crop = tuple(d.crop) if d.crop else tuple(cfg.model.image_size)
        out.append(np.stack(extract_center_slices(vol, d.n_slices or vol.depth, crop)).astype(np.float32))
    return out


def load_dataset(cfg: ExperimentConfig, split: str):
    return preprocess(load_split(cfg.data.root, split), cfg)


def run_experiment(cfg: ExperimentConfig, train_subjects, test_subjects, run_dir=None) -> MetricsReport:
    run_dir = Path(run_dir or cfg.run_dir)
    ckpt, _ = train(cfg, np.concatenate(train_subjects), run_dir=run_dir)
    state = load_checkpoint(ckpt)
    report = evaluate_matrix(state.generator, test_subjects, cfg.modalities,
                             metadata={"checkpoint": str(ckpt), "config_hash": cfg.hash()})
    (run_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    return report


def variant_config(cfg: ExperimentConfig, variant: str, seed: int, run_root) -> ExperimentConfig:
    out = copy.deepcopy(cfg)
    for key, value in ABLATION_VARIANTS[variant].items():
        setattr(out.model, key, value)
    out.seed = seed
    out.run_dir = str(Path(run_root) / f"{variant.replace('+', '_')}_seed{seed}")
    return out


def run_ablation(cfg: ExperimentConfig, variants, seeds, train_subjects, test_subjects, run_root):
    """Train and evaluate each variant for each seed; returns summary rows."""
    rows = []
    for variant in variants:
        if variant not in ABLATION_VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(ABLATION_VARIANTS)}")
        for seed in seeds:
            vcfg = variant_config(cfg, variant, seed, run_root)
            report = run_experiment(vcfg, train_subjects, test_subjects)
            rows.append({"variant": variant, "seed": seed,
                         "psnr_mean": report.mean_over(metric="psnr"),
                         "ssim_mean": report.mean_over(metric="ssim"),
                         "run_dir": vcfg.run_dir})
    return rows


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "seed", "psnr_mean", "ssim_mean"])
    for r in rows:
        writer.writerow([r["variant"], r["seed"], f"{r['psnr_mean']:.6f}", f"{r['ssim_mean']:.6f}"])
    by_variant = {}
    for r in rows:
        by_variant.setdefault(r["variant"], []).append(r)
    for variant, rs in by_variant.items():
        writer.writerow([variant, "mean", f"{np.mean([r['psnr_mean'] for r in rs]):.6f}",
                         f"{np.mean([r['ssim_mean'] for r in rs]):.6f}"])
    return buf.getvalue()
