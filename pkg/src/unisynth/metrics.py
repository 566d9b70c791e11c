"""Volume-level PSNR / SSIM, the availability-configuration matrix, Welch's t-test."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats

from .conditioning import AvailabilityCondition, all_conditions

CSV_FIELDS = ("ac", "modality", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "n")


def _pair(estimate, reference):
    a = np.asarray(estimate, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty volumes")
    return a, b


def psnr(estimate, reference) -> float:
    """10 log10(max^2 / MSE) with the peak taken jointly over both volumes.

    Returns ``math.inf`` when the volumes are identical.
    """
    a, b = _pair(estimate, reference)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    peak = max(a.max(), b.max())
    return float(10.0 * np.log10(peak ** 2 / mse))


@dataclass(frozen=True)
class SsimConstants:
    c1: float
    c2: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("SSIM constants must be positive")

    @classmethod
    def from_range(cls, dynamic_range: float, k1=0.01, k2=0.03):
        return cls((k1 * dynamic_range) ** 2, (k2 * dynamic_range) ** 2)


def ssim(estimate, reference, constants: SsimConstants | None = None) -> float:
    """Single global SSIM from whole-volume means, variances and covariance.

    Without explicit constants, c1 = (0.01 R)^2 and c2 = (0.03 R)^2 where R is
    the joint dynamic range of the two volumes (1 if both are constant).
    """
    a, b = _pair(estimate, reference)
    if constants is None:
        r = max(a.max(), b.max()) - min(a.min(), b.min())
        constants = SsimConstants.from_range(r if r > 0 else 1.0)
    c1, c2 = constants.c1, constants.c2
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a, var_b = np.mean(da * da), np.mean(db * db)
    cov = np.mean(da * db)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(num / den)


def two_sample_ttest(sample_a, sample_b) -> float:
    """Two-sided Welch t-test p-value."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 1.0
        raise ValueError("zero variance in both samples with different means")
    t = diff / math.sqrt(se2)
    dof = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), dof)))


@dataclass
class MetricCell:
    psnr_values: list[float] = field(default_factory=list)
    ssim_values: list[float] = field(default_factory=list)

    @property
    def finite_psnr(self):
        return [v for v in self.psnr_values if math.isfinite(v)]

    @property
    def n_infinite(self):
        return len(self.psnr_values) - len(self.finite_psnr)

    def summary(self):
        p = np.asarray(self.finite_psnr)
        s = np.asarray(self.ssim_values)
        nan = float("nan")
        return {
            "psnr_mean": float(p.mean()) if p.size else nan,
            "psnr_std": float(p.std()) if p.size else nan,
            "ssim_mean": float(s.mean()) if s.size else nan,
            "ssim_std": float(s.std()) if s.size else nan,
            "n": len(self.ssim_values),
        }


@dataclass
class MetricsReport:
    """Per-configuration, per-missing-modality PSNR/SSIM over test subjects."""

    modality_names: list[str]
    rows: dict[str, dict[int, MetricCell]]
    metadata: dict = field(default_factory=dict)

    @property
    def conditions(self):
        return [AvailabilityCondition.parse(k) for k in self.rows]

    def records(self):
        out = []
        for key, cells in self.rows.items():
            for idx in sorted(cells):
                rec = {"ac": key, "modality": self.modality_names[idx]}
                rec.update(cells[idx].summary())
                rec["n_infinite"] = cells[idx].n_infinite
                out.append(rec)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for rec in self.records():
            writer.writerow([rec["ac"], rec["modality"], f"{rec['psnr_mean']:.6f}", f"{rec['psnr_std']:.6f}",
                             f"{rec['ssim_mean']:.6f}", f"{rec['ssim_std']:.6f}", rec["n"]])
        return buf.getvalue()

    def to_table(self) -> str:
        names = self.modality_names
        width = 28
        head = " ".join(f"{n:^5}" for n in names) + " | " + " ".join(f"{n:^{width}}" for n in names)
        lines = ["Available modalities".ljust(len(names) * 6 - 1) + " | mean PSNR (std), mean SSIM (std)",
                 head, "-" * len(head)]
        for key, cells in self.rows.items():
            marks = " ".join(f"{'x' if c == '1' else '':^5}" for c in key)
            vals = []
            for idx in range(len(names)):
                if idx in cells:
                    s = cells[idx].summary()
                    vals.append(f"{s['psnr_mean']:.2f} ({s['psnr_std']:.2f}), {s['ssim_mean']:.3f} ({s['ssim_std']:.3f})")
                else:
                    vals.append("-")
            lines.append(marks + " | " + " ".join(f"{v:^{width}}" for v in vals))
        notes = [f"{r['ac']}/{r['modality']}: {r['n_infinite']} infinite PSNR value(s) excluded"
                 for r in self.records() if r["n_infinite"]]
        return "\n".join(lines + notes) + "\n"

    def mean_over(self, n_available=None, modality=None, metric="psnr"):
        """Average of per-cell means, optionally filtered."""
        vals = []
        for rec in self.records():
            key = rec["ac"]
            if n_available is not None and key.count("1") != n_available:
                continue
            if modality is not None and rec["modality"] != modality:
                continue
            vals.append(rec[f"{metric}_mean"])
        return float(np.mean(vals)) if vals else float("nan")


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in CSV_FIELDS[2:6]:
            row[key] = float(row[key])
        row["n"] = int(row["n"])
    return rows


@torch.no_grad()
def evaluate_matrix(generator, subjects, modality_names=None, conditions=None,
                    batch_size=16, ssim_constants=None, metadata=None) -> MetricsReport:
    """Score every missing modality under every valid availability condition.

    ``subjects`` is a list of per-subject arrays (S x M x H x W, already
    preprocessed).  PSNR/SSIM are computed per subject over its stacked
    slices, then aggregated.  ``generator`` may be a checkpoint path.
    """
    if isinstance(generator, (str, bytes)) or hasattr(generator, "__fspath__"):
        from .training import load_checkpoint
        generator = load_checkpoint(generator).generator
    generator.eval()
    m = generator.cfg.n_modalities
    if any(np.asarray(s).shape[1] != m for s in subjects):
        raise ValueError(f"dataset modality count does not match the model's {m}")
    names = list(modality_names or [f"M{i + 1}" for i in range(m)])
    conditions = conditions or all_conditions(m)
    rows = {}
    for ac in conditions:
        ac.check_training()
        cells = {i: MetricCell() for i in ac.missing}
        for vol in subjects:
            vol = torch.as_tensor(np.asarray(vol), dtype=torch.float32)
            preds = torch.cat([generator.synthesize(vol[s:s + batch_size], ac)
                               for s in range(0, len(vol), batch_size)])
            for i in ac.missing:
                est, ref = preds[:, i].numpy(), vol[:, i].numpy()
                cells[i].psnr_values.append(psnr(est, ref))
                cells[i].ssim_values.append(ssim(est, ref, ssim_constants))
        rows[str(ac)] = cells
    return MetricsReport(names, rows, dict(metadata or {}))
