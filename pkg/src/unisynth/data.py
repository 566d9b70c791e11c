"""Synthetic multi-modal phantoms, volume I/O, preprocessing and batching."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .conditioning import AvailabilityCondition, zero_impute

FORMAT_VERSION = 1
BACKGROUND, BRAIN, VENTRICLE, LESION = range(4)

# Per-modality intensity multipliers for (background, brain, ventricle, lesion).
DEFAULT_CONTRAST = (
    (0.0, 1.0, 0.15, 0.25),   # T1: dark fluid, hypo-intense lesion
    (0.0, 0.8, 0.9, 0.55),    # T2: bright fluid and lesion
    (0.0, 1.0, 0.15, 0.6),    # T1Gd: enhancing lesion
    (0.0, 0.9, 0.1, 0.55),    # FLAIR: suppressed fluid, bright lesion
)
DEFAULT_MODALITIES = ("T1", "T2", "T1Gd", "FLAIR")


class VolumeFormatError(ValueError):
    pass


class CorruptFileError(VolumeFormatError):
    pass


class UnsupportedFormatError(VolumeFormatError):
    pass


@dataclass
class MultiModalVolume:
    voxels: np.ndarray  # M x D x H x W
    modality_names: list[str]
    subject_id: str = ""

    def __post_init__(self):
        if self.voxels.ndim != 4:
            raise ValueError(f"voxels must be M x D x H x W, got shape {self.voxels.shape}")
        if len(self.modality_names) != self.voxels.shape[0]:
            raise ValueError("one modality name per channel required")
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError(f"non-finite intensities in subject {self.subject_id!r}")

    @property
    def n_modalities(self):
        return self.voxels.shape[0]

    @property
    def depth(self):
        return self.voxels.shape[1]


@dataclass
class PhantomSpec:
    n_modalities: int = 4
    size: tuple[int, int] = (64, 64)
    depth: int = 8
    blob_count: tuple[int, int] = (1, 3)
    contrast: tuple = DEFAULT_CONTRAST
    noise_std: float = 0.01
    modality_names: tuple = field(default=DEFAULT_MODALITIES)

    def validate(self):
        table = np.asarray(self.contrast, dtype=float)
        if table.size == 0 or table.ndim != 2:
            raise ValueError("contrast table is empty")
        if table.shape != (self.n_modalities, 4):
            raise ValueError(f"contrast table must be {self.n_modalities} x 4, got {table.shape}")
        if not np.all(np.isfinite(table)):
            raise ValueError("contrast multipliers must be finite")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if len(self.modality_names) != self.n_modalities:
            raise ValueError("need one modality name per modality")
        lo, hi = self.blob_count
        if not 0 <= lo <= hi:
            raise ValueError("bad blob count range")
        return table


def _ellipsoid(grid, center, radii):
    z, y, x = grid
    return (((z - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2
            + ((x - center[2]) / radii[2]) ** 2) <= 1.0


def phantom_tissue_map(rng: np.random.Generator, spec: PhantomSpec) -> np.ndarray:
    """Integer tissue labels (D x H x W) for one random subject."""
    d, (h, w) = spec.depth, spec.size
    grid = np.meshgrid(np.linspace(-1, 1, d) if d > 1 else np.zeros(1),
                       np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    labels = np.zeros((d, h, w), dtype=np.int64)
    head = _ellipsoid(grid, (0, rng.uniform(-.05, .05), rng.uniform(-.05, .05)),
                      (1.6, rng.uniform(.75, .9), rng.uniform(.6, .75)))
    labels[head] = BRAIN
    n_blobs = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    for _ in range(n_blobs):
        c = (rng.uniform(-.5, .5), rng.uniform(-.35, .35), rng.uniform(-.3, .3))
        r = (rng.uniform(.6, 1.2), rng.uniform(.08, .2), rng.uniform(.06, .15))
        labels[_ellipsoid(grid, c, r) & head] = VENTRICLE
    c = (rng.uniform(-.4, .4), rng.uniform(-.4, .4), rng.uniform(-.35, .35))
    r = rng.uniform(.15, .28)
    labels[_ellipsoid(grid, c, (3 * r, r, r)) & head] = LESION
    return labels


def generate_phantom_dataset(rng: np.random.Generator, spec: PhantomSpec,
                             n_subjects: int) -> list[MultiModalVolume]:
    """Render ``n_subjects`` co-registered phantom volumes.

    Every modality is ``label * contrast[modality, label]`` plus Gaussian
    noise inside the head, so all modalities of a subject share support.
    Subjects draw from independent child streams of ``rng``.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    table = spec.validate()
    seeds = [int(s) for s in rng.integers(0, 2**63, n_subjects)]
    volumes = []
    for idx, seed in enumerate(seeds):
        sub_rng = np.random.default_rng(seed)
        labels = phantom_tissue_map(sub_rng, spec)
        base = labels.astype(np.float64)
        support = labels > 0
        vox = np.empty((spec.n_modalities,) + labels.shape, dtype=np.float32)
        for m in range(spec.n_modalities):
            img = base * table[m][labels]
            if spec.noise_std > 0:
                img = img + support * sub_rng.normal(0.0, spec.noise_std, labels.shape)
            vox[m] = img
        volumes.append(MultiModalVolume(vox, list(spec.modality_names), f"sub{idx:04d}"))
    return volumes


def mean_normalize(volume: MultiModalVolume, nonzero_only: bool = True) -> MultiModalVolume:
    """Divide each modality by its mean intensity (over nonzero voxels by default)."""
    vox = volume.voxels.astype(np.float64)
    out = np.empty_like(vox)
    for m in range(vox.shape[0]):
        chan = vox[m]
        sel = chan[chan != 0] if nonzero_only else chan.ravel()
        if sel.size == 0 or not np.any(chan != 0):
            raise ValueError(f"modality {volume.modality_names[m]} is all zero; cannot normalize")
        mean = sel.mean()
        if mean == 0:
            raise ValueError(f"modality {volume.modality_names[m]} has zero mean")
        out[m] = chan / mean
    return MultiModalVolume(out.astype(volume.voxels.dtype), list(volume.modality_names),
                            volume.subject_id)


def center_window(dim: int, size: int) -> tuple[int, int]:
    if size > dim:
        raise ValueError(f"crop {size} larger than dimension {dim}")
    start = (dim - size) // 2
    return start, start + size


def extract_center_slices(volume: MultiModalVolume, n_slices: int,
                          crop: tuple[int, int] | None = None) -> list[np.ndarray]:
    """The ``n_slices`` middle axial slices, each center-cropped to ``crop``."""
    _, d, h, w = volume.voxels.shape
    if not 1 <= n_slices <= d:
        raise ValueError(f"cannot take {n_slices} slices from depth {d}")
    crop = crop or (h, w)
    r0, r1 = center_window(h, crop[0])
    c0, c1 = center_window(w, crop[1])
    z0, z1 = center_window(d, n_slices)
    return [volume.voxels[:, z, r0:r1, c0:c1] for z in range(z0, z1)]


def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".hdr")


def save_volume(volume: MultiModalVolume, path) -> Path:
    """Write ``<path>`` (raw little-endian float32) and ``<path>.hdr``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(volume.voxels, dtype="<f4")
    header = {
        "version": FORMAT_VERSION,
        "dims": list(data.shape),
        "modality_names": list(volume.modality_names),
        "subject_id": volume.subject_id,
        "dtype": "float32",
        "byte_order": "little",
    }
    path.write_bytes(data.tobytes(order="C"))
    _header_path(path).write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return path


def load_volume(path) -> MultiModalVolume:
    path = Path(path)
    try:
        header = json.loads(_header_path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: unreadable header ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise UnsupportedFormatError(f"{path}: unsupported format version {header.get('version')!r}")
    if header.get("dtype") != "float32":
        raise UnsupportedFormatError(f"{path}: unsupported element type {header.get('dtype')!r}")
    order = {"little": "<", "big": ">"}.get(header.get("byte_order"))
    if order is None:
        raise UnsupportedFormatError(f"{path}: unknown byte order {header.get('byte_order')!r}")
    dims = tuple(int(d) for d in header["dims"])
    names = header["modality_names"]
    if len(dims) != 4 or len(names) != dims[0]:
        raise CorruptFileError(f"{path}: header dims {dims} inconsistent with {len(names)} modality names")
    payload = path.read_bytes()
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise CorruptFileError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    vox = np.frombuffer(payload, dtype=order + "f4").reshape(dims).astype(np.float32)
    return MultiModalVolume(vox, list(names), header.get("subject_id", path.stem))


def write_dataset(root, splits: dict[str, list[MultiModalVolume]]) -> Path:
    """Write ``subjects/<id>.mmv`` files plus a JSON ``manifest``."""
    root = Path(root)
    manifest = {"version": FORMAT_VERSION, "splits": {}}
    for split, vols in splits.items():
        manifest["splits"][split] = []
        for vol in vols:
            save_volume(vol, root / "subjects" / f"{vol.subject_id}.mmv")
            manifest["splits"][split].append(vol.subject_id)
    (root / "manifest").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return root


def load_split(root, split: str) -> list[MultiModalVolume]:
    root = Path(root)
    manifest = json.loads((root / "manifest").read_text(encoding="utf-8"))
    if split not in manifest["splits"]:
        raise KeyError(f"split {split!r} not in manifest at {root}")
    return [load_volume(root / "subjects" / f"{sid}.mmv") for sid in manifest["splits"][split]]


def volumes_to_slices(volumes, n_slices=None, crop=None) -> np.ndarray:
    """Stack preprocessed slices of all volumes into an N x M x H x W array."""
    slices = []
    for vol in volumes:
        slices.extend(extract_center_slices(vol, n_slices or vol.depth, crop))
    return np.stack(slices).astype(np.float32)


@dataclass
class MultiModalBatch:
    pixels: torch.Tensor   # zero-imputed input, B x M x H x W
    condition: AvailabilityCondition
    targets: torch.Tensor  # complete ground truth


def make_batch(targets: torch.Tensor, ac: AvailabilityCondition) -> MultiModalBatch:
    return MultiModalBatch(zero_impute(targets, ac), ac, targets)


def iterate_batches(slices: np.ndarray, batch_size: int, rng: np.random.Generator | None = None,
                    drop_last: bool = False):
    """Yield B x M x H x W tensors, shuffled when ``rng`` is given."""
    n = len(slices)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            break
        yield torch.from_numpy(np.ascontiguousarray(slices[np.sort(idx) if rng is None else idx]))
