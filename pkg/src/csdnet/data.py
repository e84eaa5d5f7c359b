"""Deterministic synthetic ultra-fine-grained dataset.

Every image is a shared smooth background plus a class-specific texture
patch at a jittered location plus per-image noise, quantized to the 8-bit
grid so in-memory data and PPM files hold identical values. All randomness
comes from splitmix64 streams keyed by (seed, purpose, class, index); the
only float math is arithmetic and bilinear interpolation, so generation is
byte-stable across platforms.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ppm import read_ppm, write_ppm
from .rng import Rng
from .tensor import bilinear_resize_array

_BG_GRID = 4  # coarse control grid upsampled into the smooth background


@dataclass
class SyntheticSpec:
    """Few samples per class with localized subcategory cues."""

    classes: int = 20
    images_per_class: int = 6
    image_size: int = 64
    patch_size: int = 8
    jitter: int = 6
    noise: float = 0.05
    seed: int = 1
    regime_check: bool = True  # keep per-class counts in the 3..11 regime

    def validate(self) -> None:
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.images_per_class < 2:
            raise ValueError(
                f"images_per_class must be >= 2 to allow a train/test split, "
                f"got {self.images_per_class}"
            )
        if self.regime_check and not 3 <= self.images_per_class <= 11:
            raise ValueError(
                f"images_per_class {self.images_per_class} outside the 3..11 regime "
                "(set regime_check false to override)"
            )
        if self.image_size < 8 or self.image_size % 8:
            raise ValueError(f"image_size must be a positive multiple of 8, got {self.image_size}")
        if not 1 <= self.patch_size <= self.image_size:
            raise ValueError(f"patch_size must be in 1..{self.image_size}, got {self.patch_size}")
        if self.jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, s, s) float64 on the 1/255 grid
    labels: np.ndarray  # (n,) int64
    is_train: np.ndarray  # (n,) bool
    classes: int

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.is_train)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.is_train)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.round(self.images * 255.0).astype(np.uint8).tobytes())
        h.update(self.labels.astype(np.int64).tobytes())
        h.update(self.is_train.astype(np.uint8).tobytes())
        return h.hexdigest()


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def class_patch(spec: SyntheticSpec, label: int) -> np.ndarray:
    """The deterministic 3 x p x p cue texture of one class.

    High-contrast binary texture at 2-pixel block granularity: the cue has
    to stand out from the flat background and survive a stride-8 feature
    pyramid, or nothing is learnable from 3 samples per class.
    """
    rng = Rng.derive(spec.seed, "patch", label)
    blocks = (spec.patch_size + 1) // 2
    bits = rng.uniform_array((3, blocks, blocks)) < 0.5
    coarse = np.where(bits, 0.0, 1.0)
    return coarse.repeat(2, axis=1).repeat(2, axis=2)[:, : spec.patch_size, : spec.patch_size]


def generate_dataset(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    s = spec.image_size
    bg_rng = Rng.derive(spec.seed, "background")
    background = bilinear_resize_array(
        bg_rng.uniform_array((3, _BG_GRID, _BG_GRID), 0.4, 0.6), s, s
    )

    n = spec.images_per_class
    n_train = n - n // 2  # e.g. 6 -> 3/3, 5 -> 3/2
    images, labels, is_train = [], [], []
    for label in range(spec.classes):
        patch = class_patch(spec, label)
        for idx in range(n):
            img = background.copy()
            pos_rng = Rng.derive(spec.seed, "jitter", label, idx)
            base = (s - spec.patch_size) // 2
            span = 2 * spec.jitter + 1
            top = int(np.clip(base + pos_rng.randint(span) - spec.jitter, 0, s - spec.patch_size))
            left = int(np.clip(base + pos_rng.randint(span) - spec.jitter, 0, s - spec.patch_size))
            img[:, top : top + spec.patch_size, left : left + spec.patch_size] = patch
            if spec.noise > 0:
                noise_rng = Rng.derive(spec.seed, "noise", label, idx)
                img += noise_rng.uniform_array(img.shape, -spec.noise, spec.noise)
            images.append(_quantize(img))
            labels.append(label)
            is_train.append(idx < n_train)

    return Dataset(
        images=np.stack(images),
        labels=np.array(labels, dtype=np.int64),
        is_train=np.array(is_train, dtype=bool),
        classes=spec.classes,
    )


# ---------------------------------------------------------------------------
# on-disk layout: images/<class>_<idx>.ppm + labels.csv (filename,label,split)
# ---------------------------------------------------------------------------

def write_dataset(ds: Dataset, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    counters = [0] * ds.classes
    for img, label, train in zip(ds.images, ds.labels, ds.is_train):
        label = int(label)
        name = f"images/{label}_{counters[label]}.ppm"
        counters[label] += 1
        write_ppm(out_dir / name, img)
        rows.append((name, label, "train" if train else "test"))
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label", "split"])
        writer.writerows(rows)


def load_dataset(data_dir: str | Path) -> Dataset:
    data_dir = Path(data_dir)
    index = data_dir / "labels.csv"
    if not index.is_file():
        raise FileNotFoundError(f"no labels.csv under {data_dir}")
    images, labels, is_train = [], [], []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            images.append(read_ppm(data_dir / row["filename"]))
            labels.append(int(row["label"]))
            is_train.append(row["split"] == "train")
    if not images:
        raise ValueError(f"empty dataset at {data_dir}")
    labels = np.array(labels, dtype=np.int64)
    return Dataset(
        images=np.stack(images),
        labels=labels,
        is_train=np.array(is_train, dtype=bool),
        classes=int(labels.max()) + 1,
    )
