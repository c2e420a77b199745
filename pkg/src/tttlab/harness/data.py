"""Datasets: CIFAR-10 binary ingestion and a procedural 32x32 substitute."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import FormatError, InputError

CIFAR_CLASSES = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_RECORDS_PER_FILE = 10_000
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
DATA_DIR_ENV = "TTTLAB_DATA_DIR"


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    class_names: List[str]
    provenance: str = "synthetic"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) == 0:
            raise InputError("a dataset needs at least one sample")
        if len(self.images) != len(self.labels):
            raise InputError("images and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
            raise InputError("labels outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.class_names, self.provenance)

    def with_images(self, images: np.ndarray) -> "Dataset":
        return Dataset(images, self.labels, self.class_names, self.provenance)


def default_data_dir(override=None) -> Path:
    """``override`` wins, then ``$TTTLAB_DATA_DIR``, then ``./data``."""
    if override:
        return Path(override)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


# -- CIFAR-10 binary ---------------------------------------------------------

def read_cifar_file(path, expected_records: int = CIFAR_RECORDS_PER_FILE) -> Tuple[np.ndarray, np.ndarray]:
    """Parse one CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: missing CIFAR-10 batch file")
    raw = np.fromfile(path, dtype=np.uint8)
    full, rest = divmod(raw.size, CIFAR_RECORD)
    if rest or (expected_records is not None and full != expected_records):
        record = full
        raise FormatError(
            f"{path}: truncated at byte offset {raw.size} inside record {record} "
            f"(expected {expected_records} records of {CIFAR_RECORD} bytes)"
        )
    rec = raw.reshape(full, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise FormatError(f"{path}: record {bad} has label byte {labels[bad]} outside [0, 10)")
    images = rec[:, 1:].reshape(full, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def write_cifar_file(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of :func:`read_cifar_file` (pixels rounded to bytes)."""
    images = np.asarray(images)
    pix = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8).reshape(len(images), -1)
    if pix.shape[1] != CIFAR_RECORD - 1:
        raise InputError("CIFAR records hold 3x32x32 images")
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pix], axis=1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    rec.tofile(path)


def load_cifar10(directory) -> Tuple[Dataset, Dataset]:
    """Load the five training batches and the test batch from ``directory``."""
    directory = Path(directory)
    parts = [read_cifar_file(directory / name) for name in CIFAR_TRAIN_FILES]
    train = Dataset(
        np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), CIFAR_CLASSES, "cifar10"
    )
    test = Dataset(*read_cifar_file(directory / CIFAR_TEST_FILE), CIFAR_CLASSES, "cifar10")
    return train, test


# -- procedural shapes -------------------------------------------------------
# Shapes live in a unit frame with y pointing up; each is a union of
# rectangles, triangles and (half-)disks. None is invariant under a
# 90-degree rotation, and none is a rotation of another.

def _rect(x0, x1, y0, y1):
    return ("rect", (x0, x1, y0, y1))


def _tri(a, b, c):
    return ("tri", (a, b, c))


def _halfdisk(cx, cy, r):
    return ("halfdisk", (cx, cy, r))


SHAPES = {
    "arrow": [_rect(-0.16, 0.16, -0.9, 0.15), _tri((-0.6, 0.1), (0.6, 0.1), (0.0, 0.9))],
    "ell": [_rect(-0.6, -0.28, -0.85, 0.85), _rect(-0.6, 0.35, -0.85, -0.55)],
    "tee": [_rect(-0.75, 0.75, 0.5, 0.85), _rect(-0.17, 0.17, -0.85, 0.5)],
    "peak": [_tri((-0.8, -0.75), (0.8, -0.75), (0.0, 0.85))],
    "house": [_rect(-0.6, 0.6, -0.85, 0.05), _tri((-0.8, 0.05), (0.8, 0.05), (0.0, 0.85))],
    "eff": [_rect(-0.55, -0.25, -0.85, 0.85), _rect(-0.55, 0.6, 0.55, 0.85), _rect(-0.55, 0.3, -0.05, 0.22)],
    "dome": [_halfdisk(0.0, -0.45, 0.85), _rect(-0.85, 0.85, -0.6, -0.45)],
    "stairs": [_rect(-0.8, 0.8, -0.85, -0.45), _rect(-0.8, 0.2, -0.45, 0.1), _rect(-0.8, -0.35, 0.1, 0.8)],
    "cup": [_rect(-0.7, -0.42, -0.85, 0.7), _rect(0.42, 0.7, -0.85, 0.7), _rect(-0.7, 0.7, -0.85, -0.55)],
    "dagger": [_rect(-0.14, 0.14, -0.9, 0.8), _rect(-0.6, 0.6, 0.25, 0.5)],
}
SHAPE_NAMES = list(SHAPES)


def _half_plane(px, py, a, b):
    return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])


def _shape_mask(name: str, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    mask = np.zeros(px.shape, dtype=bool)
    for kind, args in SHAPES[name]:
        if kind == "rect":
            x0, x1, y0, y1 = args
            mask |= (px >= x0) & (px <= x1) & (py >= y0) & (py <= y1)
        elif kind == "tri":
            a, b, c = args
            s1, s2, s3 = _half_plane(px, py, a, b), _half_plane(px, py, b, c), _half_plane(px, py, c, a)
            mask |= ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
        else:
            cx, cy, r = args
            mask |= ((px - cx) ** 2 + (py - cy) ** 2 <= r * r) & (py >= cy)
    return mask


def _smooth_field(rng, size, cells):
    """Isotropic low-frequency noise in [-1, 1] by bilinear upsampling."""
    grid = rng.uniform(-1, 1, size=(cells + 1, cells + 1))
    t = np.linspace(0, cells, size)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    rows = grid[i] * (1 - f)[:, None] + grid[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def render_shape(name: str, rng: np.random.Generator, size: int = 32, supersample: int = 2) -> np.ndarray:
    """One ``[3, size, size]`` image of ``name`` with random pose, colour and texture."""
    angle = np.deg2rad(rng.uniform(-15, 15))
    scale = rng.uniform(0.55, 0.8)
    tx, ty = rng.uniform(-0.15, 0.15, size=2)
    aspect = rng.uniform(0.85, 1.15)

    ss = size * supersample
    coords = (np.arange(ss) + 0.5) / ss * 2 - 1
    gx, gy = np.meshgrid(coords, -coords)  # y up
    # inverse pose: image frame -> shape frame
    ux, uy = gx - tx, gy - ty
    c, s = np.cos(angle), np.sin(angle)
    px = (c * ux + s * uy) / (scale * aspect)
    py = (-s * ux + c * uy) / (scale / aspect)
    cover = _shape_mask(name, px, py).astype(np.float32)
    cover = cover.reshape(size, supersample, size, supersample).mean(axis=(1, 3))

    bg = rng.uniform(0.1, 0.9, size=3)
    fg = rng.uniform(0.1, 0.9, size=3)
    while abs(fg.mean() - bg.mean()) < 0.25:
        fg = rng.uniform(0.05, 0.95, size=3)
    # light from above: the shape is brighter at its top
    yy = np.linspace(1, -1, size)[:, None]
    shade = 1 + 0.2 * yy * rng.uniform(0.5, 1.0)
    texture = 0.06 * _smooth_field(rng, size, 4)
    img = np.empty((3, size, size), dtype=np.float32)
    for ch in range(3):
        shape_col = np.clip(fg[ch] * shade, 0, 1)
        img[ch] = cover * shape_col + (1 - cover) * bg[ch] + texture
    return np.clip(img, 0, 1)


def gen_synthetic(seed: int, n: int, classes: int = 10, size: int = 32) -> Dataset:
    """Deterministic procedural dataset of ``n`` shape images, balanced over classes."""
    if not 2 <= classes <= len(SHAPES):
        raise InputError(f"classes must be in [2, {len(SHAPES)}]")
    if n < 1:
        raise InputError("n must be positive")
    rng = np.random.default_rng([seed, n, classes])
    labels = rng.permutation(np.arange(n) % classes)
    images = np.stack([render_shape(SHAPE_NAMES[k], rng, size) for k in labels])
    return Dataset(images, labels, SHAPE_NAMES[:classes], f"synthetic({seed})")
