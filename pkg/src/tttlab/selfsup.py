"""Rotation prediction: the label-free auxiliary task.

Rotations are counter-clockwise multiples of 90 degrees: pixel ``(r, c)`` of
a 90-degree rotation reads source pixel ``(c, W - 1 - r)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError

NUM_ROTATIONS = 4


@dataclass
class RotationBatch:
    images: np.ndarray  # [M, C, H, W]
    rotation_labels: np.ndarray  # [M] in {0, 1, 2, 3}

    def __len__(self) -> int:
        return len(self.rotation_labels)


def rotate90(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate a ``[C, H, W]`` image by ``k * 90`` degrees counter-clockwise."""
    if int(k) != k or not 0 <= k < NUM_ROTATIONS:
        raise InputError(f"rotation index must be in {{0,1,2,3}}, got {k}")
    if image.ndim != 3:
        raise ShapeError(f"rotate90 expects a [C, H, W] image, got {image.shape}")
    return np.ascontiguousarray(np.rot90(image, int(k), axes=(1, 2)))


def rotate_batch(images: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Rotate each image of a square ``[N, C, H, W]`` batch by its own ``ks[i]``."""
    ks = np.asarray(ks)
    if images.shape[2] != images.shape[3]:
        raise ShapeError("rotate_batch needs square images")
    out = np.empty_like(images)
    for k in range(NUM_ROTATIONS):
        sel = np.flatnonzero(ks == k)
        if sel.size:
            out[sel] = np.rot90(images[sel], k, axes=(2, 3))
    return out


def augment(image: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Reflect-pad, random-crop back to size, then flip horizontally w.p. 1/2."""
    c, h, w = image.shape
    if h != w:
        raise ShapeError("augment expects a square image")
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    flip = rng.random() < 0.5
    return _crop_flip(image, pad, dy, dx, flip)


def _crop_flip(image, pad, dy, dx, flip):
    h, w = image.shape[1:]
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode="reflect") if pad else image
    out = padded[:, dy : dy + h, dx : dx + w]
    if flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def augment_batch(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Independent :func:`augment` draws for every image of a batch."""
    n, c, h, w = images.shape
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    out = np.empty_like(images)
    for i in range(n):
        dy, dx = offsets[i]
        crop = padded[i, :, dy : dy + h, dx : dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def make_test_batch(image: np.ndarray, copies: int, rng: np.random.Generator,
                    augmentation: bool = True, pad: int = 4) -> RotationBatch:
    """Augmented copies of a single image, each expanded into all four rotations.

    The result holds ``4 * copies`` images; copy ``i`` occupies rows
    ``4i .. 4i+3`` with rotation labels ``0, 1, 2, 3``.
    """
    if copies < 1:
        raise InputError(f"copies must be >= 1, got {copies}")
    if augmentation:
        base = augment_batch(np.broadcast_to(image, (copies,) + image.shape), rng, pad)
    else:
        base = np.broadcast_to(image, (copies,) + image.shape)
    c, h, w = image.shape
    imgs = np.empty((copies, NUM_ROTATIONS, c, h, w), dtype=image.dtype)
    for k in range(NUM_ROTATIONS):
        imgs[:, k] = np.rot90(base, k, axes=(2, 3))
    labels = np.tile(np.arange(NUM_ROTATIONS), copies)
    return RotationBatch(imgs.reshape(copies * NUM_ROTATIONS, c, h, w), labels)


def random_rotations(images: np.ndarray, rng: np.random.Generator) -> RotationBatch:
    """One uniformly drawn rotation per image (the joint-training composition)."""
    ks = rng.integers(0, NUM_ROTATIONS, size=len(images))
    return RotationBatch(rotate_batch(images, ks), ks)


def all_rotations(images: np.ndarray) -> RotationBatch:
    """Every image in all four rotations, rows grouped per source image."""
    n, c, h, w = images.shape
    out = np.empty((n, NUM_ROTATIONS, c, h, w), dtype=images.dtype)
    for k in range(NUM_ROTATIONS):
        out[:, k] = np.rot90(images, k, axes=(2, 3))
    return RotationBatch(out.reshape(n * NUM_ROTATIONS, c, h, w), np.tile(np.arange(NUM_ROTATIONS), n))
