"""Severity-parameterised image corruptions and gradual-shift streams.

Every corruption maps a ``[C, H, W]`` image in ``[0, 1]`` to another image in
``[0, 1]`` and is deterministic given ``(seed, image)``. The continuous
parameter of each kind is the quantity named in :data:`PARAM_NAMES`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError

KINDS = ("gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur", "pixelate", "contrast", "brightness")
NOISE_KINDS = ("gaussian_noise", "shot_noise", "impulse_noise")

PARAM_NAMES = {
    "gaussian_noise": "sigma",
    "shot_noise": "photons",  # lambda; smaller is noisier
    "impulse_noise": "fraction",
    "defocus_blur": "radius",
    "pixelate": "factor",
    "contrast": "c",  # smaller is more severe
    "brightness": "b",
}

# Level 1..5 parameters. Ordered so severity increases with level; for
# shot_noise and contrast that means a decreasing parameter.
SEVERITY = {
    "gaussian_noise": (0.12, 0.18, 0.22, 0.26, 0.30),
    "shot_noise": (60.0, 25.0, 12.0, 7.0, 5.0),
    "impulse_noise": (0.03, 0.06, 0.09, 0.17, 0.27),
    "defocus_blur": (1.0, 1.5, 2.0, 2.5, 3.0),
    "pixelate": (2, 3, 4, 5, 6),
    "contrast": (0.75, 0.5, 0.4, 0.3, 0.15),
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),
}

NULL_PARAM = {
    "gaussian_noise": 0.0,
    "shot_noise": np.inf,
    "impulse_noise": 0.0,
    "defocus_blur": 0.0,
    "pixelate": 1,
    "contrast": 1.0,
    "brightness": 0.0,
}


@dataclass(frozen=True)
class CorruptionSpec:
    """A test distribution: a kind plus either a severity level or a raw parameter."""

    kind: str
    severity: Optional[int] = None
    param: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if (self.severity is None) == (self.param is None):
            raise ConfigError("give exactly one of severity or param")
        if self.severity is not None and self.severity not in (1, 2, 3, 4, 5):
            raise InputError(f"severity must be in 1..5, got {self.severity}")

    @property
    def value(self) -> float:
        return severity_params(self.kind, self.severity) if self.severity is not None else self.param


def severity_params(kind: str, level: int) -> float:
    """Parameter of ``kind`` at severity ``level`` (1..5)."""
    if kind not in KINDS:
        raise ConfigError(f"unknown corruption kind {kind!r}")
    if int(level) != level or not 1 <= level <= 5:
        raise InputError(f"severity level must be in 1..5, got {level}")
    return SEVERITY[kind][int(level) - 1]


def disk_kernel(radius: float) -> np.ndarray:
    """Normalised disk (pillbox) kernel, anti-aliased by 4x supersampling."""
    if radius <= 0:
        return np.ones((1, 1))
    half = int(np.ceil(radius))
    ss = 4
    t = (np.arange((2 * half + 1) * ss) + 0.5) / ss - (half + 0.5)
    yy, xx = np.meshgrid(t, t, indexing="ij")
    inside = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    k = inside.reshape(2 * half + 1, ss, 2 * half + 1, ss).mean(axis=(1, 3))
    return k / k.sum()


def _poisson(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson samples: inversion for small means, normal approximation above 50."""
    u = rng.random(lam.shape)
    z = rng.standard_normal(lam.shape)
    out = np.empty(lam.shape)
    big = lam > 50
    out[big] = np.maximum(np.rint(lam[big] + np.sqrt(lam[big]) * z[big]), 0)
    small = ~big
    lam_s = lam[small]
    us = u[small]
    k = np.zeros(lam_s.shape)
    p = np.exp(-lam_s)
    cdf = p.copy()
    active = us > cdf
    n = 0
    while active.any():
        n += 1
        p = np.where(active, p * lam_s / n, p)
        cdf = np.where(active, cdf + p, cdf)
        k = np.where(active, n, k)
        active &= us > cdf
        if n > 200:  # tail mass is ~0 for lambda <= 50
            break
    out[small] = k
    return out


def apply_corruption(image: np.ndarray, kind: str, param: float, rng: np.random.Generator) -> np.ndarray:
    """Apply one corruption with an explicit parameter value."""
    if kind not in KINDS:
        raise ConfigError(f"unknown corruption kind {kind!r}")
    x = np.asarray(image, dtype=np.float64)
    if kind == "gaussian_noise":
        out = x + rng.standard_normal(x.shape) * param if param > 0 else x
    elif kind == "shot_noise":
        out = x if not np.isfinite(param) else _poisson(x * param, rng) / param
    elif kind == "impulse_noise":
        out = x.copy()
        if param > 0:
            hit = rng.random(x.shape) < param
            salt = rng.random(x.shape) < 0.5
            out[hit] = salt[hit].astype(np.float64)
    elif kind == "defocus_blur":
        k = disk_kernel(param)
        out = x if k.size == 1 else np.stack([ndimage.convolve(ch, k, mode="reflect") for ch in x])
    elif kind == "pixelate":
        f = int(param)
        if f != param or f < 1:
            raise InputError("pixelate factor must be a positive integer")
        out = x if f == 1 else _pixelate(x, f)
    elif kind == "contrast":
        mean = x.mean(axis=(1, 2), keepdims=True)
        out = (x - mean) * param + mean
    else:
        out = x + param
    return np.clip(out, 0.0, 1.0).astype(np.asarray(image).dtype)


def _pixelate(x: np.ndarray, f: int) -> np.ndarray:
    c, h, w = x.shape
    hb, wb = -(-h // f), -(-w // f)
    padded = np.pad(x, ((0, 0), (0, hb * f - h), (0, wb * f - w)), mode="edge")
    small = padded.reshape(c, hb, f, wb, f).mean(axis=(2, 4))
    return np.repeat(np.repeat(small, f, axis=1), f, axis=2)[:, :h, :w]


def _image_rng(seed: int, image: np.ndarray) -> np.random.Generator:
    # seeded from (spec seed, image bytes) so equal inputs give equal outputs
    digest = np.frombuffer(np.ascontiguousarray(image, dtype=np.float32).tobytes(), dtype=np.uint32)
    mix = int(np.bitwise_xor.reduce(digest * np.uint32(2654435761) + np.arange(digest.size, dtype=np.uint32)))
    return np.random.default_rng([seed, mix, digest.size])


def corrupt(image: np.ndarray, spec: CorruptionSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Corrupt one image; the noise stream defaults to one derived from ``(spec.seed, image)``."""
    image = np.asarray(image)
    if image.size and (image.min() < 0 or image.max() > 1):
        raise InputError("images must lie in [0, 1]")
    rng = _image_rng(spec.seed, image) if rng is None else rng
    return apply_corruption(image, spec.kind, spec.value, rng)


def corrupt_dataset(images: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Corrupt a stack of images; image ``i`` uses the stream ``(spec.seed, i)``."""
    out = np.empty_like(images)
    value = spec.value
    for i, img in enumerate(images):
        out[i] = apply_corruption(img, spec.kind, value, np.random.default_rng([spec.seed, i]))
    return out


def interpolated_params(kind: str, n: int) -> np.ndarray:
    """Parameters moving linearly from the level-1 to the level-5 value.

    Entry ``t`` corresponds to position ``t / (n - 1)`` of the stream, so the
    first and last samples get exactly the level-1 and level-5 values.
    """
    lo, hi = severity_params(kind, 1), severity_params(kind, 5)
    pos = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    vals = lo * (1.0 - pos) + hi * pos  # exact at both ends
    if kind == "pixelate":
        vals = np.rint(vals)
    return vals


def gradual_stream(images: np.ndarray, labels: np.ndarray, kind: str, n: int,
                   seed: int = 0) -> Iterator[Tuple[np.ndarray, int, float]]:
    """Yield ``(corrupted image, label, param)`` with severity rising along the stream."""
    if n > len(images):
        raise InputError(f"stream length {n} exceeds dataset size {len(images)}")
    params = interpolated_params(kind, n)
    for t in range(n):
        rng = np.random.default_rng([seed, t])
        yield apply_corruption(images[t], kind, params[t], rng), int(labels[t]), float(params[t])
