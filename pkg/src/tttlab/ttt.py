"""Test-time training: standard (per-sample, discarded) and online (carried).

Both variants minimise the rotation loss on a batch built from the single
test image, updating the shared extractor (optionally also the rotation
branch) with plain SGD, then predict with the main branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .core import SgdConfig, backward, sgd_step
from .errors import ConfigError
from .selfsup import make_test_batch
from .ymodel import YModel, is_extractor, is_ssl, predict

STANDARD, ONLINE = "standard", "online"
EXTRACTOR_ONLY, EXTRACTOR_AND_SSL = "extractor_only", "extractor_and_ssl"
DEFAULT_STEPS = {STANDARD: 10, ONLINE: 1}


@dataclass(frozen=True)
class TTTConfig:
    mode: str = STANDARD
    steps: Optional[int] = None  # None -> 10 (standard) / 1 (online)
    learning_rate: float = 0.001
    copies: int = 4  # augmented copies; the batch holds 4 rotations of each
    update_scope: str = EXTRACTOR_ONLY
    threshold: Optional[float] = None
    augmentation: bool = True

    def __post_init__(self):
        if self.mode not in DEFAULT_STEPS:
            raise ConfigError(f"mode must be 'standard' or 'online', got {self.mode!r}")
        if self.steps is None:
            object.__setattr__(self, "steps", DEFAULT_STEPS[self.mode])
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.copies < 1:
            raise ConfigError("copies must be >= 1")
        if self.update_scope not in (EXTRACTOR_ONLY, EXTRACTOR_AND_SSL):
            raise ConfigError(f"unknown update_scope {self.update_scope!r}")

    @property
    def sgd(self) -> SgdConfig:
        # no momentum and no weight decay at test time
        return SgdConfig(self.learning_rate, momentum=0.0, weight_decay=0.0)

    def scope(self, name: str) -> bool:
        if self.update_scope == EXTRACTOR_ONLY:
            return is_extractor(name)
        return is_extractor(name) or is_ssl(name)

    def as_mode(self, mode: str) -> "TTTConfig":
        return replace(self, mode=mode, steps=None if self.steps == DEFAULT_STEPS[self.mode] else self.steps)


def _ssl_batch(image, cfg: TTTConfig, rng):
    return make_test_batch(np.asarray(image), cfg.copies, rng, augmentation=cfg.augmentation)


def adapt(model: YModel, image, cfg: TTTConfig, rng: np.random.Generator) -> dict:
    """Run ``cfg.steps`` SGD steps on the rotation loss of ``image``, in place.

    Every step draws a fresh augmented batch. Returns diagnostics: the
    rotation loss on the first batch before and after the updates, and
    whether the optional loss gate let adaptation run.
    """
    first = _ssl_batch(image, cfg, rng)
    if cfg.steps == 0:
        pre = float(model.ssl_loss(first.images, first.rotation_labels).data)
        return {"ran": False, "pre_ssl": pre, "post_ssl": pre}
    p = model.params(cfg.scope)
    loss = model.ssl_loss(first.images, first.rotation_labels, p)
    pre = float(loss.data)
    if cfg.threshold is not None and not pre > cfg.threshold:
        return {"ran": False, "pre_ssl": pre, "post_ssl": pre}
    sgd = cfg.sgd
    for step in range(cfg.steps):
        if step:
            batch = _ssl_batch(image, cfg, rng)
            loss = model.ssl_loss(batch.images, batch.rotation_labels, model.params(cfg.scope))
        backward(loss, model.tape)
        sgd_step(model.tape, sgd, cfg.scope)
    post = float(model.ssl_loss(first.images, first.rotation_labels).data)
    return {"ran": True, "pre_ssl": pre, "post_ssl": post}


def ttt_predict_standard(model: YModel, image, cfg: TTTConfig,
                         rng: np.random.Generator) -> Tuple[int, np.ndarray, dict]:
    """Adapt a copy of ``model`` to ``image``, predict, and discard the copy."""
    if cfg.mode != STANDARD:
        raise ConfigError("ttt_predict_standard needs cfg.mode == 'standard'")
    work = model.clone()
    diag = adapt(work, image, cfg, rng)
    label, probs = predict(work, image)
    return label, probs, diag


@dataclass
class OnlineState:
    """Live model carried along a test stream; ``main/`` never changes."""

    model: YModel
    samples_seen: int = 0

    @classmethod
    def start(cls, model: YModel) -> "OnlineState":
        return cls(model.clone(), 0)


def ttt_predict_online(state: OnlineState, image, cfg: TTTConfig,
                       rng: np.random.Generator) -> Tuple[int, np.ndarray, OnlineState]:
    """Learn on ``image`` (updating the carried extractor), then predict.

    Returns ``(label, probs, state)``; the state is updated in place and also
    returned. The per-sample diagnostics are stored on ``state.last``.
    """
    if cfg.mode != ONLINE:
        raise ConfigError("ttt_predict_online needs cfg.mode == 'online'")
    diag = adapt(state.model, image, cfg, rng)
    label, probs = predict(state.model, image)
    state.samples_seen += 1
    state.last = diag
    return label, probs, state


def ssl_gate(model: YModel, image, threshold: float, rng: np.random.Generator, copies: int = 4,
             augmentation: bool = True) -> bool:
    """True when the rotation loss on the test batch exceeds ``threshold``."""
    batch = make_test_batch(np.asarray(image), copies, rng, augmentation=augmentation)
    return bool(float(model.ssl_loss(batch.images, batch.rotation_labels).data) > threshold)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for test sample ``index`` (order-independent evaluation)."""
    return np.random.default_rng([seed, index])
