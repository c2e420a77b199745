"""Y-shaped network: shared extractor, main-task branch, rotation branch.

Every parameter name starts with exactly one of ``extractor/``, ``main/`` or
``ssl/``. Blocks after the split point are duplicated in both branches; the
branches differ only in the width of their final linear layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ParamTape,
    Tensor,
    conv2d,
    global_avg_pool,
    group_norm,
    linear,
    relu,
    softmax,
    softmax_cross_entropy,
)
from .errors import ConfigError, ShapeError
from .selfsup import NUM_ROTATIONS, random_rotations

PREFIXES = ("extractor/", "main/", "ssl/")


def is_extractor(name: str) -> bool:
    return name.startswith("extractor/")


def is_main(name: str) -> bool:
    return name.startswith("main/")


def is_ssl(name: str) -> bool:
    return name.startswith("ssl/")


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    stride: int = 1
    groups: int = 8


@dataclass(frozen=True)
class YModelConfig:
    input_shape: Tuple[int, int, int] = (3, 32, 32)
    blocks: Tuple[BlockSpec, ...] = (BlockSpec(16, 1, 8), BlockSpec(32, 2, 8), BlockSpec(64, 2, 8))
    split_index: int = 2
    main_classes: int = 10
    ssl_classes: int = NUM_ROTATIONS
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(
            self, "blocks", tuple(b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks)
        )
        self.validate()

    def validate(self) -> None:
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if not self.blocks:
            raise ConfigError("at least one block is required")
        if not 1 <= self.split_index <= len(self.blocks):
            raise ConfigError(f"split_index {self.split_index} outside [1, {len(self.blocks)}]")
        if self.ssl_classes != NUM_ROTATIONS:
            raise ConfigError("ssl_classes must be 4 (rotation task)")
        if self.main_classes < 2:
            raise ConfigError("main_classes must be >= 2")
        for b in self.blocks:
            if b.channels % b.groups or b.stride < 1:
                raise ConfigError(f"bad block {b}: channels must divide into groups, stride >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "YModelConfig":
        d = dict(d)
        d["blocks"] = tuple(BlockSpec(**b) for b in d["blocks"])
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


def _block_names(prefix: str, idx: int) -> Tuple[str, str, str]:
    base = f"{prefix}block{idx + 1}/"
    return base + "conv", base + "gn_gamma", base + "gn_beta"


class YModel:
    """Parameters (a :class:`ParamTape`) plus the architecture that uses them."""

    def __init__(self, tape: ParamTape, config: YModelConfig):
        self.tape = tape
        self.config = config

    # -- construction -------------------------------------------------------
    def clone(self) -> "YModel":
        return YModel(self.tape.clone(), self.config)

    def num_parameters(self, mask: Optional[Callable[[str], bool]] = None) -> int:
        return self.tape.num_parameters(mask)

    def branch_block_indices(self) -> range:
        return range(self.config.split_index, len(self.config.blocks))

    # -- forward ------------------------------------------------------------
    def params(self, trainable: Optional[Callable[[str], bool]] = None) -> Dict[str, Tensor]:
        """Parameter tensors for one forward pass.

        Names selected by ``trainable`` are the live tape leaves (gradients
        flow into them); all others are wrapped as constants.
        """
        return {
            n: (t if trainable is not None and trainable(n) else Tensor(t.data))
            for n, t in self.tape.items()
        }

    def _block(self, p, prefix, idx, h):
        spec = self.config.blocks[idx]
        conv, gamma, beta = _block_names(prefix, idx)
        h = conv2d(h, p[conv], stride=spec.stride, padding=1, layout="NHWC")
        h = group_norm(h, spec.groups, p[gamma], p[beta], layout="NHWC")
        return relu(h)

    def extract(self, p: Mapping[str, Tensor], x: Tensor) -> Tensor:
        h = x
        for i in range(self.config.split_index):
            h = self._block(p, "extractor/", i, h)
        return h

    def head(self, p: Mapping[str, Tensor], prefix: str, h: Tensor) -> Tensor:
        for i in self.branch_block_indices():
            h = self._block(p, prefix, i, h)
        h = global_avg_pool(h, layout="NHWC")
        return linear(h, p[prefix + "head/weight"], p[prefix + "head/bias"])

    def _as_input(self, images) -> Tensor:
        arr = np.asarray(images, dtype=self.config.dtype)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.shape[1:] != self.config.input_shape:
            raise ShapeError(f"expected images of shape {self.config.input_shape}, got {arr.shape[1:]}")
        # activations are kept channels-last internally
        return Tensor(np.ascontiguousarray(arr.transpose(0, 2, 3, 1)))

    def main_logits(self, images, p=None) -> Tensor:
        p = self.params() if p is None else p
        return self.head(p, "main/", self.extract(p, self._as_input(images)))

    def ssl_logits(self, images, p=None) -> Tensor:
        p = self.params() if p is None else p
        return self.head(p, "ssl/", self.extract(p, self._as_input(images)))

    def ssl_loss(self, images, rotation_labels, p=None) -> Tensor:
        return softmax_cross_entropy(self.ssl_logits(images, p), rotation_labels)

    def predict_proba(self, images, batch_size: int = 256) -> np.ndarray:
        """Main-task class probabilities for a batch, without recording a graph."""
        arr = np.asarray(images)
        if arr.ndim == 3:
            arr = arr[None]
        p = self.params()
        out = [softmax(self.main_logits(arr[i : i + batch_size], p).data) for i in range(0, len(arr), batch_size)]
        return np.concatenate(out, axis=0)


def build_model(cfg: YModelConfig, seed: int) -> YModel:
    """Deterministically initialise a Y-model (He-uniform convs, fan-in-uniform heads)."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    tape = ParamTape()

    def add_block(prefix, idx, in_ch):
        spec = cfg.blocks[idx]
        conv, gamma, beta = _block_names(prefix, idx)
        fan_in = in_ch * 9
        bound = np.sqrt(6.0 / fan_in)
        tape.add(conv, rng.uniform(-bound, bound, size=(spec.channels, in_ch, 3, 3)).astype(dtype))
        tape.add(gamma, np.ones(spec.channels, dtype=dtype))
        tape.add(beta, np.zeros(spec.channels, dtype=dtype))
        return spec.channels

    ch = cfg.input_shape[0]
    for i in range(cfg.split_index):
        ch = add_block("extractor/", i, ch)
    split_ch = ch
    for prefix, classes in (("main/", cfg.main_classes), ("ssl/", cfg.ssl_classes)):
        ch = split_ch
        for i in range(cfg.split_index, len(cfg.blocks)):
            ch = add_block(prefix, i, ch)
        bound = 1.0 / np.sqrt(ch)
        tape.add(prefix + "head/weight", rng.uniform(-bound, bound, size=(classes, ch)).astype(dtype))
        tape.add(prefix + "head/bias", rng.uniform(-bound, bound, size=classes).astype(dtype))
    return YModel(tape, cfg)


def predict(model: YModel, image) -> Tuple[int, np.ndarray]:
    """Label (argmax, lowest index on ties) and class probabilities for one image."""
    arr = np.asarray(image)
    if arr.shape != model.config.input_shape:
        raise ShapeError(f"expected one image of shape {model.config.input_shape}, got {arr.shape}")
    probs = model.predict_proba(arr[None])[0].astype(np.float64)
    return int(np.argmax(probs)), probs


def joint_loss(model: YModel, images, labels, rng: np.random.Generator,
               trainable: Optional[Callable[[str], bool]] = None) -> Tuple[Tensor, Tensor]:
    """Main-task and rotation losses on one batch.

    ``l_s`` is computed on a random rotation of each image; both halves share
    one extractor pass, so the extractor gradient of ``l_m + l_s`` is the sum
    of the two branch contributions.
    """
    images = np.asarray(images, dtype=model.config.dtype)
    labels = np.asarray(labels)
    n = len(images)
    if n == 0:
        raise ShapeError("joint_loss needs a non-empty batch")
    rot = random_rotations(images, rng)
    p = model.params(trainable if trainable is not None else (lambda name: True))
    h = model.extract(p, model._as_input(np.concatenate([images, rot.images], axis=0)))
    l_m = softmax_cross_entropy(model.head(p, "main/", h[0:n]), labels)
    l_s = softmax_cross_entropy(model.head(p, "ssl/", h[n : 2 * n]), rot.rotation_labels)
    return l_m, l_s


# Four-block variant used for the desk-scale experiments: downsampling in the
# first three blocks keeps a TTT step cheap, and the extra post-split block
# widens the receptive field enough for rotation prediction to be learnable.
DESK_CONFIG = YModelConfig(
    blocks=(BlockSpec(16, 2, 8), BlockSpec(32, 2, 8), BlockSpec(64, 2, 8), BlockSpec(64, 1, 8)),
    split_index=3,
)
PRESETS = {"three-block": YModelConfig(), "desk": DESK_CONFIG}
