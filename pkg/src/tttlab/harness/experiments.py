"""Desk-scale experiment recipes shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..corruptions import KINDS, CorruptionSpec, corrupt_dataset, gradual_stream
from ..ttt import TTTConfig
from ..ymodel import DESK_CONFIG, YModel, YModelConfig, build_model
from .data import Dataset, gen_synthetic
from .evaluate import JOINT_FIXED, TTT, TTT_ONLINE, EvalRecord, error_rate, evaluate
from .train import TrainConfig, train_joint


@dataclass(frozen=True)
class DeskSetup:
    """Synthetic substrate and training recipe, frozen after one tuning pass."""

    n_train: int = 5000
    n_test: int = 2000
    train_seed: int = 1
    test_seed: int = 2
    model: YModelConfig = DESK_CONFIG
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))

    def data(self) -> Tuple[Dataset, Dataset]:
        return gen_synthetic(self.train_seed, self.n_train), gen_synthetic(self.test_seed, self.n_test)


def train_model(setup: DeskSetup, seed: int, train: Optional[Dataset] = None,
                main_only: bool = False) -> Tuple[YModel, List[dict]]:
    """Initialise from ``seed`` and train (jointly, or main task only)."""
    train = train if train is not None else setup.data()[0]
    cfg = setup.train if not main_only else TrainConfig(**{**setup.train.__dict__, "main_only": True})
    return train_joint(build_model(setup.model, seed), train, cfg, seed)


def corrupted(test: Dataset, kind: str, level: int, seed: int = 0) -> Dataset:
    return test.with_images(corrupt_dataset(test.images, CorruptionSpec(kind, level, seed=seed)))


def default_settings(levels: Sequence[int] = (3, 4, 5)) -> List[Tuple[str, int]]:
    return [(k, lv) for k in KINDS for lv in levels]


def correlation_study(model: YModel, test: Dataset, settings: Sequence[Tuple[str, int]],
                      cfg: Optional[TTTConfig] = None, seed: int = 0) -> List[Dict]:
    """Per corruption setting: mean extractor-gradient inner product and TTT gain.

    The gain is ``error(joint_fixed) - error(ttt)``; the inner product is the
    mean over the test set, measured on the unadapted model.
    """
    rows = []
    for kind, level in settings:
        data = corrupted(test, kind, level, seed)
        fixed = evaluate(model, data, JOINT_FIXED, cfg, seed)
        adapted = evaluate(model, data, TTT, cfg, seed, inner_product=True)
        je, te = error_rate(fixed), error_rate(adapted)
        rows.append({
            "kind": kind, "level": level,
            "inner_product": float(np.mean([r.inner_product for r in adapted])),
            "joint_error": je, "ttt_error": te, "improvement": je - te,
        })
    return rows


def gradual_dataset(test: Dataset, kind: str, n: int, seed: int = 0) -> Dataset:
    """The first ``n`` test images with severity rising from level 1 to 5, in order."""
    images = np.stack([img for img, _, _ in gradual_stream(test.images, test.labels, kind, n, seed)])
    return Dataset(images, test.labels[:n], test.class_names, test.provenance)


def gradual_experiment(model: YModel, test: Dataset, kind: str = "gaussian_noise", n: Optional[int] = None,
                       cfg: Optional[TTTConfig] = None, seed: int = 0) -> Dict[str, List[EvalRecord]]:
    """Fixed and online-adapted predictions along an unshuffled gradual-shift stream."""
    data = gradual_dataset(test, kind, n or len(test), seed)
    return {
        JOINT_FIXED: evaluate(model, data, JOINT_FIXED, cfg, seed),
        TTT_ONLINE: evaluate(model, data, TTT_ONLINE, cfg, seed, shuffle=False),
    }


def last_decile_error(records: Sequence[EvalRecord]) -> float:
    k = max(1, len(records) // 10)
    return error_rate(records[-k:])


def first_decile_error(records: Sequence[EvalRecord]) -> float:
    return error_rate(records[: max(1, len(records) // 10)])
