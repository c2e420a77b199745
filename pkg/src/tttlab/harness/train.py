"""Joint (main + rotation) training with SGD and a step learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..core import SGD, SgdConfig, backward
from ..errors import StateError
from ..selfsup import augment_batch
from ..ymodel import YModel, is_ssl, joint_loss
from .data import Dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(0.1, momentum=0.9, weight_decay=5e-4))
    # learning rate is multiplied by 0.1 at each milestone (fractions of the run)
    milestones: Tuple[float, ...] = (0.5, 0.75)
    augment: bool = True
    main_only: bool = False  # object-recognition-only baseline: drop the rotation loss

    def lr_at(self, epoch: int) -> float:
        drops = sum(epoch >= math.floor(m * self.epochs) for m in self.milestones)
        return self.sgd.learning_rate * 0.1**drops

    @property
    def final_lr(self) -> float:
        return self.lr_at(max(self.epochs - 1, 0))


class TrainingDiverged(StateError):
    """Raised when a loss becomes non-finite; the model is rolled back first."""

    def __init__(self, epoch: int, last_good: dict):
        super().__init__(f"training diverged in epoch {epoch}; parameters restored to the last good state")
        self.epoch = epoch
        self.last_good = last_good


def train_joint(model: YModel, train: Dataset, cfg: TrainConfig, seed: int) -> Tuple[YModel, List[dict]]:
    """Minimise ``l_m + l_s`` over shuffled, augmented minibatches.

    Returns the (in-place updated) model and one history row per epoch with
    the mean losses, training accuracy and the learning rate used.
    """
    rng = np.random.default_rng(seed)
    history = []
    n = len(train)
    trainable = (lambda name: not is_ssl(name)) if cfg.main_only else (lambda name: True)
    # the mask also keeps weight decay off a frozen rotation branch
    opt = SGD(model.tape, cfg.sgd, mask=trainable)
    for epoch in range(cfg.epochs):
        last_good = model.tape.state_dict()
        opt.set_lr(cfg.lr_at(epoch))
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = train.images[idx]
            if cfg.augment:
                x = augment_batch(x, rng)
            l_m, l_s = joint_loss(model, x, train.labels[idx], rng, trainable=trainable)
            loss = l_m if cfg.main_only else l_m + l_s
            if not np.isfinite(loss.data):
                model.tape.load_state_dict(last_good)
                raise TrainingDiverged(epoch, last_good)
            backward(loss, model.tape)
            opt.step()
            sums += len(idx) * np.array([float(l_m.data), float(l_s.data), 0.0])
            # accuracy on the unrotated half, from the logits already computed
            sums[2] += _batch_correct(l_m, train.labels[idx])
        row = {
            "epoch": epoch + 1,
            "l_m": sums[0] / n,
            "l_s": sums[1] / n,
            "train_acc": sums[2] / n,
            "lr": opt.cfg.learning_rate,
        }
        history.append(row)
        log.info("epoch %d  l_m=%.4f  l_s=%.4f  acc=%.4f  lr=%.4g", *row.values())
    return model, history


def _batch_correct(l_m, labels) -> int:
    # the cross-entropy node's parent holds the main-branch logits
    logits = l_m._parents[0].data if l_m._parents else None
    if logits is None:
        return 0
    return int(np.sum(np.argmax(logits, axis=1) == labels))
