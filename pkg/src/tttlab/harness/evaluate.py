"""The four compared systems, per-sample records, and stream metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, InputError, UndefinedError
from ..theory import grad_inner_product
from ..ttt import ONLINE, STANDARD, OnlineState, TTTConfig, sample_rng, ttt_predict_online, ttt_predict_standard
from ..ymodel import YModel, predict
from .data import Dataset

BASELINE, JOINT_FIXED, TTT, TTT_ONLINE = "baseline", "joint_fixed", "ttt", "ttt_online"
MODES = (BASELINE, JOINT_FIXED, TTT, TTT_ONLINE)


@dataclass
class EvalRecord:
    index: int  # position in the evaluated dataset
    mode: str
    prediction: int
    label: int
    pre_ssl: float = float("nan")
    post_ssl: float = float("nan")
    inner_product: Optional[float] = None
    seconds: float = 0.0
    ran: bool = False  # whether any test-time update was applied

    @property
    def correct(self) -> bool:
        return self.prediction == self.label


def stream_order(n: int, seed: int) -> np.ndarray:
    """The shuffled order in which an online stream visits a test set."""
    return np.random.default_rng([seed, n]).permutation(n)


def evaluate(model: YModel, test: Dataset, mode: str, cfg: Optional[TTTConfig] = None, seed: int = 0,
             inner_product: bool = False, shuffle: bool = True) -> List[EvalRecord]:
    """Run one of the compared systems over ``test``.

    ``baseline`` and ``joint_fixed`` both predict with the given model as is;
    they differ only in which checkpoint the caller passes. ``ttt`` adapts a
    fresh copy per sample; ``ttt_online`` carries the adapted extractor along
    the stream, which is shuffled first unless ``shuffle`` is false. Online
    records come back in stream order, all others in dataset order.

    With ``inner_product`` each record also holds the extractor-gradient inner
    product of the unadapted model (uses the true label; analysis only).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    cfg = cfg or TTTConfig()
    records = []
    if mode == TTT_ONLINE:
        cfg = cfg if cfg.mode == ONLINE else cfg.as_mode(ONLINE)
        order = stream_order(len(test), seed) if shuffle else np.arange(len(test))
        state = OnlineState.start(model)
        for pos, i in enumerate(order):
            ip = grad_inner_product(state.model, test.images[i], int(test.labels[i])) if inner_product else None
            t0 = time.perf_counter()
            label, _, state = ttt_predict_online(state, test.images[i], cfg, sample_rng(seed, pos))
            d = state.last
            records.append(EvalRecord(int(i), mode, label, int(test.labels[i]), d["pre_ssl"], d["post_ssl"], ip,
                                      time.perf_counter() - t0, d["ran"]))
        return records
    if mode == TTT:
        cfg = cfg if cfg.mode == STANDARD else cfg.as_mode(STANDARD)
    for i in range(len(test)):
        image, y = test.images[i], int(test.labels[i])
        ip = grad_inner_product(model, image, y) if inner_product else None
        t0 = time.perf_counter()
        if mode == TTT:
            label, _, d = ttt_predict_standard(model, image, cfg, sample_rng(seed, i))
            rec = EvalRecord(i, mode, label, y, d["pre_ssl"], d["post_ssl"], ip, 0.0, d["ran"])
        else:
            label, _ = predict(model, image)
            rec = EvalRecord(i, mode, label, y, inner_product=ip)
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
    return records


def error_rate(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise InputError("no records")
    return 1.0 - float(np.mean([r.correct for r in records]))


def ssl_descent_fraction(records: Sequence[EvalRecord]) -> float:
    """Fraction of adapted samples whose rotation loss did not increase."""
    ran = [r for r in records if r.ran]
    if not ran:
        return 1.0
    return float(np.mean([r.post_ssl <= r.pre_ssl for r in ran]))


def sliding_window_accuracy(records: Sequence[EvalRecord], window: int = 100) -> np.ndarray:
    """Value ``t`` is the mean correctness of records ``[t, t + window)``.

    A stream shorter than ``window`` yields a single value over all records.
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    correct = np.array([r.correct for r in records], dtype=np.float64)
    if correct.size == 0:
        raise InputError("no records")
    if correct.size <= window:
        return np.array([correct.mean()])
    csum = np.concatenate([[0.0], np.cumsum(correct)])
    return (csum[window:] - csum[:-window]) / window


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r: float


def correlate(points: Sequence[Tuple[float, float]]) -> LinearFit:
    """Least-squares line through ``(x, y)`` points and Pearson's ``r``.

    Raises
    ------
    UndefinedError
        If all ``x`` are equal. ``r`` is reported as 0 when ``y`` is constant.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise InputError("correlate needs at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
    if sxx == 0.0:
        raise UndefinedError("correlation undefined: all x values are equal")
    slope = sxy / sxx
    r = 0.0 if syy == 0.0 else sxy / np.sqrt(sxx * syy)
    return LinearFit(slope, float(y.mean() - slope * x.mean()), float(r))
