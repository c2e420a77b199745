"""Named parameter storage and plain SGD with momentum / weight decay."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from ..errors import ConfigError, InputError
from .tensor import Tensor

NameMask = Callable[[str], bool]


class ParamTape:
    """Ordered collection of named trainable tensors.

    Each entry is a leaf :class:`Tensor` with ``requires_grad=True``; its
    ``grad`` slot always has the parameter's shape after :meth:`zero_grad`.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, copy=True), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> list:
        return list(self._params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def num_parameters(self, mask: Optional[NameMask] = None) -> int:
        return sum(t.data.size for n, t in self._params.items() if mask is None or mask(n))

    def zero_grad(self) -> None:
        for t in self._params.values():
            if t.grad is None or t.grad.shape != t.data.shape:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad.fill(0)

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter value, in tape order."""
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            raise InputError("state dict names do not match the tape")
        for n, t in self._params.items():
            arr = np.asarray(state[n])
            if arr.shape != t.data.shape:
                raise InputError(f"shape mismatch for {n!r}: {arr.shape} vs {t.data.shape}")
            t.data[...] = arr

    def clone(self) -> "ParamTape":
        other = ParamTape()
        for n, t in self._params.items():
            other.add(n, t.data)
        return other

    def astype(self, dtype) -> "ParamTape":
        other = ParamTape()
        for n, t in self._params.items():
            other.add(n, t.data.astype(dtype))
        return other

    def identical(self, other: "ParamTape", mask: Optional[NameMask] = None) -> bool:
        """Bit-level equality of the (masked) parameter values."""
        names = [n for n in self._params if mask is None or mask(n)]
        if names != [n for n in other._params if mask is None or mask(n)]:
            return False
        return all(
            self._params[n].data.dtype == other._params[n].data.dtype
            and self._params[n].data.tobytes() == other._params[n].data.tobytes()
            for n in names
        )

    def flat_grad(self, mask: Optional[NameMask] = None) -> np.ndarray:
        parts = [t.grad.ravel() for n, t in self._params.items() if mask is None or mask(n)]
        return np.concatenate(parts) if parts else np.zeros(0)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")

    @property
    def is_plain(self) -> bool:
        """True when momentum and weight decay are both zero (test-time setting)."""
        return self.momentum == 0.0 and self.weight_decay == 0.0


def sgd_step(tape: ParamTape, cfg: SgdConfig, mask: Optional[NameMask] = None,
             buffers: Optional[Dict[str, np.ndarray]] = None) -> ParamTape:
    """One in-place SGD update of the parameters selected by ``mask``.

    Heavy-ball momentum: ``v <- m*v + (g + wd*p)``, ``p <- p - lr*v``. The
    momentum buffers live in ``buffers`` (created on demand); pass ``None``
    when momentum is zero. Parameters rejected by the mask are not touched.
    """
    lr = cfg.learning_rate
    for name, p in tape.items():
        if mask is not None and not mask(name):
            continue
        if lr == 0.0:
            continue
        d = p.grad
        if cfg.weight_decay:
            d = d + cfg.weight_decay * p.data
        if cfg.momentum:
            if buffers is None:
                raise ConfigError("momentum > 0 needs a buffer dict")
            buf = buffers.get(name)
            if buf is None:
                buf = buffers[name] = np.array(d, copy=True)
            else:
                buf *= cfg.momentum
                buf += d
            d = buf
        p.data -= lr * d
    return tape


class SGD:
    """Stateful wrapper around :func:`sgd_step` that owns momentum buffers."""

    def __init__(self, tape: ParamTape, cfg: SgdConfig, mask: Optional[NameMask] = None):
        self.tape = tape
        self.cfg = cfg
        self.mask = mask
        self.buffers: Dict[str, np.ndarray] = {}

    def set_lr(self, lr: float) -> None:
        self.cfg = SgdConfig(lr, self.cfg.momentum, self.cfg.weight_decay)

    def reset(self) -> None:
        self.buffers.clear()

    def step(self) -> None:
        sgd_step(self.tape, self.cfg, self.mask, self.buffers)
