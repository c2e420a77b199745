"""Convex-case analysis of test-time training.

Covers the two-layer linear toy model ``y = v^T A x`` (main head ``v``, self-
supervised head ``w``, shared ``A``), the closed-form step size ``eta*`` that
zeroes the main loss with one self-supervised gradient step, the sign and
descent lemmas, a Monte-Carlo certifier for the one-step descent guarantee on
smooth convex two-head quadratics, and the extractor-gradient inner product
used to relate gradient correlation to test-time gains on the deep model.

All arithmetic here is float64.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .core import backward, softmax_cross_entropy
from .errors import ConfigError, UndefinedError
from .selfsup import all_rotations
from .ymodel import YModel, is_extractor

# random-instance distributions: standard Gaussian entries, integer dimensions
# drawn uniformly from these inclusive ranges
TOY_H_RANGE = (1, 8)
TOY_D_RANGE = (1, 8)
QUAD_SAMPLES_RANGE = (1, 16)

INCONCLUSIVE = None


# -- toy model ---------------------------------------------------------------
@dataclass(frozen=True)
class ToyInstance:
    """Shared weights ``A`` (h x d), heads ``v``, ``w`` (h), input ``x`` (d), targets."""

    A: np.ndarray
    v: np.ndarray
    w: np.ndarray
    x: np.ndarray
    y1: float
    y2: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2:
            raise ConfigError(f"A must be a matrix, got shape {A.shape}")
        h, d = A.shape
        for name, size in (("v", h), ("w", h), ("x", d)):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape != (size,):
                raise ConfigError(f"{name} must have length {size}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y1", float(self.y1))
        object.__setattr__(self, "y2", float(self.y2))

    @property
    def h(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def residuals(self) -> Tuple[float, float]:
        """``(y1 - v^T A x, y2 - w^T A x)``."""
        Ax = self.A @ self.x
        return self.y1 - float(self.v @ Ax), self.y2 - float(self.w @ Ax)


def random_toy(rng: np.random.Generator, h_range=TOY_H_RANGE, d_range=TOY_D_RANGE) -> ToyInstance:
    h = int(rng.integers(h_range[0], h_range[1] + 1))
    d = int(rng.integers(d_range[0], d_range[1] + 1))
    return ToyInstance(
        A=rng.standard_normal((h, d)), v=rng.standard_normal(h), w=rng.standard_normal(h),
        x=rng.standard_normal(d), y1=rng.standard_normal(), y2=rng.standard_normal(),
    )


def toy_losses(inst: ToyInstance) -> Tuple[float, float]:
    """``(l_m, l_s) = (0.5 (y1 - v^T A x)^2, 0.5 (y2 - w^T A x)^2)``."""
    r1, r2 = inst.residuals
    return 0.5 * r1 * r1, 0.5 * r2 * r2


def toy_grads(inst: ToyInstance) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of ``l_m`` and ``l_s`` with respect to ``A``."""
    r1, r2 = inst.residuals
    return r1 * -np.outer(inst.v, inst.x), r2 * -np.outer(inst.w, inst.x)


def toy_step(inst: ToyInstance, eta: float) -> ToyInstance:
    """One gradient step on ``l_s``: ``A' = A - eta (y2 - w^T A x)(-w x^T)``."""
    _, r2 = inst.residuals
    return replace(inst, A=inst.A - eta * r2 * -np.outer(inst.w, inst.x))


def eta_star(inst: ToyInstance) -> float:
    """Step size for which one ``l_s`` step zeroes ``l_m``.

    ``eta* = (y1 - v^T A x) / ((y2 - w^T A x) v^T w x^T x)``.

    Raises
    ------
    UndefinedError
        If a factor of the denominator is zero; the message names it.
    """
    r1, r2 = inst.residuals
    vw = float(inst.v @ inst.w)
    xx = float(inst.x @ inst.x)
    for label, value in (("self-supervised residual y2 - w^T A x", r2), ("head overlap v^T w", vw),
                         ("input norm x^T x", xx)):
        if value == 0.0:
            raise UndefinedError(f"eta* undefined: {label} is zero")
    return r1 / (r2 * vw * xx)


def check_sign_lemma(inst: ToyInstance) -> Optional[bool]:
    """``sign(eta*) == sign(<grad l_m, grad l_s>)``, with explicit gradients.

    Returns ``None`` (inconclusive) when a residual, ``x`` or ``v^T w`` is zero.
    """
    r1, r2 = inst.residuals
    if r1 == 0.0 or r2 == 0.0 or not np.any(inst.x) or float(inst.v @ inst.w) == 0.0:
        return INCONCLUSIVE
    gm, gs = toy_grads(inst)
    inner = float(np.sum(gm * gs))
    return bool(np.sign(eta_star(inst)) == np.sign(inner))


def check_lemma1(inst: ToyInstance, eps: float, grid: int = 10) -> Optional[bool]:
    """Strict decrease of ``l_m`` for every step ``eta = eps * k / grid``, ``k = 1..grid``.

    Returns ``None`` (inconclusive) unless ``eta*`` is defined and ``eta* >= eps > 0``.
    """
    if not eps > 0:
        return INCONCLUSIVE
    try:
        es = eta_star(inst)
    except UndefinedError:
        return INCONCLUSIVE
    if not es >= eps:
        return INCONCLUSIVE
    before = toy_losses(inst)[0]
    etas = eps * np.arange(1, grid + 1) / grid
    return all(toy_losses(toy_step(inst, eta))[0] < before for eta in etas)


# -- convex two-head certification -----------------------------------------------
@dataclass
class ConvexInstance:
    """A parameter point with two convex, differentiable losses and bounds.

    ``beta`` bounds the smoothness of both losses. ``grad_bound`` (G) is the
    largest gradient norm at ``theta``.
    """

    theta: np.ndarray
    l_m: Callable[[np.ndarray], float]
    l_s: Callable[[np.ndarray], float]
    grad_m: Callable[[np.ndarray], np.ndarray]
    grad_s: Callable[[np.ndarray], np.ndarray]
    beta: float
    sample: Callable[[np.random.Generator], np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")

    @property
    def grad_bound(self) -> float:
        return max(float(np.linalg.norm(self.grad_m(self.theta))), float(np.linalg.norm(self.grad_s(self.theta))))


def power_iteration(matvec: Callable[[np.ndarray], np.ndarray], start: np.ndarray,
                    tol: float = 1e-8, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of a symmetric PSD operator (relative Rayleigh-quotient tolerance)."""
    x = start / np.linalg.norm(start)
    lam = 0.0
    for _ in range(max_iter):
        y = matvec(x)
        new = float(np.sum(x * y))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    return lam


@dataclass(frozen=True)
class QuadraticTwoHead:
    """Two-head linear regression with shared weights over ``n`` samples.

    ``l_m(A) = mean_i 0.5 (y1_i - v^T A x_i)^2`` and likewise ``l_s`` with
    ``w`` and ``y2``. The toy model is the ``n = 1`` case.
    """

    v: np.ndarray
    w: np.ndarray
    X: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    def _loss(self, head, y, A):
        r = y - self.X @ (A.T @ head)
        return 0.5 * float(np.mean(r * r))

    def _grad(self, head, y, A):
        r = y - self.X @ (A.T @ head)
        return -np.outer(head, r @ self.X) / len(y)

    def hessian_top(self, head: np.ndarray, rng: np.random.Generator) -> float:
        M = self.X.T @ self.X / len(self.X)
        start = rng.standard_normal((len(head), M.shape[0]))
        return power_iteration(lambda P: np.outer(head, head @ P) @ M, start)

    def analytic_beta(self) -> float:
        M = self.X.T @ self.X / len(self.X)
        top = float(np.linalg.eigvalsh(M)[-1])
        return max(float(self.v @ self.v), float(self.w @ self.w)) * top

    def instance(self, A: np.ndarray, rng: np.random.Generator) -> ConvexInstance:
        beta = max(self.hessian_top(self.v, rng), self.hessian_top(self.w, rng))
        return ConvexInstance(
            theta=A,
            l_m=lambda B: self._loss(self.v, self.y1, B),
            l_s=lambda B: self._loss(self.w, self.y2, B),
            grad_m=lambda B: self._grad(self.v, self.y1, B),
            grad_s=lambda B: self._grad(self.w, self.y2, B),
            beta=beta,
            sample=lambda r: r.standard_normal(A.shape),
        )


def quadratic_family(rng: np.random.Generator) -> ConvexInstance:
    """Default generator: a random :class:`QuadraticTwoHead` at a random ``A``."""
    h = int(rng.integers(TOY_H_RANGE[0], TOY_H_RANGE[1] + 1))
    d = int(rng.integers(TOY_D_RANGE[0], TOY_D_RANGE[1] + 1))
    n = int(rng.integers(QUAD_SAMPLES_RANGE[0], QUAD_SAMPLES_RANGE[1] + 1))
    q = QuadraticTwoHead(v=rng.standard_normal(h), w=rng.standard_normal(h), X=rng.standard_normal((n, d)),
                         y1=rng.standard_normal(n), y2=rng.standard_normal(n))
    return q.instance(rng.standard_normal((h, d)), rng)


def midpoint_convex(inst: ConvexInstance, rng: np.random.Generator, pairs: int = 8) -> bool:
    """Spot-check ``l((a+b)/2) <= (l(a)+l(b))/2`` for both losses on random pairs."""
    sample = inst.sample or (lambda r: inst.theta + r.standard_normal(inst.theta.shape))
    for _ in range(pairs):
        a, b = sample(rng), sample(rng)
        for loss in (inst.l_m, inst.l_s):
            mid, ends = loss(0.5 * (a + b)), 0.5 * (loss(a) + loss(b))
            if mid > ends + 1e-9 * max(1.0, abs(ends)):
                return False
    return True


@dataclass
class TrialResult:
    trial: int
    correlation: float
    status: str  # "pass", "violation" or "skipped"
    eta: float = float("nan")
    decrease: float = float("nan")
    bound: float = float("nan")


@dataclass
class CertificationReport:
    eps: float
    passes: int = 0
    violations: int = 0
    skipped: int = 0
    bound_violations: int = 0
    max_decrease: float = float("-inf")
    min_decrease: float = float("inf")
    trials: List[TrialResult] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.violations == 0 and self.passes > 0

    def summary(self) -> str:
        lines = [
            f"eps: {self.eps:g}",
            f"qualifying: {self.passes + self.violations}",
            f"passes: {self.passes}",
            f"violations: {self.violations}",
            f"skipped: {self.skipped}",
            f"bound_violations: {self.bound_violations}",
            f"min_decrease: {self.min_decrease:.6g}",
            f"max_decrease: {self.max_decrease:.6g}",
            f"certified: {'yes' if self.certified else 'no'}",
        ]
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["trial", "correlation", "status", "eta", "decrease", "bound"])
            for t in self.trials:
                out.writerow([t.trial, repr(t.correlation), t.status, repr(t.eta), repr(t.decrease), repr(t.bound)])


def certify_theorem1(family: Callable[[np.random.Generator], ConvexInstance] = quadratic_family,
                     trials: int = 10_000, eps: float = 0.1, seed: int = 0,
                     max_draws: Optional[int] = None, convexity_checks: int = 5) -> CertificationReport:
    """Check one-step descent ``l_m(theta - eta grad l_s) < l_m(theta)`` at ``eta = eps / (beta G^2)``.

    Instances are drawn from ``family`` until ``trials`` of them have gradient
    inner product above ``eps``; the rest are counted as skipped. Each
    qualifying trial also checks the proven decrease lower bound
    ``(eta / eta_c) eps^2 / (2 beta G^2)`` with ``eta_c = <g_m, g_s> / (beta |g_s|^2)``.

    Raises
    ------
    ConfigError
        If the midpoint-convexity spot-check fails on the family.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(convexity_checks):
        if not midpoint_convex(family(rng), rng):
            raise ConfigError("family failed the midpoint convexity check")
    report = CertificationReport(eps=eps)
    max_draws = 20 * trials if max_draws is None else max_draws
    for t in range(max_draws):
        if report.passes + report.violations >= trials:
            break
        inst = family(rng)
        gm, gs = inst.grad_m(inst.theta), inst.grad_s(inst.theta)
        corr = float(np.sum(gm * gs))
        if not corr > eps:
            report.skipped += 1
            report.trials.append(TrialResult(t, corr, "skipped"))
            continue
        G = inst.grad_bound
        eta = eps / (inst.beta * G * G)
        before = inst.l_m(inst.theta)
        decrease = before - inst.l_m(inst.theta - eta * gs)
        eta_c = corr / (inst.beta * float(np.sum(gs * gs)))
        bound = (eta / eta_c) * eps * eps / (2.0 * inst.beta * G * G)
        ok = decrease > 0.0
        report.passes += ok
        report.violations += not ok
        if decrease < bound - 1e-12 * max(1.0, abs(before)):
            report.bound_violations += 1
        report.max_decrease = max(report.max_decrease, decrease)
        report.min_decrease = min(report.min_decrease, decrease)
        report.trials.append(TrialResult(t, corr, "pass" if ok else "violation", eta, decrease, bound))
    return report


# -- deep-model instrumentation --------------------------------------------------
def grad_inner_product(model: YModel, image, label: int, rng: Optional[np.random.Generator] = None) -> float:
    """``<grad_e l_m(x, y), grad_e l_s(x)>`` over the shared extractor parameters.

    The rotation loss uses the fixed batch of all four rotations of ``image``
    (no crop or flip), so the result is deterministic; ``rng`` is accepted for
    interface symmetry and unused.
    """
    arr = np.asarray(image, dtype=model.config.dtype)
    grads = []
    p = model.params(is_extractor)
    backward(softmax_cross_entropy(model.main_logits(arr[None], p), np.array([label])), model.tape)
    grads.append(model.tape.flat_grad(is_extractor).astype(np.float64))
    rot = all_rotations(arr[None])
    p = model.params(is_extractor)
    backward(model.ssl_loss(rot.images, rot.rotation_labels, p), model.tape)
    grads.append(model.tape.flat_grad(is_extractor).astype(np.float64))
    model.tape.zero_grad()
    return float(grads[0] @ grads[1])
