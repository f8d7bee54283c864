"""Scale-invariant objectives and their certification.

An objective here is anything exposing ``value_and_grad(x, batch)`` whose
value is unchanged by positive rescaling of ``x``.  Two consequences are
checked numerically before an objective is used for dynamics:

* the gradient is orthogonal to the iterate, ``<grad f(x), x> = 0``;
* the gradient is inversely homogeneous, ``grad f(a x) = grad f(x) / a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DomainError",
    "CertificationError",
    "GradientEval",
    "Objective",
    "ToyRational",
    "Quadratic",
    "CertificationReport",
    "toy_rational_eval",
    "certify_orthogonality",
    "certify_inverse_homogeneity",
    "check_gradient",
    "register",
    "register_prefix",
    "get_objective",
    "registered_ids",
]

MIN_SAMPLE_NORM = 1e-3


class DomainError(ValueError):
    """Raised when an objective is evaluated outside its domain (e.g. at the origin)."""


class CertificationError(RuntimeError):
    """Raised when an objective fails scale-invariance certification at registration."""


@dataclass(frozen=True)
class GradientEval:
    value: float
    gradient: np.ndarray
    rho: float
    grad_norm: float
    error: float = float("nan")

    @property
    def eff_grad_norm(self) -> float:
        return self.rho * self.grad_norm

    @classmethod
    def at(cls, x: np.ndarray, value: float, gradient: np.ndarray, error: float = float("nan")) -> "GradientEval":
        return cls(float(value), gradient, math.sqrt(float(x @ x)), math.sqrt(float(gradient @ gradient)), float(error))


class Objective:
    """Base class for scale-invariant objectives.

    Subclasses implement :meth:`value_and_grad`.  Stochastic objectives set
    ``n_samples`` and accept an index array as ``batch``; ``batch=None``
    always means the full objective.
    """

    name: str = "objective"
    dim: int = 0
    n_samples: int | None = None
    certification_tol: float = 1e-12

    def value_and_grad(self, x: np.ndarray, batch: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def value_grad_error(self, x: np.ndarray, batch: np.ndarray | None = None) -> tuple[float, np.ndarray, float]:
        """Like :meth:`value_and_grad`, plus a classification error (NaN when unlabeled)."""
        value, grad = self.value_and_grad(x, batch)
        return value, grad, float("nan")

    def evaluate(self, x: np.ndarray, batch: np.ndarray | None = None) -> GradientEval:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name}: expected a point of shape ({self.dim},), got {x.shape}")
        if not np.isfinite(x).all():
            raise DomainError(f"{self.name}: non-finite point")
        if not x.any():
            raise DomainError(f"{self.name}: evaluation at the origin is undefined for a scale-invariant function")
        return GradientEval.at(x, *self.value_grad_error(x, batch))

    def sample_batch(self, rng: np.random.Generator) -> np.ndarray | None:
        """A batch for certification purposes; ``None`` for deterministic objectives."""
        return None

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        while True:
            x = rng.standard_normal(self.dim)
            if np.linalg.norm(x) >= MIN_SAMPLE_NORM:
                return x

    @property
    def kind(self) -> str:
        return "user-supplied"

    @property
    def stochasticity(self) -> str:
        return "full-batch" if self.n_samples is None else "minibatch"


class ToyRational(Objective):
    """``f(x, y) = x^2 / (x^2 + y^2)``, minimised on the line ``x = 0``."""

    name = "toy-rational"
    dim = 2

    @property
    def kind(self) -> str:
        return "toy-rational"

    def value_and_grad(self, x, batch=None):
        u, v = float(x[0]), float(x[1])
        r2 = u * u + v * v
        if r2 == 0.0:
            raise DomainError("toy-rational: evaluation at the origin")
        r4 = r2 * r2
        grad = np.array([2.0 * u * v * v / r4, -2.0 * u * u * v / r4])
        return u * u / r2, grad


def toy_rational_eval(point) -> GradientEval:
    return _TOY.evaluate(np.asarray(point, dtype=float))


class Quadratic(Objective):
    """``0.5 * ||x - center||^2``: not scale-invariant, used as a negative control."""

    name = "quadratic"

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)
        self.dim = self.center.size

    def value_and_grad(self, x, batch=None):
        d = x - self.center
        return 0.5 * float(d @ d), d


_TOY = ToyRational()


@dataclass
class CertificationReport:
    check: str
    objective: str
    max_deviation: float
    tol: float
    samples: int
    witness: np.ndarray | None = field(default=None, repr=False)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation < self.tol)

    def to_dict(self) -> dict:
        out = {
            "check": self.check,
            "objective": self.objective,
            "max_deviation": self.max_deviation,
            "tol": self.tol,
            "samples": self.samples,
            "passed": self.passed,
        }
        out.update(self.details)
        return out


def certify_orthogonality(objective: Objective, samples: int = 100, seed: int = 0,
                          tol: float | None = None) -> CertificationReport:
    """Max ``|cos(grad f(x), x)|`` over random points; passes iff below ``tol``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    tol = objective.certification_tol if tol is None else tol
    rng = np.random.default_rng(seed)
    worst, witness = 0.0, None
    for _ in range(samples):
        x = objective.random_point(rng)
        ev = objective.evaluate(x, objective.sample_batch(rng))
        if ev.grad_norm == 0.0:
            continue
        c = abs(float(ev.gradient @ x)) / (ev.grad_norm * ev.rho)
        if c >= worst:
            worst, witness = c, x
    return CertificationReport("orthogonality", objective.name, worst, tol, samples, witness)


def certify_inverse_homogeneity(objective: Objective, scales=(0.5, 2.0, 10.0), samples: int = 100,
                                seed: int = 0, tol: float | None = None) -> CertificationReport:
    """Checks ``a * grad f(a x) == grad f(x)`` and ``f(a x) == f(x)`` for each scale ``a``.

    The reported deviation is the larger of the relative gradient deviation
    and ``|f(a x) - f(x)| / (1 + |f(x)|)``.
    """
    scales = [float(a) for a in scales]
    if any(a <= 0 for a in scales):
        raise ValueError("all scales must be positive")
    tol = objective.certification_tol if tol is None else tol
    rng = np.random.default_rng(seed)
    worst, witness = 0.0, None
    grad_dev = value_dev = 0.0
    for _ in range(samples):
        x = objective.random_point(rng)
        batch = objective.sample_batch(rng)
        base = objective.evaluate(x, batch)
        for a in scales:
            scaled = objective.evaluate(a * x, batch)
            gd = float(np.linalg.norm(a * scaled.gradient - base.gradient))
            if base.grad_norm > 0:
                gd /= base.grad_norm
            vd = abs(scaled.value - base.value) / (1.0 + abs(base.value))
            grad_dev, value_dev = max(grad_dev, gd), max(value_dev, vd)
            if max(gd, vd) >= worst:
                worst, witness = max(gd, vd), x
    return CertificationReport("inverse-homogeneity", objective.name, worst, tol, samples, witness,
                               {"scales": scales, "max_grad_deviation": grad_dev,
                                "max_value_deviation": value_dev})


def check_gradient(objective: Objective, x: np.ndarray, h: float = 1e-6, coords=None,
                   batch=None) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``coords`` restricts the comparison to a subset of coordinates; the error
    is normalised by the norm of the analytic gradient on that subset.
    """
    x = np.asarray(x, dtype=float)
    idx = np.arange(x.size) if coords is None else np.asarray(coords)
    _, grad = objective.value_and_grad(x, batch)
    fd = np.empty(idx.size)
    for j, i in enumerate(idx):
        e = np.zeros_like(x)
        e[i] = h
        fd[j] = (objective.value_and_grad(x + e, batch)[0] - objective.value_and_grad(x - e, batch)[0]) / (2 * h)
    scale = np.linalg.norm(grad[idx])
    return float(np.linalg.norm(fd - grad[idx]) / scale) if scale > 0 else float(np.linalg.norm(fd))


_REGISTRY: dict[str, Callable[[], Objective]] = {}
_RESOLVERS: dict[str, Callable[[str], Objective]] = {}


def register(objective_id: str, factory: Callable[[], Objective], certify: bool = True) -> None:
    """Register an objective factory under a string id.

    Registration certifies the objective once; a failing objective is refused.
    """
    if certify:
        obj = factory()
        for report in (certify_orthogonality(obj, samples=20),
                       certify_inverse_homogeneity(obj, samples=10)):
            if not report.passed:
                raise CertificationError(
                    f"{objective_id}: {report.check} deviation {report.max_deviation:.3g} >= tol {report.tol:.3g}")
    _REGISTRY[objective_id] = factory


def register_prefix(prefix: str, resolver: Callable[[str], Objective]) -> None:
    """Resolve ids of the form ``prefix:<name>`` through ``resolver(name)``."""
    _RESOLVERS[prefix] = resolver


def get_objective(objective_id: str) -> Objective:
    if objective_id in _REGISTRY:
        return _REGISTRY[objective_id]()
    prefix, sep, rest = objective_id.partition(":")
    if sep and prefix in _RESOLVERS:
        return _RESOLVERS[prefix](rest)
    raise KeyError(f"unknown objective id {objective_id!r}; known: {registered_ids()}")


def registered_ids() -> list[str]:
    return sorted(_REGISTRY) + [f"{p}:<name>" for p in sorted(_RESOLVERS)]


register("toy-rational", ToyRational)
