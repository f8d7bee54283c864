"""(S)GD with weight decay on scale-invariant objectives, with full instrumentation.

The update is ``x <- (1 - eta*lam) * x - eta * grad``.  Because the gradient
of a scale-invariant objective is orthogonal to the iterate, the squared norm
and the cosine between adjacent iterates follow closed forms
(:func:`predicted_norm_sq`, :func:`predicted_cosine`) that :func:`run` checks
at every step for plain (S)GD.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .objectives import DomainError, GradientEval, Objective

__all__ = [
    "FAMILIES",
    "OptimizerConfig",
    "TraceRecord",
    "Trajectory",
    "DivergenceError",
    "ClosedFormViolation",
    "step",
    "sphere_projected_step",
    "predicted_norm_sq",
    "predicted_cosine",
    "cosine_distance",
    "run",
    "RescalingResult",
    "rescaled_equivalence",
    "git_blob_hash",
    "TRACE_COLUMNS",
]

FAMILIES = ("gd", "sgd", "momentum", "adam", "sphere")
TRACE_COLUMNS = ("step", "loss", "rho", "grad_norm", "eff_grad_norm", "eff_lr", "cos_dist", "train_error")
CLOSED_FORM_RTOL = 1e-9


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class ClosedFormViolation(AssertionError):
    """Measured norm or cosine disagrees with the closed-form recursion."""

    def __init__(self, step: int, quantity: str, measured: float, predicted: float):
        super().__init__(f"step {step}: measured {quantity} {measured!r} != predicted {predicted!r}")
        self.step = step
        self.quantity = quantity
        self.measured = measured
        self.predicted = predicted


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters of one run.

    ``family`` is one of ``gd``, ``sgd``, ``momentum``, ``adam`` or ``sphere``
    (sphere-projected SGD, the fixed-norm ablation).  Weight decay is always
    the multiplicative shrink of the iterate unless ``coupled_wd`` is set, in
    which case ``lam * x`` is added to the gradient before the accumulators.
    """

    eta: float
    lam: float = 0.0
    family: str = "gd"
    steps: int = 1000
    batch_size: int | None = None
    seed: int = 0
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    coupled_wd: bool = False
    target_norm: float | None = None
    record_every: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.lam < 0:
            raise ValueError(f"weight decay must be non-negative, got {self.lam}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown optimizer family {self.family!r}; expected one of {FAMILIES}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.target_norm is not None and not self.target_norm > 0:
            raise ValueError("target_norm must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def eta_lam(self) -> float:
        return self.eta * self.lam

    @property
    def theory_backed(self) -> bool:
        """Small-``eta*lam`` regime in which the norm/jump theory is stated."""
        return self.eta_lam < 0.5 and self.family in ("gd", "sgd")

    @property
    def follows_norm_recursion(self) -> bool:
        return self.family in ("gd", "sgd")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**d)


class TraceRecord(NamedTuple):
    step: int
    loss: float
    rho: float
    grad_norm: float
    eff_grad_norm: float
    eff_lr: float
    cos_dist: float
    train_error: float


def predicted_norm_sq(rho_sq: float, eta: float, lam: float, eff_grad_norm: float) -> float:
    """Squared norm after one (S)GD step: ``(1-eta*lam)^2 rho^2 + eta^2 g_eff^2 / rho^2``."""
    if not rho_sq > 0:
        raise DomainError("rho_sq must be positive")
    return (1.0 - eta * lam) ** 2 * rho_sq + (eta * eff_grad_norm) ** 2 / rho_sq


def predicted_cosine(rho_sq: float, eta: float, lam: float, eff_grad_norm: float) -> float:
    """Cosine between adjacent (S)GD iterates."""
    if not rho_sq > 0:
        raise DomainError("rho_sq must be positive")
    if not eta * lam < 1:
        raise DomainError("eta*lam must be < 1")
    q = (eta * eff_grad_norm) ** 2 / ((1.0 - eta * lam) ** 2 * rho_sq * rho_sq)
    return 1.0 / math.sqrt(1.0 + q)


def cosine_distance(x: np.ndarray, y: np.ndarray) -> float:
    """``1 - cos(x, y)`` computed as half the squared chord between unit vectors.

    Accurate to relative precision for nearly parallel vectors, where the
    naive formula loses every digit.
    """
    d = x / math.sqrt(float(x @ x)) - y / math.sqrt(float(y @ y))
    return 0.5 * float(d @ d)


def step(x: np.ndarray, config: OptimizerConfig, grad: GradientEval | np.ndarray,
         state: dict | None = None) -> np.ndarray:
    """One optimizer update.  ``state`` carries momentum/Adam buffers between calls."""
    g = grad.gradient if isinstance(grad, GradientEval) else np.asarray(grad, dtype=float)
    if not np.isfinite(g).all():
        raise DivergenceError(-1, "non-finite gradient")
    eta, lam = config.eta, config.lam
    shrink = 1.0 - eta * lam
    if config.coupled_wd:
        g = g + lam * x
        shrink = 1.0
    fam = config.family
    if fam in ("gd", "sgd", "sphere"):
        return shrink * x - eta * g
    if state is None:
        raise ValueError(f"{fam} requires an optimizer state dict")
    if fam == "momentum":
        buf = state.get("momentum_buffer")
        buf = g.copy() if buf is None else config.momentum * buf + g
        state["momentum_buffer"] = buf
        return shrink * x - eta * buf
    # adam
    b1, b2 = config.betas
    t = state.get("t", 0) + 1
    m = state.get("m", np.zeros_like(x))
    v = state.get("v", np.zeros_like(x))
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    state.update(t=t, m=m, v=v)
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return shrink * x - eta * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def sphere_projected_step(x: np.ndarray, config: OptimizerConfig, grad, target_norm: float,
                          state: dict | None = None) -> np.ndarray:
    """:func:`step` followed by rescaling onto the sphere of radius ``target_norm``."""
    if not target_norm > 0:
        raise ValueError("target_norm must be positive")
    base = replace(config, family="sgd") if config.family == "sphere" else config
    y = step(x, base, grad, state)
    return y * (target_norm / np.linalg.norm(y))


@dataclass
class Trajectory:
    """Per-step trace of a run.

    Columns are numpy arrays indexed densely by record; ``records`` gives the
    row view.  ``checkpoints`` maps step index to a copy of the iterate.
    """

    config: OptimizerConfig
    objective_id: str
    x0: np.ndarray
    columns: dict[str, np.ndarray]
    final_x: np.ndarray
    checkpoints: dict[int, np.ndarray] = field(default_factory=dict)
    iterates: np.ndarray | None = None
    truncated: bool = False
    divergence: dict | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.columns["step"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def records(self) -> list[TraceRecord]:
        cols = [self.columns[c] for c in TRACE_COLUMNS]
        return [TraceRecord(int(row[0]), *map(float, row[1:])) for row in zip(*cols)]

    @property
    def rho_sq(self) -> np.ndarray:
        return self.columns["rho"] ** 2

    def to_csv(self, path=None) -> str:
        """Writes the trace with round-trip float formatting; returns the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        cols = [self.columns[c] for c in TRACE_COLUMNS]
        for row in zip(*cols):
            w.writerow([str(int(row[0]))] + [repr(float(v)) for v in row[1:]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def read_csv(path) -> dict[str, np.ndarray]:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, len(header)))
        cols = {name: data[:, i] for i, name in enumerate(header)}
        if "step" in cols:
            cols["step"] = cols["step"].astype(int)
        return cols

    def manifest(self, trace_hash: str | None = None) -> dict:
        return {
            "objective": self.objective_id,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "x0": [float(v) for v in self.x0],
            "records": len(self),
            "truncated": self.truncated,
            "divergence": self.divergence,
            "trace_hash": trace_hash if trace_hash is not None else git_blob_hash(self.to_csv().encode()),
        }


def git_blob_hash(data: bytes) -> str:
    """Content hash computed the way ``git hash-object`` does."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def save_checkpoint(path, step_index: int, x: np.ndarray, **extra) -> None:
    payload = {"step": int(step_index), "dim": int(x.size), "x": [repr(float(v)) for v in x]}
    payload.update(extra)
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[int, np.ndarray, dict]:
    payload = json.loads(Path(path).read_text())
    x = np.array([float(v) for v in payload.pop("x")])
    return payload.pop("step"), x, payload


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Sampling without replacement, reshuffled every epoch; incomplete batches are dropped."""
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield perm[i:i + batch_size]


def run(objective: Objective, config: OptimizerConfig, x0, *, objective_id: str | None = None,
        checkpoint_steps=(), keep_iterates: bool = False, check_closed_forms: bool = True,
        rtol: float = CLOSED_FORM_RTOL, observer: Callable[[int, np.ndarray], None] | None = None,
        rng: np.random.Generator | None = None) -> Trajectory:
    """Execute ``config.steps`` optimizer steps from ``x0`` and record a full trace.

    For ``gd``/``sgd`` the measured squared norm and adjacent cosine are
    compared with the closed forms at every step and a
    :class:`ClosedFormViolation` is raised on disagreement.  A non-finite
    state ends the run early with ``truncated=True``.  ``observer(t, x_t)``
    is called before every step and once after the last one.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (objective.dim,):
        raise ValueError(f"x0 must have shape ({objective.dim},)")
    if not np.all(np.isfinite(x)) or not np.any(x):
        raise DomainError("x0 must be finite with positive norm")
    eta, lam, fam = config.eta, config.lam, config.family
    stochastic = fam != "gd" and objective.n_samples is not None and config.batch_size is not None
    if rng is None:
        rng = np.random.default_rng(config.seed)
    batches = _batches(objective.n_samples, config.batch_size, rng) if stochastic else None
    target = config.target_norm if config.target_norm is not None else float(np.linalg.norm(x))
    check = check_closed_forms and config.follows_norm_recursion
    ckpt = set(int(s) for s in checkpoint_steps)
    state: dict = {}

    n = config.steps
    every = config.record_every
    cols = {c: [] for c in TRACE_COLUMNS}
    checkpoints: dict[int, np.ndarray] = {}
    iterates = [x.copy()] if keep_iterates else None
    truncated, divergence = False, None

    t = 0
    for t in range(n):
        if t in ckpt:
            checkpoints[t] = x.copy()
        if observer is not None:
            observer(t, x)
        batch = next(batches) if batches is not None else None
        try:
            ev = objective.evaluate(x, batch)
            if not (math.isfinite(ev.value) and math.isfinite(ev.grad_norm)):
                raise DivergenceError(t, "non-finite loss or gradient")
            if fam == "sphere":
                x_next = sphere_projected_step(x, config, ev, target)
            else:
                x_next = step(x, config, ev, state)
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                rho_sq_next = float(x_next @ x_next)
            if not (np.isfinite(x_next).all() and math.isfinite(rho_sq_next) and rho_sq_next > 0):
                raise DivergenceError(t, "non-finite or degenerate iterate")
        except (DivergenceError, DomainError, FloatingPointError) as err:
            truncated = True
            last = {c: _py(cols[c][-1]) for c in TRACE_COLUMNS} if cols["step"] else None
            divergence = {"step": t, "reason": str(err), "last_record": last}
            break

        rho_sq = ev.rho * ev.rho
        cd = cosine_distance(x, x_next)
        if check:
            p_norm = predicted_norm_sq(rho_sq, eta, lam, ev.eff_grad_norm)
            if abs(rho_sq_next - p_norm) > rtol * p_norm:
                raise ClosedFormViolation(t, "rho_sq", rho_sq_next, p_norm)
            p_cos = predicted_cosine(rho_sq, eta, lam, ev.eff_grad_norm)
            cos = 1.0 - cd
            if abs(cos - p_cos) > rtol * p_cos or abs(cd - (1.0 - p_cos)) > rtol:
                raise ClosedFormViolation(t, "cosine", cos, p_cos)
        if t % every == 0:
            cols["step"].append(t)
            cols["loss"].append(ev.value)
            cols["rho"].append(ev.rho)
            cols["grad_norm"].append(ev.grad_norm)
            cols["eff_grad_norm"].append(ev.eff_grad_norm)
            cols["eff_lr"].append(eta / rho_sq)
            cols["cos_dist"].append(cd)
            cols["train_error"].append(ev.error)
        x = x_next
        if keep_iterates:
            iterates.append(x.copy())
    else:
        t = n
        if n in ckpt:
            checkpoints[n] = x.copy()
        if observer is not None:
            observer(n, x)

    columns = {c: np.asarray(v, dtype=int if c == "step" else float) for c, v in cols.items()}
    return Trajectory(
        config=config,
        objective_id=objective_id or getattr(objective, "name", "objective"),
        x0=np.array(x0, dtype=float),
        columns=columns,
        final_x=x,
        checkpoints=checkpoints,
        iterates=np.array(iterates) if keep_iterates else None,
        truncated=truncated,
        divergence=divergence,
    )


def _py(v):
    return v.item() if isinstance(v, np.generic) else v


@dataclass
class RescalingResult:
    scale: float
    max_deviation: float
    deviations: np.ndarray
    max_iterate_deviation: float
    horizon: int
    truncated: bool

    def agrees(self, tol: float) -> bool:
        return self.max_deviation <= tol and self.max_iterate_deviation <= tol


def rescaled_equivalence(objective: Objective, config: OptimizerConfig, x0, c: float,
                         horizon: int | None = None) -> RescalingResult:
    """Compare the run from ``(x0, eta, lam)`` with the one from ``(c x0, c^2 eta, lam / c^2)``.

    Returns the per-step function-space deviation
    ``|f(x_t) - f(x'_t)| / (1 + |f(x_t)|)`` and the worst relative deviation
    of ``x'_t`` from ``c x_t``.  Both runs share the seed, hence the batches.
    """
    if not c > 0:
        raise ValueError("scale must be positive")
    if config.family not in ("gd", "sgd"):
        raise ValueError("rescaling equivalence is stated for plain (S)GD")
    steps = config.steps if horizon is None else horizon
    base = replace(config, steps=steps)
    scaled = replace(base, eta=c * c * config.eta, lam=config.lam / (c * c))
    x0 = np.asarray(x0, dtype=float)
    a = run(objective, base, x0, keep_iterates=True, check_closed_forms=False)
    b = run(objective, scaled, c * x0, keep_iterates=True, check_closed_forms=False)
    m = min(len(a), len(b))
    fa, fb = a["loss"][:m], b["loss"][:m]
    dev = np.abs(fa - fb) / (1.0 + np.abs(fa))
    xa, xb = a.iterates[:m + 1], b.iterates[:m + 1]
    xdev = np.linalg.norm(xb - c * xa, axis=1) / np.linalg.norm(c * xa, axis=1)
    return RescalingResult(float(c), float(dev.max()) if m else 0.0, dev, float(xdev.max()), m,
                           a.truncated or b.truncated or m < steps)
