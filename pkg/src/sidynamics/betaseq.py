"""Recurrent sequences ``x_{t+1} = (1 - alpha) x_t + beta_t / x_t``.

With a fixed ``beta`` the sequence is *determined* and has the stationary
point ``sqrt(beta / alpha)``; with ``beta_t`` varying in ``[a, b]`` it is
*undetermined* and is attracted to ``[sqrt(a / alpha), sqrt(b / alpha)]``.
The squared parameter norm of (S)GD with weight decay is such a sequence
(``alpha = 1 - (1 - eta*lam)^2``, ``beta_t = eta^2 * g_eff_t^2``), which is
what ties these checks back to the training dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BetaDetParams",
    "BetaUndetParams",
    "SequenceTrace",
    "iterate_det",
    "iterate_undet",
    "sample_betas",
    "gamma_map",
    "check_gamma_properties",
    "det_convergence_bounds",
    "undet_bounding_runs",
    "interval_convergence",
    "run_invariants",
    "norm_sequence_params",
    "ema_gradient_ratio",
    "SAMPLERS",
]

SAMPLERS = ("uniform", "extremes", "alternating", "series")
_EPS = np.finfo(float).eps


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")


@dataclass(frozen=True)
class BetaDetParams:
    alpha: float
    beta: float
    x0: float

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.beta < 0 or not self.x0 > 0:
            raise ValueError("need beta >= 0 and x0 > 0")

    @property
    def x_star(self) -> float:
        return math.sqrt(self.beta / self.alpha)


@dataclass(frozen=True)
class BetaUndetParams:
    """``beta_t`` in ``[a, b]`` drawn by ``sampler``.

    ``uniform`` draws ``U(a, b)``; ``extremes`` draws ``a`` or ``b`` with
    equal probability; ``alternating`` cycles ``a, b, a, ...``; ``series``
    replays the user-supplied ``series`` (cycled if shorter than the run).
    """

    alpha: float
    a: float
    b: float
    x0: float
    sampler: str = "uniform"
    seed: int = 0
    series: tuple[float, ...] | None = None

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not 0 <= self.a <= self.b < math.inf:
            raise ValueError("need 0 <= a <= b < inf")
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "series":
            if not self.series:
                raise ValueError("series sampler needs a non-empty series")
            s = np.asarray(self.series, dtype=float)
            if np.any(s < self.a) or np.any(s > self.b):
                raise ValueError("series values must lie in [a, b]")
            object.__setattr__(self, "series", tuple(float(v) for v in s))

    @property
    def band(self) -> tuple[float, float]:
        return math.sqrt(self.a / self.alpha), math.sqrt(self.b / self.alpha)

    @property
    def interval_condition(self) -> bool:
        """``alpha / (1 - alpha) * sqrt(b) <= sqrt(a)``."""
        return self.alpha / (1 - self.alpha) * math.sqrt(self.b) <= math.sqrt(self.a)


@dataclass
class SequenceTrace:
    x: np.ndarray
    x_star: float | None = None
    betas: np.ndarray | None = field(default=None, repr=False)

    @property
    def gamma(self) -> np.ndarray:
        if not self.x_star:
            raise ValueError("gamma needs a positive stationary point")
        return self.x / self.x_star

    def __len__(self) -> int:
        return self.x.size


def _iterate(alpha: float, betas: np.ndarray, x0: float) -> np.ndarray:
    x = np.empty(betas.size + 1)
    x[0] = v = float(x0)
    keep = 1.0 - alpha
    for t, beta in enumerate(betas.tolist()):
        v = keep * v + beta / v
        x[t + 1] = v
    return x


def iterate_det(params: BetaDetParams, steps: int) -> SequenceTrace:
    """``steps`` iterations of the determined recursion (``steps + 1`` values)."""
    x = _iterate(params.alpha, np.full(steps, float(params.beta)), params.x0)
    return SequenceTrace(x, params.x_star)


def sample_betas(params: BetaUndetParams, steps: int) -> np.ndarray:
    rng = np.random.default_rng(params.seed)
    a, b = params.a, params.b
    if params.sampler == "uniform":
        return rng.uniform(a, b, steps)
    if params.sampler == "extremes":
        return np.where(rng.random(steps) < 0.5, a, b)
    if params.sampler == "alternating":
        return np.where(np.arange(steps) % 2 == 0, a, b).astype(float)
    s = np.asarray(params.series, dtype=float)
    return np.resize(s, steps)


def iterate_undet(params: BetaUndetParams, steps: int) -> SequenceTrace:
    betas = sample_betas(params, steps)
    return SequenceTrace(_iterate(params.alpha, betas, params.x0), None, betas)


def gamma_map(gamma, alpha: float):
    """``phi(gamma) = (1 - alpha) gamma + alpha / gamma``, the normalised recursion."""
    return (1.0 - alpha) * gamma + alpha / gamma


@dataclass
class PropertyReport:
    alpha: float
    results: dict[str, bool]
    witnesses: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.results.values())

    def failures(self) -> list[str]:
        return [k for k, ok in self.results.items() if not ok]


def check_gamma_properties(alpha: float, gammas=None, n: int = 10_000) -> PropertyReport:
    """Verifies the seven shape facts of ``phi`` on a grid over ``(0, 2]``.

    ``increase_below_1``, ``decrease_above_1``, ``preimages_of_1``,
    ``below_1_iff``, ``decreasing_left``, ``increasing_right``, ``minimum``,
    plus the ordering ``alpha/(1-alpha) < sqrt(alpha/(1-alpha)) <
    2 sqrt(alpha(1-alpha)) < 1``.  A failed fact records a witness ``gamma``.
    """
    _check_alpha(alpha)
    g = np.linspace(2.0 / n, 2.0, n) if gammas is None else np.asarray(gammas, dtype=float)
    phi = gamma_map(g, alpha)
    pre = alpha / (1 - alpha)
    g_min = math.sqrt(alpha / (1 - alpha))
    v_min = 2.0 * math.sqrt(alpha * (1 - alpha))
    tol = 64 * _EPS
    results: dict[str, bool] = {}
    witnesses: dict[str, float] = {}

    def record(name, bad_mask):
        bad = np.flatnonzero(bad_mask)
        results[name] = bad.size == 0
        if bad.size:
            witnesses[name] = float(g[bad[0]])

    away1 = np.abs(g - 1) > tol
    record("increase_below_1", (g < 1) & away1 & ~(phi > g))
    record("decrease_above_1", (g > 1) & away1 & ~((phi > 1) & (phi < g)))

    exact = abs(gamma_map(pre, alpha) - 1) <= tol and abs(gamma_map(1.0, alpha) - 1) <= tol
    # phi - 1 = (1 - alpha)(g - 1)(g - pre) / g changes sign exactly at pre and 1
    s = np.sign(phi - 1)
    s[np.abs(phi - 1) <= tol] = 0
    nz = np.flatnonzero(s)
    changes = [i for i, j in zip(nz[:-1], nz[1:]) if s[i] != s[j]]
    located = [(g[i], g[j]) for i, j in zip(nz[:-1], nz[1:]) if s[i] != s[j]]
    brackets_ok = len(changes) == 2 and located[0][0] <= pre <= located[0][1] and located[1][0] <= 1 <= located[1][1]
    results["preimages_of_1"] = exact and brackets_ok
    if not results["preimages_of_1"]:
        witnesses["preimages_of_1"] = float(located[0][0]) if located else float("nan")

    margin = (np.abs(g - pre) > tol) & away1
    inside = (g > pre) & (g < 1)
    record("below_1_iff", margin & ((phi < 1) != inside))

    left = g < g_min
    right = g > g_min
    dphi = np.diff(phi)
    record("decreasing_left", np.append(left[1:] & left[:-1] & ~(dphi < 0), False))
    record("increasing_right", np.append(right[1:] & right[:-1] & ~(dphi > 0), False))
    min_ok = abs(gamma_map(g_min, alpha) - v_min) <= tol and np.all(phi >= v_min - tol)
    results["minimum"] = bool(min_ok)
    if not min_ok:
        witnesses["minimum"] = float(g[np.argmin(phi)])
    results["ordering"] = pre < g_min < v_min < 1
    return PropertyReport(alpha, results, witnesses)


@dataclass
class BoundCheck:
    passed: bool
    witness: int | None
    lower_slack: float
    upper_slack: float
    steps: int


def det_convergence_bounds(params: BetaDetParams, steps: int) -> BoundCheck:
    """Checks ``(1-2a)^t (x0-x*) <= x_t - x* <= (1-a)^t (x0-x*)`` for ``t <= steps``.

    Comparisons allow rounding at the scale of ``x0`` (a few ulps), which is
    what lets the bounds be checked after the iterate has converged in float.
    """
    if not params.x0 >= params.x_star:
        raise ValueError("the convergence bounds need x0 >= x*")
    trace = iterate_det(params, steps)
    xs = params.x_star
    t = np.arange(steps + 1)
    d0 = params.x0 - xs
    gap = trace.x - xs
    lo = (1 - 2 * params.alpha) ** t * d0
    hi = (1 - params.alpha) ** t * d0
    atol = 8 * _EPS * max(params.x0, xs) + 4 * _EPS * t * np.abs(hi)
    bad = np.flatnonzero((gap < lo - atol) | (gap > hi + atol))
    return BoundCheck(bad.size == 0, int(bad[0]) if bad.size else None,
                      float(np.min(gap - lo)), float(np.min(hi - gap)), steps)


@dataclass
class UndetBounds:
    trace: SequenceTrace
    lower: SequenceTrace
    upper: SequenceTrace
    lower_ok: bool
    upper_window: int
    upper_ok: bool
    full_window: bool
    lower_witness: int | None = None
    upper_witness: int | None = None


def undet_bounding_runs(params: BetaUndetParams, steps: int) -> UndetBounds:
    """Sandwiches an undetermined run between determined runs with ``beta = a`` and ``beta = b``.

    The lower sandwich is checked at every step.  The upper one is checked on
    its validity window: up to ``T + 1`` where ``x_t > sqrt(b / (1 - alpha))``
    for all ``t <= T``, or the whole run when ``alpha sqrt(b)/(1-alpha) <=
    sqrt(a)`` and ``x0 > sqrt(b / alpha)``.
    """
    trace = iterate_undet(params, steps)
    lower = iterate_det(BetaDetParams(params.alpha, params.a, params.x0), steps)
    upper = iterate_det(BetaDetParams(params.alpha, params.b, params.x0), steps)
    x = trace.x
    atol = 8 * _EPS * np.maximum(x, 1.0)
    lo_bad = np.flatnonzero(lower.x > x + atol)

    full = params.interval_condition and params.x0 > math.sqrt(params.b / params.alpha)
    if full:
        window = steps
    else:
        above = x > math.sqrt(params.b / (1 - params.alpha))
        window = int(np.argmin(above)) if not above.all() else steps + 1
        window = min(window, steps)
    hi_bad = np.flatnonzero(x[:window + 1] > upper.x[:window + 1] + atol[:window + 1])
    return UndetBounds(trace, lower, upper, lo_bad.size == 0, window, hi_bad.size == 0, full,
                       int(lo_bad[0]) if lo_bad.size else None, int(hi_bad[0]) if hi_bad.size else None)


@dataclass
class IntervalResult:
    band: tuple[float, float]
    entry_time: int | None
    exits: int
    condition_holds: bool
    envelope_ok: bool | None
    relaxed_upper: float | None
    trace: SequenceTrace = field(repr=False)

    @property
    def passed(self) -> bool:
        if not self.condition_holds:
            return self.relaxed_upper is not None and self.entry_time is not None and self.envelope_ok is not False
        return self.entry_time is not None and self.exits == 0 and self.envelope_ok is not False


def interval_convergence(params: BetaUndetParams, steps: int) -> IntervalResult:
    """Entry time into ``[sqrt(a/alpha), sqrt(b/alpha)]`` and the number of later exits.

    When ``x0 > sqrt(b/alpha)`` the linear envelopes
    ``x_t - sqrt(b/alpha) <= (1-alpha)^t (x0 - sqrt(b/alpha))`` and
    ``(1-2alpha)^t (x0 - sqrt(a/alpha)) <= x_t - sqrt(a/alpha)`` are checked
    too.  If the interval condition fails the run is still performed; exits
    are then measured against the relaxed upper bound
    ``(1-alpha) sqrt(a/alpha) + b / sqrt(a/alpha)`` instead.
    """
    trace = iterate_undet(params, steps)
    x = trace.x
    lo, hi = params.band
    atol = 8 * _EPS * np.maximum(x, 1.0)
    relaxed = None
    upper = hi
    if not params.interval_condition and lo > 0:
        relaxed = (1 - params.alpha) * lo + params.b / lo
        upper = max(hi, relaxed)
    inside = (x >= lo - atol) & (x <= upper + atol)
    entry = int(np.argmax(inside)) if inside.any() else None
    exits = int(np.count_nonzero(~inside[entry:])) if entry is not None else 0

    env = None
    if params.x0 > hi:
        t = np.arange(x.size)
        up_ok = x - hi <= (1 - params.alpha) ** t * (params.x0 - hi) + atol
        low_ok = (1 - 2 * params.alpha) ** t * (params.x0 - lo) <= x - lo + atol
        env = bool(up_ok.all() and low_ok.all())
    return IntervalResult((lo, hi), entry, exits, params.interval_condition, env, relaxed, trace)


def run_invariants(trace: SequenceTrace, alpha: float) -> dict[str, bool]:
    """Positivity, monotone-above and no-hop checks on a determined run.

    Monotone-above: ``x_t > x*`` implies ``x* < x_{t+1} < x_t``.  No-hop:
    ``x_{t+1} < x*`` only if ``x_t < alpha / (1 - alpha) * x*``.  Points
    within rounding of ``x*`` are exempt from both.
    """
    x = trace.x
    out = {"positivity": bool(np.all(x > 0))}
    xs = trace.x_star
    if not xs:
        return out
    tol = 8 * _EPS * xs
    cur, nxt = x[:-1], x[1:]
    above = cur > xs + tol
    settled = np.abs(nxt - xs) <= tol
    out["monotone_above"] = bool(np.all(~above | settled | ((nxt > xs) & (nxt < cur))))
    lo = alpha / (1 - alpha) * xs
    near = (np.abs(nxt - xs) <= tol) | (np.abs(cur - xs) <= tol) | (np.abs(cur - lo) <= tol)
    below_next = nxt < xs
    window = (cur > lo) & (cur < xs)
    out["no_hop"] = bool(np.all(near | (below_next == window)))
    return out


def norm_sequence_params(eta: float, lam: float, eff_grad_norms, rho0_sq: float) -> BetaUndetParams:
    """Maps norm dynamics onto the recursion: ``x = rho^2``, ``alpha = 1 - (1-eta lam)^2``, ``beta = eta^2 g_eff^2``.

    The exact ``alpha`` is used rather than its first-order form ``2 eta lam``
    so that the recursion reproduces measured norms to rounding.
    """
    g = np.asarray(eff_grad_norms, dtype=float)
    betas = (eta * g) ** 2
    alpha = 1.0 - (1.0 - eta * lam) ** 2
    return BetaUndetParams(alpha, float(betas.min()), float(betas.max()), float(rho0_sq), "series",
                           series=tuple(betas.tolist()))


def ema_gradient_ratio(grad_norms, eta: float, lam: float) -> np.ndarray:
    """``g_t^2 / gbar_t^2`` where ``gbar_t^2`` is the decay-weighted mean of past squared gradient norms.

    Weights are ``(1 - eta lam)^(2 (t - t' - 1))`` for ``t' < t``; the first
    entry is NaN.  Purely diagnostic.
    """
    g2 = np.asarray(grad_norms, dtype=float) ** 2
    w = (1.0 - eta * lam) ** 2
    out = np.full(g2.size, np.nan)
    num = den = 0.0
    for t in range(g2.size):
        if den > 0:
            out[t] = g2[t] / (num / den)
        num = w * num + g2[t]
        den = w * den + 1.0
    return out
