"""Jump calculus for the norm dynamics of scale-invariant (S)GD.

A delta-jump is a step whose adjacent-iterate cosine distance exceeds
``delta``.  This module detects jumps in traces, evaluates the norm
thresholds under which jumps become possible or guaranteed, bounds the time
until the first jump, computes the equilibrium band of the squared norm,
fits effective-gradient envelopes and segments traces into periods.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .objectives import DomainError

__all__ = [
    "GradientBounds",
    "JumpEvent",
    "EquilibriumBand",
    "JumpTimeBounds",
    "PeriodSummary",
    "FrequencyReport",
    "detect_jumps",
    "jump_thresholds",
    "exact_jump_thresholds",
    "jump_time_bounds",
    "equilibrium_band",
    "norm_dynamics",
    "vector_norm_dynamics",
    "first_jump_step",
    "fit_envelopes",
    "delta_envelopes",
    "segment_phases",
    "period_frequency_report",
    "DEFAULT_DEBOUNCE",
    "TOY_DELTA",
]

DEFAULT_DEBOUNCE = 5
TOY_DELTA = 0.01
ENVELOPE_SLACK = 1e-9
FAMILIES = ("const", "inv", "inv2")


def _columns(trajectory) -> dict:
    return trajectory.columns if hasattr(trajectory, "columns") else trajectory


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class GradientBounds:
    """Lower/upper envelopes ``l(t) <= g_eff(t) <= L(t)`` valid on ``[t_valid, t_end]``.

    Each envelope is ``c * phi(t)`` with ``phi`` one of ``const`` (1),
    ``inv`` (``1/(t - t0)``) or ``inv2`` (``1/(t - t0)^2``).
    """

    c_lower: float
    c_upper: float
    lower_family: str = "const"
    upper_family: str = "const"
    t0: float = 0.0
    t_valid: int = 0
    t_end: int | None = None

    def __post_init__(self):
        for fam in (self.lower_family, self.upper_family):
            if fam not in FAMILIES:
                raise ValueError(f"unknown envelope family {fam!r}")
        if self.c_lower < 0 or not math.isfinite(self.c_upper):
            raise ValueError("envelope constants must satisfy 0 <= c_lower and finite c_upper")

    @classmethod
    def constant(cls, ell: float, L: float, t_valid: int = 0, t_end: int | None = None) -> "GradientBounds":
        if not 0 <= ell <= L < math.inf:
            raise ValueError("bounds must satisfy 0 <= ell <= L < inf")
        return cls(float(ell), float(L), t_valid=t_valid, t_end=t_end)

    @staticmethod
    def _phi(family: str, t, t0: float):
        t = np.asarray(t, dtype=float)
        if family == "const":
            return np.ones_like(t)
        if np.any(t <= t0):
            raise ValueError("envelope evaluated at t <= t0")
        return 1.0 / (t - t0) if family == "inv" else 1.0 / (t - t0) ** 2

    def lower(self, t):
        return self.c_lower * self._phi(self.lower_family, t, self.t0)

    def upper(self, t):
        return self.c_upper * self._phi(self.upper_family, t, self.t0)

    @property
    def is_constant(self) -> bool:
        return self.lower_family == self.upper_family == "const"

    def to_dict(self) -> dict:
        return {"c_lower": self.c_lower, "c_upper": self.c_upper, "lower_family": self.lower_family,
                "upper_family": self.upper_family, "t0": self.t0, "t_valid": self.t_valid, "t_end": self.t_end}


@dataclass(frozen=True)
class JumpEvent:
    step: int
    cos_dist: float
    delta: float
    rho_sq: float
    length: int = 1


@dataclass(frozen=True)
class EquilibriumBand:
    kappa: float
    band: tuple[float, float]
    elr_band: tuple[float, float]
    condition_holds: bool
    relaxed_upper: float | None = None

    def contains(self, rho_sq) -> np.ndarray:
        lo, hi = self.band
        return (np.asarray(rho_sq) >= lo) & (np.asarray(rho_sq) <= hi)


@dataclass(frozen=True)
class JumpTimeBounds:
    t_min: float | None
    t_max: float | None
    min_applicable: bool
    max_applicable: bool
    notes: tuple[str, ...] = ()


@dataclass
class PeriodSummary:
    """One segment of a trace between destabilizations.

    ``phases`` maps ``"A"``, ``"B"``, ``"C"`` to inclusive step ranges when
    the segment is a complete, classified period.  ``label`` is ``"ABC"``
    for those, else ``"warm-up"``, ``"tail"``, ``"unlabeled"`` or
    ``"unclassified"``.
    """

    index: int
    start: int
    end: int
    label: str
    phases: dict[str, tuple[int, int]] | None
    jump: JumpEvent | None
    rho_sq_min: float
    rho_sq_max: float
    loss_min: float
    onset_lag: int | None = None

    @property
    def complete(self) -> bool:
        return self.label == "ABC"

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def phase_length(self, name: str) -> int:
        a, b = self.phases[name]
        return b - a + 1

    def to_dict(self) -> dict:
        return {
            "index": self.index, "start": self.start, "end": self.end, "label": self.label,
            "phases": {k: list(v) for k, v in self.phases.items()} if self.phases else None,
            "jump_step": self.jump.step if self.jump else None,
            "rho_sq_min": self.rho_sq_min, "rho_sq_max": self.rho_sq_max, "loss_min": self.loss_min,
            "onset_lag": self.onset_lag,
        }


# ---------------------------------------------------------------------------
# Detection


def detect_jumps(trajectory, delta: float, debounce: int = DEFAULT_DEBOUNCE) -> list[JumpEvent]:
    """All steps with ``cos_dist > delta``, merging runs separated by at most ``debounce`` steps.

    The first step of each merged run is kept as the event.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    cols = _columns(trajectory)
    cd = np.asarray(cols["cos_dist"])
    steps = np.asarray(cols["step"]) if "step" in cols else np.arange(cd.size)
    rho_sq = np.asarray(cols["rho"]) ** 2 if "rho" in cols else np.full(cd.size, np.nan)
    hits = np.flatnonzero(cd > delta)
    events: list[JumpEvent] = []
    if hits.size == 0:
        return events
    first = last = hits[0]
    for i in hits[1:]:
        if steps[i] - steps[last] <= debounce:
            last = i
            continue
        events.append(JumpEvent(int(steps[first]), float(cd[first]), delta, float(rho_sq[first]),
                                int(steps[last] - steps[first] + 1)))
        first = last = i
    events.append(JumpEvent(int(steps[first]), float(cd[first]), delta, float(rho_sq[first]),
                            int(steps[last] - steps[first] + 1)))
    return events


# ---------------------------------------------------------------------------
# Closed-form predictions


def _bounds_pair(bounds) -> tuple[float, float]:
    if isinstance(bounds, GradientBounds):
        if not bounds.is_constant:
            raise ValueError("thresholds need constant bounds; evaluate the envelope at a step first")
        return bounds.c_lower, bounds.c_upper
    ell, L = bounds
    return float(ell), float(L)


def jump_thresholds(eta: float, lam: float, bounds, delta: float) -> tuple[float, float]:
    """Squared-norm thresholds ``(possible, guaranteed)`` = ``(eta L, eta l) / sqrt(2 delta)``.

    A jump can only happen below the first and is (approximately) certain
    below the second.  These are the small-``delta``, small-``eta*lam`` forms.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    if delta >= 0.1:
        warnings.warn(f"delta={delta} is not small; the first-order thresholds are loose", stacklevel=2)
    if eta * lam >= 0.5:
        warnings.warn(f"eta*lam={eta * lam} is outside the small-product regime", stacklevel=2)
    ell, L = _bounds_pair(bounds)
    s = math.sqrt(2.0 * delta)
    return eta * L / s, eta * ell / s


def _exact_q(delta: float) -> float:
    # 1 - cos > delta  <=>  q > 1/(1-delta)^2 - 1
    return (2.0 * delta - delta * delta) / (1.0 - delta) ** 2


def exact_jump_thresholds(eta: float, lam: float, bounds, delta: float) -> tuple[float, float]:
    """Thresholds without the small-``eta*lam`` approximation.

    ``necessary``: ``eta L / ((1 - eta lam) sqrt(2 delta))``; no jump occurs
    at or above it.  ``sufficient``: ``eta l / ((1 - eta lam) sqrt(q(delta)))``
    with ``q(delta) = 1/(1-delta)^2 - 1``; every step strictly below it jumps.
    """
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    ell, L = _bounds_pair(bounds)
    shrink = 1.0 - eta * lam
    return eta * L / (shrink * math.sqrt(2.0 * delta)), eta * ell / (shrink * math.sqrt(_exact_q(delta)))


def jump_time_bounds(rho0_sq: float, eta: float, lam: float, ell: float, L: float,
                     delta: float) -> JumpTimeBounds:
    """Earliest and latest step of the first delta-jump starting from ``rho0_sq``.

    Each bound is only reported when its preconditions hold; otherwise it is
    ``None`` and flagged inapplicable with a note.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    if not (eta > 0 and lam > 0):
        raise DomainError("eta and lam must be positive")
    if not 0 <= ell <= L:
        raise DomainError("bounds must satisfy 0 <= ell <= L")
    kappa = math.sqrt(eta / (2.0 * lam))
    el = eta * lam
    notes = []
    t_min = t_max = None

    min_ok = rho0_sq > kappa * ell and (ell == 0 or delta < el * L * L / (ell * ell))
    if min_ok:
        thr = eta * L / math.sqrt(2.0 * delta)
        if rho0_sq <= thr:
            t_min = 0.0
        else:
            t_min = max(0.0, (math.log(rho0_sq - kappa * ell) - math.log(thr - kappa * ell))
                        / -math.log1p(-4.0 * el))
    else:
        notes.append("t_min: requires rho0_sq > kappa*ell and delta < eta*lam*L^2/ell^2")

    max_ok = ell > 0 and rho0_sq > kappa * L and delta < el * ell * ell / (L * L)
    if max_ok:
        thr = eta * ell / math.sqrt(2.0 * delta)
        if rho0_sq <= thr:
            t_max = 0.0
        else:
            t_max = max(0.0, (math.log(rho0_sq - kappa * L) - math.log(thr - kappa * L))
                        / -math.log1p(-2.0 * el))
    else:
        notes.append("t_max: requires ell > 0, rho0_sq > kappa*L and delta < eta*lam*ell^2/L^2")
    return JumpTimeBounds(t_min, t_max, min_ok, max_ok, tuple(notes))


def equilibrium_band(eta: float, lam: float, ell: float, L: float) -> EquilibriumBand:
    """Band ``[kappa l, kappa L]`` attracting the squared norm, ``kappa = sqrt(eta / (2 lam))``.

    When ``2 eta lam L <= l`` fails the band is still returned, flagged, and
    accompanied by the relaxed global upper bound
    ``(1 - eta lam)^2 kappa l + eta^2 L^2 / (kappa l)``.
    """
    if lam <= 0:
        raise DomainError("the equilibrium band is undefined without weight decay")
    if not 0 <= ell <= L:
        raise DomainError("bounds must satisfy 0 <= ell <= L")
    kappa = math.sqrt(eta / (2.0 * lam))
    root = math.sqrt(2.0 * eta * lam)
    holds = 2.0 * eta * lam * L <= ell
    relaxed = None
    if not holds and ell > 0:
        relaxed = (1.0 - eta * lam) ** 2 * kappa * ell + (eta * L) ** 2 / (kappa * ell)
    elr = (root / L if L > 0 else math.inf, root / ell if ell > 0 else math.inf)
    return EquilibriumBand(kappa, (kappa * ell, kappa * L), elr, holds, relaxed)


# ---------------------------------------------------------------------------
# Synthetic dynamics with controlled effective gradients


def norm_dynamics(rho0_sq: float, eta: float, lam: float, eff_grad_norms) -> np.ndarray:
    """Squared-norm series driven by a prescribed effective-gradient sequence."""
    g = np.asarray(eff_grad_norms, dtype=float)
    out = np.empty(g.size + 1)
    out[0] = r = float(rho0_sq)
    shrink2 = (1.0 - eta * lam) ** 2
    e2 = eta * eta
    for t in range(g.size):
        r = shrink2 * r + e2 * g[t] * g[t] / r
        out[t + 1] = r
    return out


def vector_norm_dynamics(rho0_sq: float, eta: float, lam: float, eff_grad_norms, dim: int = 8,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Runs the actual vector update with gradients of prescribed effective norm.

    Each gradient is a random direction orthogonal to the iterate with norm
    ``g_eff / ||x||``, so the update is a faithful realisation of (S)GD on a
    scale-invariant objective.  Returns ``(rho_sq, cos_dist)`` with
    ``rho_sq[t]`` the squared norm before step ``t`` and ``cos_dist[t]``
    measured from the vectors.
    """
    from .dynamics import cosine_distance

    rng = np.random.default_rng(seed)
    g_eff = np.asarray(eff_grad_norms, dtype=float)
    x = rng.standard_normal(dim)
    x *= math.sqrt(rho0_sq) / np.linalg.norm(x)
    rho_sq = np.empty(g_eff.size + 1)
    cd = np.empty(g_eff.size)
    for t in range(g_eff.size):
        r2 = float(x @ x)
        rho_sq[t] = r2
        d = rng.standard_normal(dim)
        d -= (d @ x) / r2 * x
        d *= g_eff[t] / math.sqrt(r2) / np.linalg.norm(d)
        x_next = (1.0 - eta * lam) * x - eta * d
        cd[t] = cosine_distance(x, x_next)
        x = x_next
    rho_sq[-1] = float(x @ x)
    return rho_sq, cd


def first_jump_step(rho0_sq: float, eta: float, lam: float, eff_grad_norm, delta: float,
                    max_steps: int = 10_000_000) -> int | None:
    """First step whose cosine distance exceeds ``delta`` under the scalar norm recursion.

    ``eff_grad_norm`` is either a callable ``t -> g_eff`` or a sequence
    (indexed by step; the run stops when it is exhausted).  The cosine
    distance of each step is evaluated through its closed form.  Returns
    ``None`` if no jump happens within ``max_steps``.
    """
    g_of = eff_grad_norm if callable(eff_grad_norm) else None
    seq = None if g_of is not None else np.asarray(eff_grad_norm, dtype=float)
    limit = max_steps if seq is None else min(max_steps, seq.size)
    shrink = 1.0 - eta * lam
    shrink2 = shrink * shrink
    e2 = eta * eta
    r = float(rho0_sq)
    for t in range(limit):
        g = float(g_of(t)) if g_of is not None else float(seq[t])
        step2 = e2 * g * g
        q = step2 / (shrink2 * r * r)
        s = math.sqrt(1.0 + q)
        if q / (s * (1.0 + s)) > delta:
            return t
        r = shrink2 * r + step2 / r
    return None


# ---------------------------------------------------------------------------
# Envelopes


def _window_slice(cols, window) -> tuple[np.ndarray, np.ndarray]:
    steps = np.asarray(cols["step"])
    a, b = window
    mask = (steps >= a) & (steps <= b)
    return steps[mask], mask


def fit_envelopes(trajectory, window: tuple[int, int], family="const", t0: float | None = None,
                  max_offset: float | None = None) -> GradientBounds:
    """Tightest envelope pair of a family bounding ``eff_grad_norm`` on ``window``.

    ``family`` is a family name or a ``(lower, upper)`` pair.  For a given
    ``t0`` the constants are closed-form (min and max of ``g / phi``); ``t0``
    itself is chosen by 1-D search to minimise the summed log gap
    ``log L(t) - log l(t)`` over the window, unless given.  Constants are
    widened by a relative ``1e-9`` so rounding never breaks the bounding
    condition at touching points.
    """
    lower_fam, upper_fam = (family, family) if isinstance(family, str) else family
    for fam in (lower_fam, upper_fam):
        if fam not in FAMILIES:
            raise ValueError(f"unknown envelope family {fam!r}")
    cols = _columns(trajectory)
    steps, mask = _window_slice(cols, window)
    if steps.size == 0:
        raise ValueError(f"empty envelope window {window}")
    g = np.asarray(cols["eff_grad_norm"])[mask]
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise ValueError("window contains invalid effective gradient norms")
    t = steps.astype(float)
    start = t[0]

    def constants(t0_):
        pl = GradientBounds._phi(lower_fam, t, t0_)
        pu = GradientBounds._phi(upper_fam, t, t0_)
        return float(np.min(g / pl)), float(np.max(g / pu)), pl, pu

    def gap(t0_):
        cl, cu, pl, pu = constants(t0_)
        if cl <= 0:
            return math.inf
        return float(np.sum(np.log(cu * pu) - np.log(cl * pl)))

    if lower_fam == upper_fam == "const":
        t0_best = start - 1.0 if t0 is None else float(t0)
    elif t0 is not None:
        t0_best = float(t0)
        if t0_best >= start:
            raise ValueError("t0 must precede the window")
    else:
        span = max(float(t[-1] - start), 1.0)
        reach = 10.0 * span if max_offset is None else float(max_offset)
        offsets = np.unique(np.concatenate([np.arange(1.0, min(reach, 2.0 * span + 2.0) + 1.0),
                                            np.geomspace(1e-3, reach, 200)]))
        values = [gap(start - o) for o in offsets]
        k = int(np.argmin(values))
        lo = offsets[max(k - 1, 0)]
        hi = offsets[min(k + 1, offsets.size - 1)]
        best_off, best_val = offsets[k], values[k]
        if hi > lo:
            res = minimize_scalar(lambda o: gap(start - o), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10})
            if res.fun < best_val:
                best_off = float(res.x)
        t0_best = start - best_off
    cl, cu, _, _ = constants(t0_best)
    if not math.isfinite(cu):
        raise ValueError("no valid envelope in this family for the window")
    return GradientBounds(cl * (1 - ENVELOPE_SLACK), cu * (1 + ENVELOPE_SLACK), lower_fam, upper_fam,
                          float(t0_best), int(steps[0]), int(steps[-1]))


def _cos_dist_from_q(q):
    s = np.sqrt(1.0 + q)
    return q / (s * (1.0 + s))


def delta_envelopes(trajectory, bounds: GradientBounds, exact: bool = True) -> dict[str, np.ndarray]:
    """Per-step ``delta_min``/``delta_max`` implied by the bounds on their validity window.

    With ``exact=False`` the first-order forms ``eta^2 l^2 / (2 rho^4)`` and
    ``eta^2 L^2 / (2 rho^4)`` are used.  The exact forms push the bounds
    through the cosine closed form and therefore sandwich the measured
    cosine distance whenever the envelopes bound the effective gradient.
    """
    cols = _columns(trajectory)
    eta, lam = _eta_lam(trajectory)
    end = bounds.t_end if bounds.t_end is not None else int(np.asarray(cols["step"])[-1])
    steps, mask = _window_slice(cols, (bounds.t_valid, end))
    rho4 = np.asarray(cols["rho"])[mask] ** 4
    lo, hi = bounds.lower(steps), bounds.upper(steps)
    if exact:
        denom = (1.0 - eta * lam) ** 2 * rho4
        dmin = _cos_dist_from_q(eta * eta * lo * lo / denom)
        dmax = _cos_dist_from_q(eta * eta * hi * hi / denom)
    else:
        dmin = eta * eta * lo * lo / (2.0 * rho4)
        dmax = eta * eta * hi * hi / (2.0 * rho4)
    return {"step": steps, "cos_dist": np.asarray(cols["cos_dist"])[mask], "delta_min": dmin, "delta_max": dmax}


def envelopes_csv(overlay: dict[str, np.ndarray], path=None) -> str:
    lines = ["step,cos_dist,delta_min,delta_max"]
    for s, c, lo, hi in zip(overlay["step"], overlay["cos_dist"], overlay["delta_min"], overlay["delta_max"]):
        lines.append(f"{int(s)},{float(c)!r},{float(lo)!r},{float(hi)!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _eta_lam(trajectory) -> tuple[float, float]:
    cfg = getattr(trajectory, "config", None)
    if cfg is not None:
        return cfg.eta, cfg.lam
    return float(trajectory["eta"]), float(trajectory["lam"])


# ---------------------------------------------------------------------------
# Phase segmentation


def _smooth(y: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return y.astype(float)
    kernel = np.ones(width) / width
    pad = width // 2
    yp = np.pad(y.astype(float), (pad, width - 1 - pad), mode="edge")
    return np.convolve(yp, kernel, mode="valid")


def segment_phases(trajectory, delta: float = TOY_DELTA, debounce: int = DEFAULT_DEBOUNCE,
                   smoothing: float = 0.02, loss_threshold: float | None = None,
                   error_threshold: float = 0.005) -> list[PeriodSummary]:
    """Splits a trace into periods delimited by delta-jumps and labels phases A, B, C.

    Each destabilization starts phase C at its jump event; C lasts while the
    smoothed loss keeps rising.  Between the end of one C and the start of
    the next jump, phase A runs up to the peak of the smoothed squared norm
    and phase B covers its decline.  A complete period is ``A, B, C`` ending
    with the C of its terminating jump.  The segment before the first C ends
    is the warm-up, the one after the last is the tail.

    A period is labeled ``unclassified`` unless A has a rising and B a
    falling smoothed norm trend and B reaches the low-loss regime: train
    error below ``error_threshold`` when labels exist, else loss below
    ``loss_threshold`` (default: the period's 10th loss percentile).
    """
    cols = _columns(trajectory)
    steps = np.asarray(cols["step"])
    n = steps.size
    rho_sq = np.asarray(cols["rho"]) ** 2
    loss = np.asarray(cols["loss"])
    err = np.asarray(cols.get("train_error", np.full(n, np.nan)))
    events = detect_jumps(trajectory, delta, debounce)

    def summary(index, a, b, label, phases=None, jump=None, lag=None):
        return PeriodSummary(index, int(steps[a]), int(steps[b]), label, phases, jump,
                             float(rho_sq[a:b + 1].min()), float(rho_sq[a:b + 1].max()),
                             float(loss[a:b + 1].min()), lag)

    if n == 0:
        return []
    if not events:
        return [summary(0, 0, n - 1, "unlabeled")]

    pos = {int(s): i for i, s in enumerate(steps)}
    jidx = [pos[e.step] for e in events]
    gaps = np.diff(jidx)
    typical = float(np.median(gaps)) if gaps.size else float(n)
    width = max(1, int(round(smoothing * typical)))
    sm_loss = _smooth(loss, width)
    sm_rho = _smooth(rho_sq, width)
    drho = np.gradient(sm_rho)

    # end of each C phase: peak of the smoothed loss after the jump
    c_end = []
    for k, j in enumerate(jidx):
        limit = jidx[k + 1] if k + 1 < len(jidx) else n
        horizon = min(limit, j + max(2, (limit - j) // 2))
        c_end.append(j + int(np.argmax(sm_loss[j:horizon])))

    periods = [summary(0, 0, c_end[0], "warm-up", jump=events[0])]
    labeled = np.isfinite(err).any()
    for k in range(1, len(jidx)):
        a, j, c = c_end[k - 1] + 1, jidx[k], c_end[k]
        if j - a < 2:
            periods.append(summary(k, min(a, c), c, "unclassified", jump=events[k]))
            continue
        p = a + int(np.argmax(sm_rho[a:j]))
        phases = {"A": (int(steps[a]), int(steps[p])), "B": (int(steps[p + 1]) if p + 1 < j else int(steps[j - 1]),
                                                             int(steps[j - 1])),
                  "C": (int(steps[j]), int(steps[c]))}
        rising = p > a and np.mean(drho[a:p + 1]) > 0 or p == a and drho[a] > 0
        falling = p + 1 < j and np.mean(drho[p + 1:j]) < 0
        if labeled:
            low = np.nanmin(err[p + 1:j]) <= error_threshold if falling else False
        else:
            thr = np.percentile(loss[a:c + 1], 10) if loss_threshold is None else loss_threshold
            low = loss[p + 1:j].min() <= thr if falling else False
        lag = _onset_lag(sm_loss, sm_rho, p + 1, c)
        label = "ABC" if rising and falling and low else "unclassified"
        periods.append(summary(k, a, c, label, phases if label == "ABC" else None, events[k], lag))
    if c_end[-1] + 1 < n:
        periods.append(summary(len(jidx), c_end[-1] + 1, n - 1, "tail"))
    return periods


def _onset_lag(sm_loss, sm_rho, a, b) -> int | None:
    """Steps by which the loss minimum precedes the norm minimum inside ``[a, b]``."""
    if b <= a:
        return None
    return int(np.argmin(sm_rho[a:b + 1]) - np.argmin(sm_loss[a:b + 1]))


# ---------------------------------------------------------------------------
# Frequency vs eta*lam


@dataclass
class FrequencyReport:
    rows: list[tuple[float, float, int]]
    excluded: list[tuple[float, str]] = field(default_factory=list)

    @property
    def monotone_decreasing(self) -> bool:
        lengths = [r[1] for r in sorted(self.rows)]
        return len(lengths) >= 2 and all(b < a for a, b in zip(lengths, lengths[1:]))

    @property
    def log_slope(self) -> float:
        """Slope of log(period length) against log(eta*lam); -1 is inverse proportionality."""
        x = np.log([r[0] for r in self.rows])
        y = np.log([r[1] for r in self.rows])
        return float(np.polyfit(x, y, 1)[0])

    def table(self) -> str:
        lines = [f"{'eta*lam':>12}  {'mean period':>12}  {'periods':>7}"]
        for el, length, count in sorted(self.rows):
            lines.append(f"{el:>12.4g}  {length:>12.2f}  {count:>7d}")
        for el, why in self.excluded:
            lines.append(f"{el:>12.4g}  excluded: {why}")
        verdict = "strictly decreasing" if self.monotone_decreasing else "NOT strictly decreasing"
        lines.append(f"period length is {verdict} in eta*lam")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"rows": [{"eta_lam": el, "mean_period": m, "periods": c} for el, m, c in sorted(self.rows)],
                "excluded": [{"eta_lam": el, "reason": r} for el, r in self.excluded],
                "monotone_decreasing": self.monotone_decreasing}


def period_frequency_report(trajectories, delta: float = TOY_DELTA, debounce: int = DEFAULT_DEBOUNCE,
                            min_periods: int = 2) -> FrequencyReport:
    """Mean inter-jump interval per run, tabulated against ``eta*lam``.

    Runs with fewer than ``min_periods`` complete periods are excluded; at
    least three usable grid points are needed for a verdict.
    """
    report = FrequencyReport([])
    for traj in trajectories:
        el = traj.config.eta_lam
        events = detect_jumps(traj, delta, debounce)
        complete = len(events) - 1
        if complete < min_periods:
            report.excluded.append((el, f"{max(complete, 0)} complete periods < {min_periods}"))
            continue
        intervals = np.diff([e.step for e in events])
        report.rows.append((el, float(intervals.mean()), complete))
    if len(report.rows) < 3:
        warnings.warn("fewer than three usable grid points; the monotonicity verdict is weak", stacklevel=2)
    return report
