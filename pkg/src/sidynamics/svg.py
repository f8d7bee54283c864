"""Minimal SVG line charts for training traces.

No plotting library is involved: each chart is a handful of polylines in a
fixed-size viewport, with optional log-scaled y axes and shaded x-spans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["Series", "Chart", "PlotError", "trace_charts", "period_chart", "phase_diagram",
           "envelope_chart", "KINDS", "PHASE_COLORS"]

KINDS = ("trace", "period", "phase", "envelopes")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
PHASE_COLORS = {"A": "#fde0c5", "B": "#d4ecd4", "C": "#f6c6c6"}


class PlotError(ValueError):
    """Raised for empty input or an unknown chart kind."""


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    dashed: bool = False


@dataclass
class Chart:
    title: str
    xlabel: str = "step"
    ylabel: str = ""
    logy: bool = False
    width: int = 720
    height: int = 360
    series: list[Series] = field(default_factory=list)
    spans: list[tuple[float, float, str, str]] = field(default_factory=list)

    margin = (64, 20, 36, 48)  # left, right, top, bottom

    def add(self, x, y, label="", dashed=False) -> "Chart":
        self.series.append(Series(np.asarray(x, dtype=float), np.asarray(y, dtype=float), label, dashed))
        return self

    def shade(self, x0, x1, color, label="") -> "Chart":
        self.spans.append((float(x0), float(x1), color, label))
        return self

    def _limits(self):
        xs = np.concatenate([s.x for s in self.series])
        ys = np.concatenate([s.y for s in self.series])
        ok = np.isfinite(xs) & np.isfinite(ys)
        if self.logy:
            ok &= ys > 0
        if not ok.any():
            raise PlotError(f"{self.title}: nothing to draw")
        xs, ys = xs[ok], ys[ok]
        if self.logy:
            ys = np.log10(ys)
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        return x0, x1, y0, y1

    def render(self) -> str:
        if not self.series:
            raise PlotError(f"{self.title}: no series")
        x0, x1, y0, y1 = self._limits()
        ml, mr, mt, mb = self.margin
        pw, ph = self.width - ml - mr, self.height - mt - mb

        def px(x):
            return ml + (x - x0) / (x1 - x0) * pw

        def py(y):
            return mt + ph - (y - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>']
        for a, b, color, label in self.spans:
            a, b = max(a, x0), min(b, x1)
            if b <= a:
                continue
            out.append(f'<rect x="{px(a):.2f}" y="{mt}" width="{px(b) - px(a):.2f}" height="{ph}" '
                       f'fill="{color}" opacity="0.7"><title>{escape(label)}</title></rect>')
        out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
        for i in range(5):
            fx = x0 + (x1 - x0) * i / 4
            fy = y0 + (y1 - y0) * i / 4
            ylab = f"{10 ** fy:.3g}" if self.logy else f"{fy:.3g}"
            out.append(f'<text x="{px(fx):.2f}" y="{mt + ph + 14}" text-anchor="middle">{fx:.4g}</text>')
            out.append(f'<text x="{ml - 4}" y="{py(fy) + 4:.2f}" text-anchor="end">{ylab}</text>')
        for k, s in enumerate(self.series):
            color = PALETTE[k % len(PALETTE)]
            y = s.y
            ok = np.isfinite(s.x) & np.isfinite(y)
            if self.logy:
                ok &= y > 0
                y = np.where(ok, np.log10(np.where(ok, y, 1.0)), np.nan)
            # break the line at gaps so missing values are not bridged
            runs, cur = [], []
            for xi, yi, good in zip(s.x, y, ok):
                if good:
                    cur.append(f"{px(xi):.2f},{py(yi):.2f}")
                elif cur:
                    runs.append(cur)
                    cur = []
            if cur:
                runs.append(cur)
            dash = ' stroke-dasharray="5,3"' if s.dashed else ""
            for pts in runs:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} '
                           f'points="{" ".join(pts)}"/>')
            if s.label:
                out.append(f'<text x="{ml + pw - 4}" y="{mt + 14 + 13 * k}" text-anchor="end" '
                           f'fill="{color}">{escape(s.label)}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="{mt - 12}" text-anchor="middle" font-size="13">'
                   f'{escape(self.title)}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="{self.height - 8}" text-anchor="middle">{escape(self.xlabel)}</text>')
        ylabel = self.ylabel + (" (log)" if self.logy else "")
        out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        text = self.render()  # render first so a failure leaves no file behind
        with open(path, "w") as fh:
            fh.write(text)


def _require(columns: dict):
    if not columns or len(columns.get("step", [])) == 0:
        raise PlotError("empty trace")


def trace_charts(columns: dict, log_loss: bool = True, log_lr: bool = True) -> dict[str, Chart]:
    """One chart per tracked quantity (loss, rho, effective LR, effective gradient, cos_dist)."""
    _require(columns)
    step = columns["step"]
    spec = [("loss", "loss", log_loss), ("rho", "weight norm", False), ("eff_lr", "effective LR", log_lr),
            ("eff_grad_norm", "effective gradient norm", False), ("cos_dist", "cosine distance", False)]
    charts = {}
    for key, label, logy in spec:
        if key in columns:
            charts[key] = Chart(label, ylabel=label, logy=logy).add(step, columns[key], key)
    return charts


def period_chart(columns: dict, period: dict, quantity: str = "loss", pad: int = 0) -> Chart:
    """Single period with phases A, B, C shaded and ``quantity`` plus the norm overlaid.

    ``period`` is a period summary dict with a ``phases`` mapping of
    ``(start, end)`` step pairs.
    """
    _require(columns)
    step = np.asarray(columns["step"])
    lo = period["start"] - pad
    hi = period["end"] + pad
    m = (step >= lo) & (step <= hi)
    if not m.any():
        raise PlotError("period lies outside the trace")
    ch = Chart(f"period {period.get('index', '')}: phases A, B, C", ylabel=f"{quantity} / rho (scaled)")
    for name, (a, b) in period["phases"].items():
        ch.shade(a, b + 1, PHASE_COLORS.get(name, "#eeeeee"), f"phase {name}")
    y = np.asarray(columns[quantity], dtype=float)[m]
    rho = np.asarray(columns["rho"], dtype=float)[m]
    ch.add(step[m], _unit(y), quantity)
    ch.add(step[m], _unit(rho), "rho", dashed=True)
    return ch


def _unit(v):
    v = np.asarray(v, dtype=float)
    lo, hi = np.nanmin(v), np.nanmax(v)
    return (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)


def phase_diagram(columns: dict) -> Chart:
    """Effective LR against effective gradient norm, traced in step order."""
    _require(columns)
    ch = Chart("effective LR vs effective gradient", xlabel="effective gradient norm", ylabel="effective LR",
               logy=True)
    return ch.add(columns["eff_grad_norm"], columns["eff_lr"], "trajectory")


def envelope_chart(columns: dict, overlay: dict, window=None, logy: bool = True) -> Chart:
    """Observed cosine distance against the ``delta_min`` / ``delta_max`` curves."""
    _require(columns)
    if not overlay or len(overlay.get("step", [])) == 0:
        raise PlotError("empty envelope overlay")
    ch = Chart("cosine distance with envelopes", ylabel="cosine distance", logy=logy)
    step = np.asarray(columns["step"])
    cos = np.asarray(columns["cos_dist"], dtype=float)
    if window is not None:
        m = (step >= window[0]) & (step <= window[1])
        step, cos = step[m], cos[m]
    ch.add(step, cos, "observed")
    ch.add(overlay["step"], overlay["delta_min"], "delta_min", dashed=True)
    ch.add(overlay["step"], overlay["delta_max"], "delta_max", dashed=True)
    return ch
