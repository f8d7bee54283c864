"""Periodic behaviour on the two-dimensional toy objective.

With weight decay the weight norm shrinks until the effective learning rate
is large enough to throw the iterate across the valley; the norm jumps, the
effective learning rate collapses and the cycle starts again.  Without
weight decay the norm only grows and training simply converges.

Run from the repository root:  python demos/01_toy_periods.py
"""

from pathlib import Path

import numpy as np

from sidynamics import OptimizerConfig, ToyRational, run
from sidynamics import svg
from sidynamics.jumps import detect_jumps, segment_phases

out = Path("runs/demo-toy")
out.mkdir(parents=True, exist_ok=True)
toy = ToyRational()
x0 = np.array([0.01, 1.0])

periodic = run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=20000), x0)
jumps = detect_jumps(periodic, 0.01)
periods = [p for p in segment_phases(periodic, 0.01) if p.complete]
print(f"lam=0.01: {len(jumps)} jumps, {len(periods)} complete periods")

lengths = np.array([p.end - p.start + 1 for p in periods])
print(f"period length: mean {lengths.mean():.1f}, min {lengths.min()}, max {lengths.max()}")

# phase lengths inside one period from the middle of the run
mid = periods[len(periods) // 2]
for name, (a, b) in mid.phases.items():
    print(f"  phase {name}: steps {a}..{b} ({b - a + 1} steps)")

still = run(toy, OptimizerConfig(eta=1.0, lam=0.0, steps=20000), x0)
elr = still["eff_lr"]
print(f"lam=0: final loss {still['loss'][-1]:.2e}, "
      f"effective LR non-increasing: {bool(np.all(np.diff(elr[1:]) <= 0))}")

svg.period_chart(periodic.columns, mid.to_dict(), pad=10).save(out / "period.svg")
svg.phase_diagram(periodic.columns).save(out / "phase.svg")
for name, chart in svg.trace_charts(still.columns).items():
    chart.save(out / f"no_decay_{name}.svg")
print(f"charts written to {out}/")
