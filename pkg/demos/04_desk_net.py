"""Periodic behaviour of a small scale-invariant network, and what removes it.

A two-hidden-layer tanh network with batch normalisation and a frozen last
layer is trained by full-batch gradient descent with weight decay.  The
same network trained on a sphere of fixed radius (so the effective learning
rate cannot drift) shows no jumps at all.  Checkpoints from different
periods turn out to be far apart in weight space, and averaging their
predictions helps.

Takes about a minute.  Run from the repository root:  python demos/04_desk_net.py
"""

import numpy as np

from sidynamics import OptimizerConfig, run
from sidynamics.jumps import detect_jumps, segment_phases
from sidynamics.net import (DESK_DATA, DESK_DELTA, DESK_ETA, DESK_LAM, DESK_NET, DESK_STEPS, bayes_error, build,
                            make_dataset, similarity_study, train)

data = make_dataset(DESK_DATA, 0)
net = build(DESK_NET, data)
print(f"{net.dim} parameters, {DESK_DATA.n_train} training points, Bayes error ~ {bayes_error(data):.3f}")

cfg = OptimizerConfig(eta=DESK_ETA, lam=DESK_LAM, steps=DESK_STEPS)
res = train(net, cfg, checkpoint_steps=range(0, DESK_STEPS + 1, 100))
periods = segment_phases(res.trajectory, DESK_DELTA)
print("jumps at steps", [e.step for e in detect_jumps(res.trajectory, DESK_DELTA)])
for p in periods:
    if p.complete:
        print(f"  period {p.index}: steps {p.start}..{p.end}, phases {p.phases}")

sphere = OptimizerConfig(eta=DESK_ETA, lam=DESK_LAM, family="sphere", steps=DESK_STEPS)
twin = run(net, sphere, net.init_params(0))
late = [e.step for e in detect_jumps(twin, DESK_DELTA) if e.step >= DESK_STEPS // 10]
print(f"sphere-projected twin: {len(late)} jumps after the first {DESK_STEPS // 10} steps, "
      f"final test error {net.error(twin.final_x, 'test'):.3f}")

study = similarity_study(net, periods, res.checkpoints)
for row in study.rows:
    print(f"  anchor {row['anchor_step']:5d}: within-period cos {row['within_cos']:.3f}, "
          f"next-period cos {row['cross_cos']:.3f}, error {row['anchor_err']:.3f} -> "
          f"ensemble {row['ensemble_err']:.3f}")
print(f"median gap {np.median(study.gaps):.3f}")
