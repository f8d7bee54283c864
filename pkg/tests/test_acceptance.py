"""Acceptance criteria, one test per criterion.

Each test times itself against the criterion's runtime budget.  The
terminal summary prints a PASS/FAIL line per criterion (see conftest.py).
"""

import time

import numpy as np
import pytest

from sidynamics import verify as v
from sidynamics.dynamics import OptimizerConfig, run
from sidynamics.jumps import detect_jumps, segment_phases
from sidynamics.net import (DESK_DATA, DESK_DELTA, DESK_ETA, DESK_LAM, DESK_NET, DESK_STEPS, build, make_dataset,
                            similarity_study, train)
from sidynamics.objectives import certify_inverse_homogeneity, certify_orthogonality, check_gradient

MINUTES = 60.0
TWIN_CHECKPOINT = 3500
TRANSIENT = DESK_STEPS // 10


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t


def report(check):
    print(f"{check.name}: passed={check.passed} witness={check.witness} details={v._plain(check.details)}")


@pytest.fixture(scope="module")
def desk():
    """GD run of the pinned desk net with dense checkpoints, plus its wall time."""
    t = time.perf_counter()
    net = build(DESK_NET, make_dataset(DESK_DATA, 0))
    cfg = OptimizerConfig(eta=DESK_ETA, lam=DESK_LAM, steps=DESK_STEPS)
    res = train(net, cfg, checkpoint_steps=range(0, DESK_STEPS + 1, 100))
    periods = segment_phases(res.trajectory, DESK_DELTA)
    return net, cfg, res, periods, time.perf_counter() - t


@pytest.mark.criterion(1, "closed-form norm and cosine fidelity")
def test_closed_form_fidelity():
    check, elapsed = timed(v.closed_form_check, steps=10_000, rtol=1e-9)
    report(check)
    assert check.passed, f"first violation at step {check.witness}"
    assert max(check.details["max_rel_err_norm"], check.details["max_rel_err_cos"]) < 1e-9
    assert elapsed < 1.0


@pytest.mark.criterion(2, "toy periodicity and weight-decay-free convergence")
def test_toy_periodicity():
    check, elapsed = timed(v.toy_periodicity, steps=20_000)
    report(check)
    d = check.details
    assert d["complete_periods"] == v.TOY_PERIODS
    assert d["complete_periods"] >= 3 and d["phase_order"]
    assert d["no_wd_elr_monotone"] and d["no_wd_min_loss"] < 1e-6
    assert check.passed
    assert elapsed < 5.0


@pytest.mark.criterion(3, "jump threshold soundness")
def test_threshold_soundness():
    check, elapsed = timed(v.threshold_soundness, trials=50)
    report(check)
    d = check.details
    assert d["trials"] == 50
    assert d["jumps_above_necessary"] == 0 and d["steps_above_necessary"] > 0
    assert d["non_jumps_below_sufficient"] == 0 and d["steps_below_sufficient"] > 0
    assert elapsed < 10.0


@pytest.mark.criterion(4, "first-jump bracketing and worked example")
def test_bracketing():
    t = time.perf_counter()
    trials = v.bracketing_trials(trials=50)
    worked = v.worked_example()
    elapsed = time.perf_counter() - t
    report(trials)
    report(worked)
    assert trials.details["bracketed"] == 50 == trials.details["trials"]
    assert worked.details["oracle_crossing"] == v.WORKED_EXAMPLE_CROSSING
    assert abs(worked.details["t_min"] - v.WORKED_EXAMPLE_CROSSING) <= 1.0
    assert elapsed < 30.0


@pytest.mark.criterion(5, "equilibrium band absorption and entry-time scaling")
def test_band():
    check, elapsed = timed(v.band_absorption, hold_steps=100_000)
    report(check)
    d = check.details
    assert d["exits"] == [0, 0, 0]
    entry = np.array(d["entry"])
    assert np.all(np.diff(entry) > 0)  # smaller eta*lam enters later
    scaled = np.array(d["entry_times_eta_lam"])
    assert scaled.max() / scaled.min() <= 1.3
    assert elapsed < 30.0


@pytest.mark.criterion(6, "beta-sequence properties, sandwiches and absorption")
def test_beta_sequences():
    t = time.perf_counter()
    checks = [v.gamma_properties(alphas=(0.05, 0.1, 0.25, 0.4)), v.det_sandwich_trials(trials=100),
              v.undet_sandwich_trials(trials=100), v.absorption_trials(trials=100), v.reference_band()]
    elapsed = time.perf_counter() - t
    for c in checks:
        report(c)
    gamma, a1, a2, absorb, ref = checks
    assert gamma.passed
    assert a1.details["passed"] == 100 and a2.details["passed"] == 100 and absorb.details["passed"] == 100
    assert ref.details["band"] == pytest.approx([np.sqrt(10.0), 10.0]) and ref.details["exits"] == 0
    assert ref.passed
    assert elapsed < 30.0


@pytest.mark.criterion(7, "rescaling equivalence")
def test_rescaling():
    check, elapsed = timed(v.rescaling_check, scales=(0.5, 2.0, 10.0), steps=200, rtol=1e-8)
    report(check)
    assert check.details["steps"] >= 200
    assert max(check.details["max_rel_dev"].values()) < 1e-8
    assert check.passed
    assert elapsed < 1.0


@pytest.mark.criterion(8, "period length decreases with eta*lam")
def test_frequency():
    check, elapsed = timed(v.frequency_trend)
    report(check)
    lengths = check.details["mean_length"]
    assert check.details["eta_lam"] == [5e-3, 1e-2, 2e-2]
    assert lengths[0] > lengths[1] > lengths[2]
    assert elapsed < 30.0


@pytest.mark.criterion(9, "desk net periodicity and sphere-projected ablation")
def test_net_periodicity(desk):
    net, cfg, res, periods, setup = desk
    t = time.perf_counter()
    complete = [p for p in periods if p.complete]
    jumps = [e.step for e in detect_jumps(res.trajectory, DESK_DELTA)]
    print(f"free run: jumps at {jumps}, {len(complete)} complete periods")
    assert len(complete) >= 2

    later = [s for s in jumps if s >= TRANSIENT]
    assert TWIN_CHECKPOINT < later[0], "twin checkpoint must precede the first post-transient jump"
    ck = next(c for c in res.checkpoints if c.step == TWIN_CHECKPOINT)
    sphere = OptimizerConfig(eta=DESK_ETA, lam=DESK_LAM, family="sphere", steps=DESK_STEPS)
    for label, x0 in (("init", net.init_params(cfg.seed)), ("checkpoint", ck.params)):
        twin = run(net, sphere, x0)
        twin_jumps = [e.step for e in detect_jumps(twin, DESK_DELTA) if e.step >= TRANSIENT]
        twin_periods = [p for p in segment_phases(twin, DESK_DELTA) if p.complete and p.start >= TRANSIENT]
        print(f"sphere twin from {label}: {len(twin_jumps)} jumps and {len(twin_periods)} periods after step "
              f"{TRANSIENT}")
        assert np.allclose(twin["rho"], np.linalg.norm(x0))
        assert twin_jumps == [] and twin_periods == []
    assert setup + time.perf_counter() - t < 5 * MINUTES


@pytest.mark.criterion(10, "desk net within-period vs cross-period similarity")
def test_net_similarity(desk):
    net, _, res, periods, setup = desk
    study, elapsed = timed(similarity_study, net, periods, res.checkpoints)
    for row in study.rows:
        print({k: round(val, 4) if isinstance(val, float) else val for k, val in row.items()})
    gaps = study.gaps
    print(f"median gap {np.median(gaps):.4f}, sign-test p {study.sign_test_p:.4f}")
    assert len(study.rows) >= 3
    assert np.median(gaps) > 0 and np.all(gaps > 0)
    for row in study.rows:
        assert row["ensemble_err"] <= row["anchor_err"]
    assert setup + elapsed < 5 * MINUTES


@pytest.mark.criterion(11, "fitted envelopes sandwich the cosine distance")
def test_envelopes():
    check, elapsed = timed(v.envelope_sandwich)
    report(check)
    for family in ("const", "inv", "inv2"):
        d = check.details[family]
        assert d["steps"] > 0 and d["outside"] == 0
    assert elapsed < 5.0


@pytest.mark.criterion(12, "scale-invariance certification of toy and net")
def test_certification():
    t = time.perf_counter()
    toy = v.toy_certification(tol=1e-12)
    report(toy)
    assert toy.passed
    net = build(DESK_NET, make_dataset(DESK_DATA, 0))
    ortho = certify_orthogonality(net, samples=20, tol=1e-6)
    homog = certify_inverse_homogeneity(net, scales=(0.5, 2.0), samples=20, tol=1e-6)
    x = net.init_params(0)
    coords = np.random.default_rng(0).choice(net.dim, 32, replace=False)
    fd = check_gradient(net, x, h=1e-5, coords=coords, batch=np.arange(64))
    print(f"net orthogonality {ortho.max_deviation:.2e}, homogeneity {homog.max_deviation:.2e}, fd {fd:.2e}")
    assert ortho.passed and homog.passed and fd < 1e-4
    assert time.perf_counter() - t < 10.0
