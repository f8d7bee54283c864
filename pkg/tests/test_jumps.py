import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sidynamics.dynamics import OptimizerConfig, run
from sidynamics.jumps import (GradientBounds, delta_envelopes, detect_jumps, envelopes_csv, equilibrium_band,
                              exact_jump_thresholds, first_jump_step, fit_envelopes, jump_thresholds,
                              jump_time_bounds, norm_dynamics, period_frequency_report, segment_phases,
                              vector_norm_dynamics)
from sidynamics.objectives import DomainError

X0 = np.array([0.01, 1.0])


@pytest.fixture(scope="module")
def periodic(toy_module):
    return run(toy_module, OptimizerConfig(eta=1.0, lam=0.01, steps=20_000), X0)


@pytest.fixture(scope="module")
def toy_module():
    from sidynamics import ToyRational
    return ToyRational()


def cols_from(cd):
    cd = np.asarray(cd, dtype=float)
    return {"step": np.arange(cd.size), "cos_dist": cd, "rho": np.ones(cd.size)}


class TestDetectJumps:
    def test_flat_trace(self):
        assert detect_jumps(cols_from(np.zeros(50)), 0.01) == []

    def test_threshold_above_range(self, periodic):
        assert detect_jumps(periodic, float(periodic["cos_dist"].max()) * 1.01) == []

    def test_debounce_merges_close_hits(self):
        cd = np.zeros(40)
        cd[[3, 5, 8, 20, 30]] = 1.0
        ev = detect_jumps(cols_from(cd), 0.5, debounce=5)
        assert [e.step for e in ev] == [3, 20, 30]
        assert ev[0].length == 6
        assert [e.step for e in detect_jumps(cols_from(cd), 0.5, debounce=0)] == [3, 5, 8, 20, 30]

    def test_events_exceed_delta(self, periodic):
        assert all(e.cos_dist > 0.01 for e in detect_jumps(periodic, 0.01))

    def test_nonpositive_delta(self):
        with pytest.raises(DomainError):
            detect_jumps(cols_from([0.0]), 0.0)

    def test_one_event_per_loss_spike(self, periodic):
        # loss-spike episodes counted independently of the cosine distance
        high = periodic["loss"] > 0.01
        spikes = int(np.count_nonzero(high[1:] & ~high[:-1]) + high[0])
        assert len(detect_jumps(periodic, 0.01)) == spikes


class TestThresholds:
    def test_hand_value(self):
        possible, guaranteed = jump_thresholds(0.01, 0.001, (0.5, 1.0), 0.005)
        assert possible == pytest.approx(0.1)
        assert guaranteed == pytest.approx(0.05)

    def test_equal_bounds_give_equal_thresholds(self):
        a, b = jump_thresholds(0.1, 0.01, (0.7, 0.7), 0.01)
        assert a == b

    def test_large_delta_warns(self):
        with pytest.warns(UserWarning):
            jump_thresholds(0.1, 0.01, (0.5, 1.0), 0.2)

    def test_nonpositive_delta(self):
        with pytest.raises(DomainError):
            jump_thresholds(0.1, 0.01, (0.5, 1.0), 0.0)

    def test_exact_forms_bracket_first_order(self):
        nec, suff = exact_jump_thresholds(0.1, 0.1, (0.5, 1.0), 0.01)
        possible, guaranteed = jump_thresholds(0.1, 0.1, (0.5, 1.0), 0.01)
        assert nec > possible
        assert suff == pytest.approx(0.1 * 0.5 / (0.99 * math.sqrt(1 / 0.99 ** 2 - 1)))

    def test_envelope_bounds_need_a_step(self):
        b = GradientBounds(1.0, 2.0, "inv", "inv", t0=-1.0)
        with pytest.raises(ValueError):
            jump_thresholds(0.1, 0.01, b, 0.01)

    @given(st.floats(0.01, 1.0), st.floats(1e-3, 0.2), st.floats(0.1, 5.0), st.floats(0.1, 0.9),
           st.floats(1e-4, 0.2), st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_soundness_on_vector_dynamics(self, eta, el, L, frac, delta, seed):
        lam, ell = el / eta, L * frac
        nec, suff = exact_jump_thresholds(eta, lam, (ell, L), delta)
        g = np.random.default_rng(seed).uniform(ell, L, 300)
        r, cd = vector_norm_dynamics(2 * nec, eta, lam, g, seed=seed)
        assert not np.any((r[:-1] >= nec) & (cd > delta))
        assert not np.any((r[:-1] < suff) & (cd <= delta))


class TestJumpTime:
    def test_worked_example(self):
        b = jump_time_bounds(5.0, 0.01, 0.001, 0.5, 1.0, 1e-5)
        assert b.t_min == pytest.approx(31118.63, abs=0.01)
        assert not b.max_applicable and b.t_max is None and b.notes

    def test_already_below_threshold(self):
        b = jump_time_bounds(0.01, 0.01, 0.001, 0.5, 1.0, 1e-5)
        assert not b.min_applicable  # rho0^2 <= kappa*ell: flagged, not zero
        b = jump_time_bounds(2.0, 0.01, 0.001, 0.5, 1.0, 1e-5)  # kappa*ell < 2 < possible-threshold
        assert b.min_applicable and b.t_min == 0.0

    def test_doubling_eta_lam_roughly_halves(self):
        a = jump_time_bounds(50.0, 0.1, 0.01, 0.8, 1.0, 1e-4)
        b = jump_time_bounds(50.0 * 2, 0.2, 0.01, 0.8, 1.0, 1e-4)  # c^2 = 2 rescaling at twice the product
        assert 0.4 < b.t_max / a.t_max < 0.6
        assert 0.4 < b.t_min / a.t_min < 0.6

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            jump_time_bounds(1.0, 0.1, 0.0, 0.5, 1.0, 0.01)
        with pytest.raises(DomainError):
            jump_time_bounds(1.0, 0.1, 0.1, 1.5, 1.0, 0.01)

    def test_first_jump_on_constant_gradient(self):
        eta, lam, L, delta = 0.1, 0.01, 1.0, 5e-4
        t = first_jump_step(40.0, eta, lam, lambda _: L, delta)
        b = jump_time_bounds(40.0, eta, lam, L, L, delta)
        assert b.t_min <= t <= b.t_max
        r = norm_dynamics(40.0, eta, lam, np.full(t + 1, L))
        q = (eta * L) ** 2 / ((1 - eta * lam) ** 2 * r[t] ** 2)
        assert 1 - 1 / math.sqrt(1 + q) > delta

    def test_first_jump_sequence_exhausted(self):
        assert first_jump_step(1e6, 0.1, 0.01, [1.0] * 5, 1e-3) is None


class TestEquilibriumBand:
    def test_hand_values(self):
        b = equilibrium_band(0.01, 0.001, 0.5, 1.0)
        assert b.kappa == pytest.approx(math.sqrt(5))
        assert b.band == pytest.approx((1.118034, 2.236068), rel=1e-6)
        assert b.condition_holds and b.relaxed_upper is None

    def test_degenerate(self):
        lo, hi = equilibrium_band(0.1, 0.01, 0.7, 0.7).band
        assert lo == hi

    def test_elr_band_is_image(self):
        b = equilibrium_band(0.2, 0.05, 0.3, 1.7)
        assert b.elr_band[0] == pytest.approx(0.2 / b.band[1])
        assert b.elr_band[1] == pytest.approx(0.2 / b.band[0])

    def test_relaxed_bound_when_condition_fails(self):
        b = equilibrium_band(1.0, 0.2, 0.1, 1.0)
        assert not b.condition_holds
        assert b.relaxed_upper == pytest.approx(0.64 * b.kappa * 0.1 + 1.0 / (b.kappa * 0.1))

    def test_no_weight_decay(self):
        with pytest.raises(DomainError):
            equilibrium_band(0.1, 0.0, 0.5, 1.0)

    @given(st.floats(1e-3, 1.0), st.floats(1e-4, 0.1), st.floats(0.1, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_rescaling_scales_band(self, eta, lam, c):
        a = equilibrium_band(eta, lam, 0.5, 1.0)
        b = equilibrium_band(c * c * eta, lam / (c * c), 0.5, 1.0)
        assert b.band[1] == pytest.approx(c * c * a.band[1], rel=1e-12)
        assert b.elr_band[0] == pytest.approx(a.elr_band[0], rel=1e-12)

    def test_absorption_on_synthetic_run(self):
        eta, lam = 1.0, 0.05
        b = equilibrium_band(eta, lam, 1.0, math.sqrt(10))
        g = np.sqrt(np.random.default_rng(0).uniform(1, 10, 20_000))
        r = norm_dynamics(2 * b.band[1], eta, lam, g)
        inside = (r >= b.band[0]) & (r <= b.band[1])
        e = int(np.argmax(inside))
        assert inside[e:].all()


class TestEnvelopes:
    def test_constant_family(self):
        cols = {"step": np.arange(10), "eff_grad_norm": np.full(10, 0.7)}
        b = fit_envelopes(cols, (0, 9), "const")
        assert b.c_lower == pytest.approx(0.7) and b.c_upper == pytest.approx(0.7)

    def test_inverse_family_recovers_member(self):
        t = np.arange(10, 60)
        cols = {"step": t, "eff_grad_norm": 1.0 / (t - 3.0)}
        b = fit_envelopes(cols, (10, 59), "inv")
        assert b.c_lower == pytest.approx(1.0, rel=1e-6) and b.c_upper == pytest.approx(1.0, rel=1e-6)
        assert b.t0 == pytest.approx(3.0, abs=1e-3)

    def test_empty_window(self):
        with pytest.raises(ValueError):
            fit_envelopes({"step": np.arange(5), "eff_grad_norm": np.ones(5)}, (10, 20))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            fit_envelopes({"step": np.arange(5), "eff_grad_norm": np.ones(5)}, (0, 4), "exp")

    @pytest.mark.parametrize("family", ["const", "inv", "inv2", ("inv2", "const")])
    def test_sandwich_on_toy_phase_b(self, periodic, family):
        p = [p for p in segment_phases(periodic, 0.01) if p.complete][100]
        b = fit_envelopes(periodic, p.phases["B"], family)
        g = periodic["eff_grad_norm"][p.phases["B"][0]:p.phases["B"][1] + 1]
        t = np.arange(p.phases["B"][0], p.phases["B"][1] + 1)
        assert np.all(b.lower(t) <= g) and np.all(g <= b.upper(t))
        ov = delta_envelopes(periodic, b)
        assert np.all(ov["delta_min"] <= ov["cos_dist"]) and np.all(ov["cos_dist"] <= ov["delta_max"])

    def test_first_order_forms_are_close(self, periodic):
        p = [p for p in segment_phases(periodic, 0.01) if p.complete][5]
        b = fit_envelopes(periodic, p.phases["B"], "const")
        exact, approx = delta_envelopes(periodic, b), delta_envelopes(periodic, b, exact=False)
        assert np.allclose(exact["delta_max"], approx["delta_max"], rtol=0.05)

    def test_csv_schema(self, periodic):
        p = [p for p in segment_phases(periodic, 0.01) if p.complete][1]
        text = envelopes_csv(delta_envelopes(periodic, fit_envelopes(periodic, p.phases["B"])))
        assert text.splitlines()[0] == "step,cos_dist,delta_min,delta_max"


class TestSegmentation:
    def test_no_weight_decay_has_no_periods(self, toy_module):
        tr = run(toy_module, OptimizerConfig(eta=1.0, lam=0.0, steps=2000), X0)
        segs = segment_phases(tr, 0.01)
        assert len(segs) == 1 and segs[0].label == "unlabeled"

    def test_periodic_run_layout(self, periodic):
        segs = segment_phases(periodic, 0.01)
        assert segs[0].label == "warm-up" and segs[-1].label == "tail"
        complete = [p for p in segs if p.complete]
        assert len(complete) == 722
        for p in complete:
            a, b, c = p.phases["A"], p.phases["B"], p.phases["C"]
            assert a[0] == p.start and c[1] == p.end
            assert a[1] + 1 == b[0] and b[1] + 1 == c[0]
            assert p.jump.step == c[0]

    def test_contiguous_cover(self, periodic):
        segs = segment_phases(periodic, 0.01)
        assert segs[0].start == 0 and segs[-1].end == len(periodic) - 1
        assert all(a.end + 1 == b.start for a, b in zip(segs, segs[1:]))

    def test_loss_leads_norm(self, periodic):
        lags = [p.onset_lag for p in segment_phases(periodic, 0.01) if p.complete]
        assert np.median(lags) > 0

    def test_to_dict(self, periodic):
        d = [p for p in segment_phases(periodic, 0.01) if p.complete][0].to_dict()
        assert set(d["phases"]) == {"A", "B", "C"}


class TestFrequency:
    def test_excludes_short_runs(self, toy_module):
        short = run(toy_module, OptimizerConfig(eta=1.0, lam=0.01, steps=60), X0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = period_frequency_report([short])
        assert rep.rows == [] and rep.excluded
        assert "excluded" in rep.table()

    def test_rescaled_configs_share_period_structure(self, toy_module):
        a = run(toy_module, OptimizerConfig(eta=1.0, lam=0.01, steps=3000), X0)
        b = run(toy_module, OptimizerConfig(eta=4.0, lam=0.0025, steps=3000), 2 * X0)
        assert [e.step for e in detect_jumps(a, 0.01)] == [e.step for e in detect_jumps(b, 0.01)]
