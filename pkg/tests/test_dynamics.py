import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sidynamics import dynamics as dyn
from sidynamics.dynamics import (ClosedFormViolation, OptimizerConfig, Trajectory, cosine_distance, git_blob_hash,
                                 load_checkpoint, predicted_cosine, predicted_norm_sq, rescaled_equivalence, run,
                                 save_checkpoint, sphere_projected_step, step)
from sidynamics.jumps import detect_jumps
from sidynamics.objectives import DomainError, Objective, ToyRational

X0 = np.array([0.01, 1.0])


class TestClosedForms:
    def test_norm_formula_by_hand(self):
        assert predicted_norm_sq(4.0, 0.1, 0.5, 2.0) == pytest.approx(0.95 ** 2 * 4 + 0.01 * 4 / 4)

    def test_cosine_without_gradient_is_one(self):
        assert predicted_cosine(3.0, 0.1, 0.1, 0.0) == 1.0

    def test_rejects_bad_domain(self):
        with pytest.raises(DomainError):
            predicted_norm_sq(0.0, 0.1, 0.1, 1.0)
        with pytest.raises(DomainError):
            predicted_cosine(1.0, 2.0, 0.5, 1.0)

    @given(st.floats(-10, 10), st.floats(0.1, 10), st.floats(1e-3, 1.0), st.floats(0, 0.4), st.integers(0, 10_000))
    @settings(max_examples=150, deadline=None)
    def test_single_step_matches(self, u, v, eta, el, seed):
        toy = ToyRational()
        x = np.array([u, v])
        lam = el / eta
        ev = toy.evaluate(x)
        y = step(x, OptimizerConfig(eta=eta, lam=lam), ev)
        p = predicted_norm_sq(ev.rho ** 2, eta, lam, ev.eff_grad_norm)
        assert float(y @ y) == pytest.approx(p, rel=1e-12)
        c = predicted_cosine(ev.rho ** 2, eta, lam, ev.eff_grad_norm)
        assert 1 - cosine_distance(x, y) == pytest.approx(c, rel=1e-12)

    def test_cosine_distance_small_angles(self):
        x = np.array([1.0, 0.0])
        for a in (1e-3, 1e-6, 1e-9):
            y = np.array([math.cos(a), math.sin(a)])
            assert cosine_distance(x, y) == pytest.approx(1 - math.cos(a) if a > 1e-4 else a * a / 2, rel=1e-6)


class TestRun:
    def test_trace_columns_and_lengths(self, toy):
        tr = run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=300), X0)
        assert len(tr) == 300 and list(tr.columns) == list(dyn.TRACE_COLUMNS)
        assert np.array_equal(tr["step"], np.arange(300))
        assert np.allclose(tr["eff_lr"], 1.0 / tr.rho_sq)
        assert not tr.truncated

    def test_guard_trips_on_a_mutated_formula(self, toy, monkeypatch):
        monkeypatch.setattr(dyn, "predicted_norm_sq",
                            lambda r, e, l, g: (1 - e * l) ** 2 * r - (e * g) ** 2 / r)
        with pytest.raises(ClosedFormViolation) as info:
            run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=50), X0)
        assert info.value.step == 0 and info.value.quantity == "rho_sq"

    def test_zero_weight_decay_norm_never_decreases(self, toy):
        tr = run(toy, OptimizerConfig(eta=0.5, lam=0.0, steps=500), np.array([0.7, 0.2]))
        assert np.all(np.diff(tr.rho_sq) >= 0)

    def test_record_every(self, toy):
        tr = run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=100, record_every=10), X0)
        assert list(tr["step"]) == list(range(0, 100, 10))

    def test_origin_start_rejected(self, toy):
        with pytest.raises(DomainError):
            run(toy, OptimizerConfig(eta=1.0, steps=5), np.zeros(2))

    def test_divergence_truncates(self):
        class Blowup(Objective):
            name, dim = "blowup", 2

            def value_and_grad(self, x, batch=None):
                if np.linalg.norm(x) > 1e6:
                    return float("nan"), np.full(2, np.nan)
                return 0.0, np.array([-x[1], x[0]]) * 1e3

        tr = run(Blowup(), OptimizerConfig(eta=1.0, steps=100), np.array([1.0, 0.0]), check_closed_forms=False)
        assert tr.truncated and tr.divergence["step"] < 100
        assert tr.divergence["last_record"] is not None

    def test_checkpoints_and_observer(self, toy):
        seen = []
        tr = run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=20), X0, checkpoint_steps=(0, 5, 20),
                 observer=lambda t, x: seen.append(t))
        assert sorted(tr.checkpoints) == [0, 5, 20]
        assert np.array_equal(tr.checkpoints[20], tr.final_x)
        assert seen == list(range(21))

    def test_sgd_batches_are_deterministic(self):
        from sidynamics.net import BlobSpec, NetSpec, build, make_dataset
        net = build(NetSpec(hidden=(8,)), make_dataset(BlobSpec(n_train=64, n_test=32), 0), batch_size=16)
        cfg = OptimizerConfig(eta=0.1, lam=0.01, family="sgd", steps=30, batch_size=16, seed=3)
        x0 = net.init_params(0)
        a, b = run(net, cfg, x0), run(net, cfg, x0)
        assert np.array_equal(a["loss"], b["loss"])

    def test_batches_cover_epoch(self):
        gen = dyn._batches(10, 3, np.random.default_rng(0))
        epoch = np.concatenate([next(gen) for _ in range(3)])
        assert len(set(epoch.tolist())) == 9


class TestFamilies:
    def test_momentum_first_step_equals_gd(self):
        x, g = np.array([1.0, 2.0]), np.array([0.5, -0.25])
        cfg = OptimizerConfig(eta=0.1, lam=0.1, family="momentum")
        assert np.allclose(step(x, cfg, g, {}), step(x, OptimizerConfig(eta=0.1, lam=0.1), g))

    def test_momentum_accumulates(self):
        x, g = np.array([1.0, 2.0]), np.array([0.5, -0.25])
        cfg = OptimizerConfig(eta=0.1, lam=0.0, family="momentum", momentum=0.5)
        st_ = {}
        step(x, cfg, g, st_)
        assert np.allclose(step(x, cfg, g, st_), x - 0.1 * 1.5 * g)

    def test_adam_first_step_is_sign_like(self):
        x, g = np.array([1.0, 2.0]), np.array([0.5, -0.25])
        y = step(x, OptimizerConfig(eta=0.01, family="adam"), g, {})
        assert np.allclose(y, x - 0.01 * np.sign(g), atol=1e-7)

    def test_coupled_weight_decay(self):
        x, g = np.array([1.0, 2.0]), np.array([0.5, -0.25])
        y = step(x, OptimizerConfig(eta=0.1, lam=0.2, coupled_wd=True), g)
        assert np.allclose(y, x - 0.1 * (g + 0.2 * x))

    def test_stateful_family_needs_state(self):
        with pytest.raises(ValueError):
            step(np.ones(2), OptimizerConfig(eta=0.1, family="adam"), np.ones(2))

    def test_sphere_keeps_norm(self, toy):
        tr = run(toy, OptimizerConfig(eta=1.0, lam=0.01, family="sphere", steps=500), X0)
        assert np.allclose(tr["rho"], np.linalg.norm(X0), rtol=1e-12)

    def test_projection_removes_jumps(self, toy):
        free = run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=20000), X0)
        fixed = run(toy, OptimizerConfig(eta=1.0, lam=0.01, family="sphere", steps=20000), X0)
        assert len([e for e in detect_jumps(free, 0.01) if e.step >= 2000]) >= 1
        assert [e for e in detect_jumps(fixed, 0.01) if e.step >= 2000] == []

    def test_sphere_target_norm(self):
        y = sphere_projected_step(np.array([3.0, 4.0]), OptimizerConfig(eta=0.1), np.array([0.4, -0.3]), 2.0)
        assert np.linalg.norm(y) == pytest.approx(2.0)

    def test_adam_deviates_from_norm_recursion(self, toy):
        tr = run(toy, OptimizerConfig(eta=0.05, lam=0.01, family="adam", steps=50), np.array([0.6, 0.8]))
        pred = [predicted_norm_sq(r, 0.05, 0.01, g) for r, g in zip(tr.rho_sq[:-1], tr["eff_grad_norm"][:-1])]
        assert np.max(np.abs(np.array(pred) - tr.rho_sq[1:]) / tr.rho_sq[1:]) > 1e-6

    def test_config_validation(self):
        for bad in (dict(eta=0.0), dict(eta=1.0, lam=-1.0), dict(eta=1.0, family="rmsprop"),
                    dict(eta=1.0, momentum=1.0), dict(eta=1.0, record_every=0)):
            with pytest.raises(ValueError):
                OptimizerConfig(**bad)

    def test_config_round_trip(self):
        cfg = OptimizerConfig(eta=0.3, lam=0.01, family="adam", betas=(0.8, 0.99))
        assert OptimizerConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestArtifacts:
    def test_csv_round_trip_is_exact(self, toy, tmp_path):
        tr = run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=200), X0)
        tr.to_csv(tmp_path / "t.csv")
        back = Trajectory.read_csv(tmp_path / "t.csv")
        for k in dyn.TRACE_COLUMNS:
            assert np.array_equal(back[k], tr[k], equal_nan=True)

    def test_manifest_hash(self, toy):
        tr = run(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=20), X0)
        assert tr.manifest()["trace_hash"] == git_blob_hash(tr.to_csv().encode())

    def test_git_blob_hash_known_value(self):
        # `printf 'hello\n' | git hash-object --stdin`
        assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"

    def test_checkpoint_round_trip(self, tmp_path):
        x = np.random.default_rng(0).standard_normal(7)
        save_checkpoint(tmp_path / "c.json", 12, x, note="a")
        t, y, extra = load_checkpoint(tmp_path / "c.json")
        assert t == 12 and np.array_equal(x, y) and extra["note"] == "a"


class TestRescaling:
    @pytest.mark.parametrize("c", [0.5, 2.0, 10.0, 3.7])
    def test_toy(self, toy, c):
        res = rescaled_equivalence(toy, OptimizerConfig(eta=1.0, lam=0.01, steps=500), X0, c)
        assert res.agrees(1e-10)

    def test_unsupported_family(self, toy):
        with pytest.raises(ValueError):
            rescaled_equivalence(toy, OptimizerConfig(eta=1.0, family="adam"), X0, 2.0)
