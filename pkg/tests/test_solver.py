import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intervalforge.data import Dataset, NoiseProfile, synth_heteroskedastic
from intervalforge.losses import eps_insensitive
from intervalforge.oracle import reference_solve
from intervalforge.solver import (
    ConvexProgram,
    SolveStats,
    TrainConfig,
    assemble_budget_program,
    assemble_fixed_error_program,
    assemble_fixed_width_program,
    assemble_pinball_program,
    solve,
    solve_program,
    surrogate_objective,
    train_budget,
    train_fixed_error,
)

LP = dict(lambda_w=0.0, lambda_v=0.0)


def small_instance(seed, m=6):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=m)
    y = 1.5 * x + rng.normal(size=m) * (0.3 + np.abs(x))
    return Dataset(x.reshape(-1, 1), y)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kw", [dict(budget=-1), dict(lambda_w=-1), dict(tol_opt=0), dict(tol_feas=-1), dict(max_iters=0)]
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_with_budget(self):
        assert TrainConfig(budget=1.0).with_budget(3).budget == 3.0


class TestAssembly:
    def test_counts(self):
        train = small_instance(0, m=4)
        p = assemble_budget_program(train, TrainConfig())
        assert p.n_vars == 2 * 1 + 2 + 4
        # three slack rows per example, the budget row, then the width rows
        assert p.n_constraints == 4 * 3 + 1 + 4
        assert {k: s.stop - s.start for k, s in p.rows.items()} == {
            "loss_upper": 4,
            "loss_lower": 4,
            "slack_nonneg": 4,
            "width_nonneg": 4,
            "budget": 1,
        }

    def test_lp_when_unregularized(self):
        p = assemble_budget_program(small_instance(0), TrainConfig(**LP))
        assert p.P.nnz == 0

    def test_regularizer_excludes_biases(self):
        p = assemble_budget_program(small_instance(0), TrainConfig(lambda_w=0.3, lambda_v=0.7))
        diag = p.P.diagonal()
        assert diag[p.layout["w"]].tolist() == [0.6]
        assert diag[p.layout["v"]].tolist() == [1.4]
        assert diag[p.layout["b"]][0] == diag[p.layout["a"]][0] == 0.0

    def test_merged_layout(self):
        p = assemble_budget_program(small_instance(0, m=5), TrainConfig(merged_constraint=True))
        assert "t" in p.layout and p.n_vars == 4 + 5 + 5

    def test_inconsistent_dimensions(self):
        p = assemble_budget_program(small_instance(0), TrainConfig())
        with pytest.raises(ValueError):
            ConvexProgram(p.kind, p.P, p.q[:-1], p.G, p.h, p.layout, p.rows, p.params, p.train)

    def test_text_dump(self):
        p = assemble_budget_program(small_instance(0, m=4), TrainConfig())
        text = p.to_text().splitlines()
        assert text[2] == "variables 8" and text[3] == "constraints 17"
        assert f"G {p.G.nnz}" in text
        h_at = text.index(f"h {p.h.size}")
        np.testing.assert_array_equal([float(v) for v in text[h_at + 1 :]], p.h)

    def test_feasible_point_of_construction(self):
        # w = v = 0, b = mean(y), a = 0 with matching slacks is always feasible
        train = small_instance(3)
        p = assemble_budget_program(train, TrainConfig(budget=0.0))
        z = np.zeros(p.n_vars)
        z[p.layout["b"]] = train.labels.mean()
        z[p.layout["xi"]] = np.abs(train.labels - train.labels.mean())
        assert p.violation(z) == 0.0


class TestSolve:
    def test_constant_labels(self):
        train = Dataset(np.random.default_rng(0).normal(size=(7, 2)), np.full(7, 3.0))
        model, stats = train_budget(train, TrainConfig(budget=0.0, **LP))
        assert stats.converged
        np.testing.assert_allclose(model.w, 0, atol=1e-7)
        np.testing.assert_allclose(model.v, 0, atol=1e-7)
        assert model.b == pytest.approx(3.0, abs=1e-7)
        assert model.a == pytest.approx(0.0, abs=1e-7)
        assert stats.objective == pytest.approx(0.0, abs=1e-7)

    def test_zero_budget_is_absolute_regression(self):
        train = small_instance(1, m=10)
        cfg = TrainConfig(budget=0.0, **LP)
        model, stats = solve(assemble_budget_program(train, cfg), cfg)
        _, width = model.center_width(train.features)
        np.testing.assert_allclose(width, 0, atol=1e-7)
        _, lad = solve(assemble_fixed_width_program(train, 0.0, 0.0), cfg)
        assert stats.objective == pytest.approx(lad.objective, abs=1e-7)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_reference(self, seed):
        train = small_instance(seed)
        cfg = TrainConfig(budget=0.8, lambda_w=1e-2, lambda_v=1e-2)
        program = assemble_budget_program(train, cfg)
        _, stats = solve(program, cfg)
        assert stats.objective == pytest.approx(reference_solve(program), abs=1e-4)

    def test_four_point_reference(self):
        train = small_instance(11, m=4)
        cfg = TrainConfig(budget=0.5, **LP)
        program = assemble_budget_program(train, cfg)
        _, stats = solve(program, cfg)
        assert stats.objective == pytest.approx(reference_solve(program), abs=1e-4)

    def test_constraints_and_exact_slacks(self):
        train = synth_heteroskedastic(80, 3, NoiseProfile(1.0, (0.5,), absolute=True), seed=2)
        cfg = TrainConfig(budget=2.0)
        program = assemble_budget_program(train, cfg)
        z, stats = solve_program(program, cfg)
        assert stats.converged and stats.primal_residual <= cfg.tol_feas * (1 + np.abs(program.h).max())
        model, _ = solve(program, cfg)
        center, width = model.center_width(train.features)
        exact = eps_insensitive(train.labels, center, np.maximum(width, 0) / 2)
        np.testing.assert_allclose(z[program.layout["xi"]], exact, atol=1e-12)
        assert surrogate_objective(model, train, cfg) == pytest.approx(stats.objective, abs=1e-9)

    def test_deterministic(self):
        train = synth_heteroskedastic(60, 2, seed=4)
        cfg = TrainConfig(budget=1.5)
        a, sa = train_budget(train, cfg)
        b, sb = train_budget(train, cfg)
        assert a.w.tobytes() == b.w.tobytes() and a.v.tobytes() == b.v.tobytes()
        assert (a.a, a.b, sa.objective) == (b.a, b.b, sb.objective)

    def test_replication_invariance(self):
        train = small_instance(5, m=9)
        doubled = Dataset(np.vstack([train.features] * 2), np.r_[train.labels, train.labels])
        cfg = TrainConfig(budget=1.0, lambda_w=0.05, lambda_v=0.05)
        a, sa = train_budget(train, cfg)
        b, sb = train_budget(doubled, cfg)
        assert sa.objective == pytest.approx(sb.objective, abs=1e-7)
        np.testing.assert_allclose([*a.w, a.b, *a.v, a.a], [*b.w, b.b, *b.v, b.a], atol=1e-5)

    def test_scale_equivariance(self):
        # with lambda = 0 the optimum may not be unique, so compare objectives
        # (which scale by c) and check the scaled model is optimal for the scaled problem
        train = small_instance(6, m=12)
        c = 3.5
        cfg = TrainConfig(budget=0.7, **LP)
        model, stats = train_budget(train, cfg)
        scaled = train.with_labels(c * train.labels)
        cfg_c = cfg.with_budget(c * cfg.budget)
        model_c, stats_c = train_budget(scaled, cfg_c)
        assert stats_c.objective == pytest.approx(c * stats.objective, abs=1e-7)
        assert surrogate_objective(model.scaled(c), scaled, cfg_c) == pytest.approx(stats_c.objective, abs=1e-7)

    def test_merged_form_is_a_relaxation(self):
        train = small_instance(8, m=10)
        a = train_budget(train, TrainConfig(budget=1.0, **LP))[1].objective
        b = train_budget(train, TrainConfig(budget=1.0, merged_constraint=True, **LP))[1].objective
        # the merged form relaxes width_nonneg, so it can only do better
        assert b <= a + 1e-8

    def test_non_convergence_flagged(self):
        train = synth_heteroskedastic(200, 3, seed=0)
        model, stats = train_budget(train, TrainConfig(budget=1.0, max_iters=1))
        assert not stats.converged and isinstance(stats, SolveStats)
        assert np.isfinite(model.w).all()

    def test_pinball_rejected_by_solve(self):
        with pytest.raises(ValueError):
            solve(assemble_pinball_program(small_instance(0), 0.5, 0.0))

    def test_stats_record_train_metrics(self):
        train = synth_heteroskedastic(50, 1, seed=1)
        _, stats = train_budget(train, TrainConfig(budget=1.0))
        d = stats.to_dict()
        assert 0 <= d["train_error"] <= 1
        assert d["train_mean_width"] <= 1.0 + 1e-6
        assert d["gap_kind"] in ("absolute", "relative")


class TestProperties:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31))
    def test_budget_monotone(self, seed):
        train = small_instance(seed, m=8)
        cfg = TrainConfig(lambda_w=1e-2, lambda_v=1e-2)
        objs = [train_budget(train, cfg.with_budget(B))[1].objective for B in np.linspace(0, 3, 10)]
        assert all(b <= a + 1e-7 for a, b in zip(objs, objs[1:]))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 2.0))
    def test_svr_is_restricted_intpred(self, seed, B):
        train = small_instance(seed, m=10)
        cfg = TrainConfig(budget=B, lambda_w=1e-3, lambda_v=1e-3)
        _, full = train_budget(train, cfg)
        svr, _ = solve(assemble_fixed_width_program(train, B / 2, 1e-3), cfg)
        assert full.objective <= surrogate_objective(svr, train, cfg) + 1e-7


class TestFixedError:
    def test_loose_target_gives_zero_width(self):
        train = small_instance(2, m=10)
        model, stats = train_fixed_error(train, 100.0, TrainConfig(**LP))
        assert stats.converged and stats.objective == pytest.approx(0.0, abs=1e-7)

    def test_constant_labels(self):
        train = Dataset(np.arange(6.0).reshape(-1, 1), np.full(6, -2.0))
        model, stats = train_fixed_error(train, 0.0, TrainConfig(**LP))
        _, width = model.center_width(train.features)
        np.testing.assert_allclose(width, 0, atol=1e-6)
        center, _ = model.center_width(train.features)
        np.testing.assert_allclose(center, -2.0, atol=1e-6)

    def test_negative_target(self):
        with pytest.raises(ValueError):
            assemble_fixed_error_program(small_instance(0), -0.1, TrainConfig())

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip(self, seed):
        train = small_instance(seed, m=10)
        cfg = TrainConfig(budget=0.6, **LP)
        _, stats = train_budget(train, cfg)
        loss = stats.extra["train_surrogate_loss"]
        assert loss > 1e-6
        model, back = train_fixed_error(train, loss, cfg)
        assert back.objective == pytest.approx(0.6, abs=1e-3)


class TestLearnedWidths:
    def test_width_weight_follows_noise_slope(self):
        profile = NoiseProfile(0.2, (1.0, 0.0), low=0.0, high=1.0)
        train = synth_heteroskedastic(600, 2, profile, seed=5)
        model, stats = train_budget(train, TrainConfig(budget=1.5, lambda_w=1e-3, lambda_v=1e-3))
        assert stats.converged
        assert model.v[0] > 0 and model.v[0] > 5 * abs(model.v[1])

    def test_homoskedastic_widths_near_constant(self):
        train = synth_heteroskedastic(600, 2, NoiseProfile(1.0), seed=6)
        model, _ = train_budget(train, TrainConfig(budget=2.0, lambda_w=1e-2, lambda_v=1e-1))
        _, width = model.center_width(train.features)
        assert width.std() / width.mean() < 0.2
