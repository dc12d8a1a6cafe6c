import numpy as np
import pytest

from helpers import identity_filter, natural_image
from revfilt.filters import BlackBoxFilter, FilterSpec
from revfilt.fixed_point import mann_step, picard_step
from revfilt.gradient import (AgdState, SgdrSchedule, agd_step,
                              run_gradient_descent, sgdr_lambda)
from revfilt.methods import BoundProblem, MethodKind


def gauss_problem(tag, seed=0, size=12, lam=1.0):
    g = FilterSpec("gaussian", {"sigma": 1.0}).build()
    truth = natural_image(size, seed=seed)
    b = g.apply(truth)
    return BoundProblem(g, b, MethodKind(tag, lam=lam)), truth


class TestSgdrSchedule:
    def test_endpoints(self):
        s = SgdrSchedule(period_T=5, lambda_min=1.0, lambda_max=2.0)
        assert sgdr_lambda(s) == 2.0
        s.t_cur = 5
        assert sgdr_lambda(s) == 1.0

    def test_midpoint_even_period(self):
        s = SgdrSchedule(period_T=4, lambda_min=0.0, lambda_max=3.0, t_cur=2)
        assert abs(sgdr_lambda(s) - 1.5) < 1e-12

    def test_advance_resets_after_period(self):
        s = SgdrSchedule(period_T=3, lambda_min=0.0, lambda_max=1.0)
        seen = []
        for _ in range(8):
            seen.append(s.t_cur)
            s.advance()
        assert seen == [0, 1, 2, 3, 0, 1, 2, 3]

    def test_lambda_max_at_restart_and_min_just_before(self):
        s = SgdrSchedule(period_T=5, lambda_min=0.3, lambda_max=2.7)
        values = []
        for _ in range(13):
            values.append(sgdr_lambda(s))
            s.advance()
        period = s.period_T + 1
        for k in (0, period, 2 * period):
            assert abs(values[k] - 2.7) < 1e-12
        for k in (period - 1, 2 * period - 1):
            assert abs(values[k] - 0.3) < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            SgdrSchedule(period_T=0)
        with pytest.raises(ValueError):
            SgdrSchedule(lambda_min=2.0, lambda_max=1.0)
        with pytest.raises(ValueError):
            SgdrSchedule(period_T=3, t_cur=4)


class TestAgdState:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            AgdState("sgd")

    def test_bad_beta(self):
        with pytest.raises(ValueError, match="beta"):
            AgdState("mgd", beta=1.0)

    def test_bad_bias_mode(self):
        with pytest.raises(ValueError, match="adam_bias"):
            AgdState("adam", adam_bias="none")

    def test_sgdr_gets_default_schedule(self):
        assert AgdState("sgdr").sgdr is not None


class TestAgdStep:
    @pytest.mark.parametrize("tag", ["T", "TDA", "p"])
    def test_gd_equals_mann_equals_picard_bitwise(self, tag):
        prob_g, _ = gauss_problem(tag, seed=1)
        prob_p = BoundProblem(FilterSpec("gaussian", {"sigma": 1.0}).build(),
                              prob_g.b, MethodKind(tag))
        prob_m = BoundProblem(FilterSpec("gaussian", {"sigma": 1.0}).build(),
                              prob_g.b, MethodKind(tag))
        state = AgdState("gd", lam=1.0)
        x_g = x_p = x_m = prob_g.b
        for _ in range(5):
            x_g = agd_step(state, prob_g, x_g)
            x_p = picard_step(prob_p.fixed_point_map, x_p)
            x_m = mann_step(prob_m.fixed_point_map, x_m, 1.0)
            assert x_g.tobytes() == x_p.tobytes() == x_m.tobytes()

    def test_adam_first_step_closed_form(self):
        # with g = identity and b = x0 + G the surrogate is the constant G;
        # the bias-corrected first step is lam * G / (|G| + eps)
        rng = np.random.default_rng(2)
        x0 = rng.uniform(0, 1, (6, 6))
        G = rng.uniform(0.5, 1.0, (6, 6)) * np.sign(rng.standard_normal((6, 6)))
        prob = BoundProblem(identity_filter(), x0 + G, MethodKind("T"))
        lam = 0.7
        state = AgdState("adam", lam=lam)
        x1 = agd_step(state, prob, x0)
        expected = x0 + lam * G / (np.abs(G) + state.eps)
        assert np.allclose(x1, expected, atol=1e-15)
        magnitude = np.abs(x1 - x0)
        assert np.all(magnitude >= 0.99 * lam)
        assert np.all(magnitude <= lam)

    def test_adam_bias_modes_agree_only_on_first_step(self):
        prob_a, _ = gauss_problem("T", seed=3)
        prob_b = BoundProblem(FilterSpec("gaussian", {"sigma": 1.0}).build(),
                              prob_a.b, MethodKind("T"))
        power = AgdState("adam", lam=0.01)
        printed = AgdState("adam", lam=0.01, adam_bias="printed")
        x_a = agd_step(power, prob_a, prob_a.b)
        x_b = agd_step(printed, prob_b, prob_b.b)
        assert x_a.tobytes() == x_b.tobytes()  # 1 - beta^1 == 1 - beta
        x_a2 = agd_step(power, prob_a, x_a)
        x_b2 = agd_step(printed, prob_b, x_b)
        assert x_a2.tobytes() != x_b2.tobytes()

    def test_mgd_beta_zero_is_gd_bitwise(self):
        prob_m, _ = gauss_problem("T", seed=4)
        prob_g = BoundProblem(FilterSpec("gaussian", {"sigma": 1.0}).build(),
                              prob_m.b, MethodKind("T"))
        mgd = AgdState("mgd", lam=0.8, beta=0.0)
        gd = AgdState("gd", lam=0.8)
        x_m = x_g = prob_m.b
        for _ in range(4):
            x_m = agd_step(mgd, prob_m, x_m)
            x_g = agd_step(gd, prob_g, x_g)
            assert x_m.tobytes() == x_g.tobytes()

    def test_nag_beta_zero_is_gd_bitwise(self):
        prob_n, _ = gauss_problem("T", seed=5)
        prob_g = BoundProblem(FilterSpec("gaussian", {"sigma": 1.0}).build(),
                              prob_n.b, MethodKind("T"))
        nag = AgdState("nag", lam=1.0, beta=0.0)
        gd = AgdState("gd", lam=1.0)
        x_n = x_g = prob_n.b
        for _ in range(4):
            x_n = agd_step(nag, prob_n, x_n)
            x_g = agd_step(gd, prob_g, x_g)
            assert x_n.tobytes() == x_g.tobytes()

    def test_nag_lookahead_matches_manual_computation(self):
        prob, _ = gauss_problem("T", seed=6)
        manual = BoundProblem(FilterSpec("gaussian", {"sigma": 1.0}).build(),
                              prob.b, MethodKind("T"))
        lam, beta = 1.0, 0.9
        state = AgdState("nag", lam=lam, beta=beta)
        x = prob.b
        v = np.zeros_like(x)
        for _ in range(3):
            x_next = agd_step(state, prob, x)
            v = beta * v + lam * manual.grad_surrogate(x + beta * v)
            x = x + v
            assert x_next.tobytes() == x.tobytes()
            x = x_next

    def test_normalizing_rules_keep_nonnegative_accumulators(self):
        for kind in ("rmsprop", "adadelta", "adam"):
            prob, _ = gauss_problem("T", seed=7)
            state = AgdState(kind, lam=0.01)
            x = prob.b
            for _ in range(10):
                x = agd_step(state, prob, x)
            assert np.all(state.second_moment >= 0)
            assert np.all(state.delta_accum >= 0)
            assert np.all(np.isfinite(x))

    def test_adadelta_ignores_lambda(self):
        prob_a, _ = gauss_problem("T", seed=8)
        prob_b = BoundProblem(FilterSpec("gaussian", {"sigma": 1.0}).build(),
                              prob_a.b, MethodKind("T"))
        a = AgdState("adadelta", lam=5.0)
        b = AgdState("adadelta", lam=1.0)
        x_a = agd_step(a, prob_a, prob_a.b)
        x_b = agd_step(b, prob_b, prob_b.b)
        assert x_a.tobytes() == x_b.tobytes()


class TestRunGradientDescent:
    def test_budget_one_exact_recovery_with_identity_filter(self):
        truth = np.random.default_rng(9).uniform(0, 1, (6, 6))
        g = identity_filter()
        b = g.apply(truth)
        prob = BoundProblem(g, b, MethodKind("T"))
        x0 = np.random.default_rng(10).uniform(0, 1, (6, 6))
        outcome = run_gradient_descent(prob, AgdState("gd", lam=1.0), x0=x0,
                                       budget=1, ground_truth=truth,
                                       record_time=False)
        assert np.allclose(outcome.best, truth, atol=1e-12)
        assert outcome.trace.records[-1].psnr_db == 99.0

    def test_sgdr_coefficients_ripple_with_period(self):
        prob, truth = gauss_problem("T", seed=11)
        sched = SgdrSchedule(period_T=5, lambda_min=1.0, lambda_max=2.0)
        outcome = run_gradient_descent(prob, AgdState("sgdr", sgdr=sched),
                                       budget=14, ground_truth=truth,
                                       record_time=False)
        coeffs = [r.coeff for r in outcome.trace.records][1:]
        assert coeffs[0] == 2.0
        assert abs(coeffs[5] - 1.0) < 1e-12
        for k in range(len(coeffs) - 6):
            assert coeffs[k] == coeffs[k + 6]

    def test_divergent_run_flagged(self):
        # amplifying "filter": residual iteration error doubles each step
        g = BlackBoxFilter(lambda im: 3.0 * im, "triple")
        truth = np.random.default_rng(12).uniform(0.2, 0.8, (6, 6))
        b = g.apply(truth)
        g.call_count = 0
        prob = BoundProblem(g, b, MethodKind("T"))
        outcome = run_gradient_descent(prob, AgdState("gd", lam=1.0),
                                       budget=40, ground_truth=truth,
                                       record_time=False)
        assert outcome.trace.diverged

    def test_surrogate_call_cost_matches_method(self):
        for tag, per_iter in (("T", 1), ("TDA", 2), ("P", 3), ("p", 3)):
            prob, truth = gauss_problem(tag, seed=13)
            outcome = run_gradient_descent(prob, AgdState("nag"), budget=6,
                                           ground_truth=truth, record_time=False)
            assert outcome.trace.records[-1].filter_calls == 6 * per_iter
