import numpy as np
import pytest

from helpers import identity_filter, scaling_filter, square_filter
from revfilt.filters import BlackBoxFilter, FilterSpec, gaussian_filter
from revfilt.methods import DEGENERATE_STEP_FLAG, BoundProblem, MethodKind


def gauss_problem(tag, seed=0, size=16, lam=1.0, alpha=0.99):
    g = FilterSpec("gaussian", {"sigma": 1.0}).build()
    rng = np.random.default_rng(seed)
    x_true = rng.uniform(0, 1, (size, size))
    b = g.apply(x_true)
    g.call_count = 0
    return BoundProblem(g, b, MethodKind(tag, lam=lam, alpha=alpha)), x_true


def random_state(prob, seed):
    return np.random.default_rng(seed).uniform(0, 1, prob.b.shape)


class TestMethodKind:
    def test_bad_tag(self):
        with pytest.raises(ValueError, match="unknown method"):
            MethodKind("Q")

    def test_bad_alpha(self):
        with pytest.raises(ValueError, match="alpha"):
            MethodKind("R", alpha=1.5)

    def test_call_costs(self):
        assert [MethodKind(t).calls_per_eval for t in ("T", "R", "TDA", "P", "p")] \
            == [1, 1, 2, 3, 3]


class TestResidual:
    def test_zero_at_fixed_point(self):
        prob, x_true = gauss_problem("T")
        assert np.array_equal(prob.residual(x_true), np.zeros_like(x_true))

    def test_identity_filter_at_observation(self):
        g = identity_filter()
        b = np.random.default_rng(1).uniform(0, 1, (5, 5))
        prob = BoundProblem(g, b, MethodKind("T"))
        assert np.array_equal(prob.residual(b), np.zeros_like(b))

    def test_scaling_filter_value(self):
        prob = BoundProblem(scaling_filter(0.5), np.array([[1.0]]), MethodKind("T"))
        assert prob.residual(np.array([[1.0]])).tolist() == [[0.5]]

    def test_cache_keyed_on_identity(self):
        prob, _ = gauss_problem("T", seed=2)
        x = random_state(prob, 3)
        prob.residual(x)
        prob.residual(x)
        assert prob.g.call_count == 1
        prob.residual(x.copy())  # equal values, new object: fresh evaluation
        assert prob.g.call_count == 2

    def test_shape_mismatch(self):
        prob, _ = gauss_problem("T")
        with pytest.raises(ValueError, match="shape"):
            prob.residual(np.zeros((3, 3)))


class TestProbeSteps:
    def test_scalar_hand_values(self):
        # g(x) = x^2 on one pixel, b = 1.25, x = 1: e = 0.25,
        # p = g(1.25) - g(0.75) = 1.5625 - 0.5625, t = g(1.25) - g(1)
        prob = BoundProblem(square_filter(), np.array([[1.25]]), MethodKind("p"))
        x = np.array([[1.0]])
        assert np.allclose(prob.step_p(x), 1.0, atol=1e-15)
        prob2 = BoundProblem(square_filter(), np.array([[1.25]]), MethodKind("TDA"))
        assert np.allclose(prob2.step_t(x), 0.5625, atol=1e-15)

    def test_call_costs(self):
        prob, _ = gauss_problem("p", seed=4)
        prob.step_p(random_state(prob, 5))
        assert prob.g.call_count == 3
        prob2, _ = gauss_problem("TDA", seed=4)
        prob2.step_t(random_state(prob2, 5))
        assert prob2.g.call_count == 2

    def test_zero_at_fixed_point(self):
        prob, x_true = gauss_problem("p")
        assert np.array_equal(prob.step_p(x_true), np.zeros_like(x_true))
        prob2, x_true2 = gauss_problem("TDA")
        assert np.array_equal(prob2.step_t(x_true2), np.zeros_like(x_true2))

    def test_linear_filter_identities(self):
        # replicate-padded convolution is a linear operator A, so
        # p = 2 A e = 2 t and t = A e
        prob, _ = gauss_problem("p", seed=6)
        x = random_state(prob, 7)
        e = prob.residual(x)
        p = prob.step_p(x)
        t = prob.step_t(x)
        assert np.allclose(p, 2.0 * t, atol=1e-10)
        assert np.allclose(t, gaussian_filter(e, 1.0), atol=1e-10)


class TestFixedPointMap:
    @pytest.mark.parametrize("tag", ["T", "R", "TDA", "P", "p"])
    def test_fixed_point_invariant_bitwise(self, tag):
        prob, x_true = gauss_problem(tag, alpha=1.0)
        out = prob.fixed_point_map(x_true)
        assert out.tobytes() == x_true.tobytes()

    def test_t_with_identity_filter_solves_in_one_step(self):
        g = identity_filter()
        b = np.random.default_rng(8).uniform(0, 1, (6, 6))
        prob = BoundProblem(g, b, MethodKind("T", lam=1.0))
        x = np.random.default_rng(9).uniform(0, 1, (6, 6))
        assert np.allclose(prob.fixed_point_map(x), b, atol=1e-12)

    def test_lambda_scales_step(self):
        prob, _ = gauss_problem("T", seed=10, lam=0.5)
        x = random_state(prob, 11)
        e = prob.residual(x)
        assert np.array_equal(prob.fixed_point_map(x), x + 0.5 * e)

    def test_r_method_formula(self):
        prob, _ = gauss_problem("R", seed=12, lam=0.9, alpha=0.7)
        x = random_state(prob, 13)
        e = prob.residual(x)
        assert np.array_equal(prob.fixed_point_map(x), 0.7 * x + 0.9 * e)

    def test_p_and_P_steps_parallel(self):
        for seed in range(5):
            prob_small, _ = gauss_problem("p", seed=14 + seed)
            prob_big = BoundProblem(prob_small.g, prob_small.b, MethodKind("P"))
            x = random_state(prob_small, 20 + seed)
            d_small = (prob_small.fixed_point_map(x) - x).ravel()
            d_big = (prob_big.fixed_point_map(x) - x).ravel()
            cos = d_small @ d_big / (np.linalg.norm(d_small) * np.linalg.norm(d_big))
            assert 1.0 - cos < 1e-10

    def test_degenerate_p_step_returns_x_and_flags(self):
        # constant-output filter: e is nonzero but p = g(x+e) - g(x-e) = 0
        g = BlackBoxFilter(lambda im: np.full_like(im, 0.5), "const")
        b = np.ones((4, 4))
        prob = BoundProblem(g, b, MethodKind("P"))
        prob.begin_step()
        x = np.random.default_rng(15).uniform(0, 1, (4, 4))
        out = prob.fixed_point_map(x)
        assert out is x
        assert DEGENERATE_STEP_FLAG in prob.step_flags


class TestGradSurrogate:
    @pytest.mark.parametrize("tag", ["T", "R", "TDA", "P", "p"])
    def test_zero_at_fixed_point(self, tag):
        prob, x_true = gauss_problem(tag)
        assert not np.any(prob.grad_surrogate(x_true))

    def test_tda_surrogate_equals_map_step_at_unit_lambda(self):
        prob, _ = gauss_problem("TDA", seed=16)
        x = random_state(prob, 17)
        d = prob.grad_surrogate(x)
        assert np.max(np.abs(d - (prob.fixed_point_map(x) - x))) <= 1e-12

    def test_t_vs_tda_differ_by_filter_application(self):
        prob_t, _ = gauss_problem("T", seed=18)
        prob_tda = BoundProblem(prob_t.g, prob_t.b, MethodKind("TDA"))
        x = random_state(prob_t, 19)
        d_t = prob_t.grad_surrogate(x)
        d_tda = prob_tda.grad_surrogate(x)
        assert np.allclose(d_tda, gaussian_filter(d_t, 1.0), atol=1e-10)

    def test_p_and_P_share_surrogate(self):
        prob_p, _ = gauss_problem("p", seed=20)
        prob_P = BoundProblem(prob_p.g, prob_p.b, MethodKind("P"))
        x = random_state(prob_p, 21)
        assert np.array_equal(prob_p.grad_surrogate(x), prob_P.grad_surrogate(x))


class TestConsistency:
    @pytest.mark.parametrize("tag,alpha", [("T", 0.99), ("R", 1.0),
                                           ("TDA", 0.99), ("p", 0.99)])
    def test_exact_identity_methods(self, tag, alpha):
        for seed in range(20):
            prob, _ = gauss_problem(tag, seed=seed, lam=1.0, alpha=alpha)
            x = random_state(prob, 100 + seed)
            assert prob.consistency_check(x) <= 1e-12

    def test_p_method_direction_only(self):
        for seed in range(20):
            prob, _ = gauss_problem("P", seed=seed)
            x = random_state(prob, 200 + seed)
            assert prob.consistency_check(x) <= 1e-10


class TestCallAccounting:
    @pytest.mark.parametrize("tag,expected", [("T", 1), ("R", 1), ("TDA", 2),
                                              ("P", 3), ("p", 3)])
    def test_fixed_point_map_costs(self, tag, expected):
        prob, _ = gauss_problem(tag)
        prob.fixed_point_map(random_state(prob, 22))
        assert prob.g.call_count == expected
        prob.fixed_point_map(random_state(prob, 23))
        assert prob.g.call_count == 2 * expected

    @pytest.mark.parametrize("tag,expected", [("T", 1), ("R", 1), ("TDA", 2),
                                              ("P", 3), ("p", 3)])
    def test_surrogate_costs(self, tag, expected):
        prob, _ = gauss_problem(tag)
        prob.grad_surrogate(random_state(prob, 24))
        assert prob.g.call_count == expected

    @pytest.mark.parametrize("tag,expected", [("T", 1), ("TDA", 2), ("P", 3), ("p", 3)])
    def test_shared_cache_spares_double_evaluation(self, tag, expected):
        prob, _ = gauss_problem(tag)
        x = random_state(prob, 25)
        prob.fixed_point_map(x)
        prob.grad_surrogate(x)
        assert prob.g.call_count == expected
