import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpialm.apg import ApgConfig
from cpialm.dualcut import (EXHAUSTED, FOUND, INTERVAL, CutRecord, EllipsoidState,
                            SaddleSubproblem, bisec, bisection_budget, ellipsoid_iteration_bound,
                            ellipsoid_search, ellipsoid_update, eta_plus, logdet_decrement,
                            phi_value, saddle_value, solve_inner, stem, stem_calls_bound,
                            write_cut_trace, intv_search)
from cpialm.problem import eval_aug_lagrangian, positive_part
from cpialm.qcqp import GeneratorConfig, QcqpInstance, generate, load, reference_solve, to_problem

from conftest import FIXTURES, finite_diff_grad

APG = ApgConfig()


@pytest.fixture(scope="module")
def toy1d():
    return to_problem(load(FIXTURES / "toy1d.qcqp"))


def inactive_toy2d():
    """f = |x|^2/2 - x1 - x2 on [-10, 10]^2 with g = x - 2, inactive at the minimizer (1, 1)."""
    n = 2
    inst = QcqpInstance(np.eye(n), -np.ones(n), np.zeros((2, n, n)), np.eye(n),
                        np.array([-2.0, -2.0]), -10 * np.ones(n), 10 * np.ones(n))
    return to_problem(inst)


def tiny(seed, n=3, m=2):
    inst = generate(GeneratorConfig(n=n, m=m, seed=seed, rank=1, spectrum=(1.0, 10.0)))
    return inst, to_problem(inst)


def certificate(sub, y):
    x = solve_inner(sub, y, 1e-12, APG).x_hat
    return float(np.linalg.norm(positive_part(sub.theta(x)) - y))


class TestSaddleSubproblem:
    def test_phi_toy(self, toy1d):
        sub = SaddleSubproblem(toy1d, 1.0, np.zeros(1))
        assert phi_value(sub, np.array([0.75])) == pytest.approx(-0.4375, abs=1e-15)

    def test_phi_feasible_is_objective(self, toy1d):
        sub = SaddleSubproblem(toy1d, 3.0, np.zeros(1))
        x = np.array([0.2])
        assert phi_value(sub, x) == pytest.approx(toy1d.oracles.F(x))

    @settings(max_examples=30)
    @given(x=st.floats(-10, 10), z=st.floats(0, 5), beta=st.floats(0.1, 50))
    def test_phi_minus_aug_lagrangian(self, toy1d, x, z, beta):
        sub = SaddleSubproblem(toy1d, beta, np.array([z]))
        xv = np.array([x])
        diff = phi_value(sub, xv) - eval_aug_lagrangian(toy1d.oracles, xv, sub.z, beta)
        assert diff == pytest.approx(z * z / (2 * beta), rel=1e-9, abs=1e-9)

    @settings(max_examples=30)
    @given(x=st.floats(-10, 10), y=st.floats(0, 5))
    def test_saddle_maximized_at_positive_part(self, toy1d, x, y):
        sub = SaddleSubproblem(toy1d, 2.0, np.array([0.3]))
        xv = np.array([x])
        best = positive_part(sub.theta(xv))
        assert saddle_value(sub, xv, np.array([y])) <= saddle_value(sub, xv, best) + 1e-9
        assert saddle_value(sub, xv, best) == pytest.approx(phi_value(sub, xv), abs=1e-9)

    def test_theta_lipschitz(self):
        _, prob = tiny(3)
        sub = SaddleSubproblem(prob, 2.0, np.array([0.1, 0.2]))
        rng = np.random.default_rng(0)
        o = prob.oracles
        for _ in range(50):
            x1, x2 = rng.uniform(o.lower, o.upper, size=(2, prob.n))
            lhs = np.linalg.norm(sub.theta(x1) - sub.theta(x2))
            assert lhs <= prob.constants.B_g * np.linalg.norm(x1 - x2) * (1 + 1e-12)

    @pytest.mark.parametrize("kw", [dict(beta=0.0, z=np.zeros(1)), dict(beta=1.0, z=-np.ones(1)),
                                    dict(beta=1.0, z=np.zeros(2))])
    def test_invalid(self, toy1d, kw):
        with pytest.raises(ValueError):
            SaddleSubproblem(toy1d, **kw)


class TestSolveInner:
    def test_toy(self, toy1d):
        sub = SaddleSubproblem(toy1d, 1.0, np.zeros(1))
        res = solve_inner(sub, np.array([0.25]), 1e-10, APG)
        assert res.x_hat[0] == pytest.approx(0.75, abs=1e-9)

    def test_zero_multiplier_is_box_minimizer(self):
        prob = inactive_toy2d()
        sub = SaddleSubproblem(prob, 5.0, np.zeros(2))
        res = solve_inner(sub, np.zeros(2), 1e-10, APG)
        np.testing.assert_allclose(res.x_hat, [1.0, 1.0], atol=1e-9)

    def test_psi_gradient_matches_fd(self):
        _, prob = tiny(5)
        sub = SaddleSubproblem(prob, 2.0, np.array([0.3, 0.0]))
        y = np.array([0.4, 0.1])
        psi = sub.psi(y)
        x = solve_inner(sub, y, 1e-8, APG).x_hat
        np.testing.assert_allclose(psi.grad(x), finite_diff_grad(psi.value, x), atol=1e-6)

    def test_no_line_search_uses_global_constant(self, toy1d):
        sub = SaddleSubproblem(toy1d, 1.0, np.zeros(1))
        res = solve_inner(sub, np.array([0.25]), 1e-10, APG.with_(line_search=False))
        assert res.func_evals == 0
        assert res.x_hat[0] == pytest.approx(0.75, abs=1e-9)

    def test_rejects_negative_y(self, toy1d):
        with pytest.raises(ValueError):
            solve_inner(SaddleSubproblem(toy1d, 1.0, np.zeros(1)), -np.ones(1), 1e-6, APG)


class TestIntervalAndBisection:
    def test_inactive_returns_zero(self, toy1d):
        # moving the constraint far out makes it inactive
        inst = load(FIXTURES / "toy1d.qcqp")
        inst = QcqpInstance(inst.Q0, inst.c0, inst.Q, inst.C, np.array([-5.0]), inst.lower,
                            inst.upper)
        sub = SaddleSubproblem(to_problem(inst), 1.0, np.zeros(1))
        out = intv_search(sub, 1e-3, APG)
        assert out.flag == FOUND
        assert out.y_hat[0] == 0.0
        assert out.inner_solves == 1

    def test_large_beta_brackets_limit(self, toy1d):
        beta, delta = 1e6, 1e-3
        sub = SaddleSubproblem(toy1d, beta, np.zeros(1))
        out = intv_search(sub, delta, APG)
        if out.flag == INTERVAL:
            a, b = out.interval
            # the saddle multiplier is z*/beta in y units
            assert a <= 0.5 / beta * (1 + 1e-6) and b >= 0.5 / beta * (1 - 1e-6)
        else:
            assert certificate(sub, out.y_hat) <= delta

    def test_doubling_stops_at_saddle_bound(self, toy1d):
        for beta, z in [(1.0, 0.0), (0.1, 0.0), (1.0, 2.0), (0.01, 0.3)]:
            sub = SaddleSubproblem(toy1d, beta, np.array([z]))
            out = intv_search(sub, 1e-4, APG)
            b = out.interval[1] if out.flag == INTERVAL else out.y_hat[0]
            # the last doubling starts below (2|z*| + |z|) / beta
            assert b <= 2 * max(1.0, 2 * 0.5 + z) / beta

    def test_bisec_toy(self, toy1d):
        delta = 1e-3
        sub = SaddleSubproblem(toy1d, 1.0, np.zeros(1))
        out = bisec(sub, delta, APG)
        assert out.flag == FOUND
        assert abs(out.y_hat[0] - 0.25) <= 2 * delta
        assert certificate(sub, out.y_hat) <= delta

    @pytest.mark.parametrize("beta,z,delta", [(1.0, 0.0, 1e-3), (10.0, 0.1, 1e-6),
                                              (0.5, 1.0, 1e-5), (100.0, 0.0, 1e-8)])
    def test_bisec_certificate_and_halvings(self, toy1d, beta, z, delta):
        sub = SaddleSubproblem(toy1d, beta, np.array([z]))
        out = bisec(sub, delta, APG)
        assert certificate(sub, out.y_hat) <= delta
        iv = intv_search(sub, delta, APG)
        if iv.flag == INTERVAL:
            a, b = iv.interval
            c = toy1d.constants
            assert out.cuts <= bisection_budget(a, b, delta, beta, c.mu, c.B_g)

    def test_singleton_interval_no_halvings(self):
        assert bisection_budget(0.5, 0.5, 1e-3, 1.0, 1.0, 1.0) == 0

    def test_found_certificate_invariant(self):
        for seed in range(5):
            _, prob = tiny(seed, m=1)
            sub = SaddleSubproblem(prob, 1.0, np.zeros(1))
            out = bisec(sub, 1e-4, APG)
            if out.flag == FOUND:
                assert out.certificate <= 0.75 * 1e-4

    def test_requires_single_constraint(self):
        with pytest.raises(ValueError):
            bisec(SaddleSubproblem(inactive_toy2d(), 1.0, np.zeros(2)), 1e-3, APG)


class TestEtaPlus:
    def test_hand_value(self):
        s = (-2 + math.sqrt(4.5)) / 2
        assert eta_plus(1.0, 1.0, 1.0, 1.0, 2.0) == pytest.approx(s * s, rel=1e-12)
        assert eta_plus(1.0, 1.0, 1.0, 1.0, 2.0) == pytest.approx(3.680e-3, rel=1e-3)

    def test_zero_bd_limit(self):
        assert eta_plus(1.0, 2.0, 1.0, 3.0, 0.0) == pytest.approx(1.0 / (4 * 19), rel=1e-12)

    @given(delta=st.floats(1e-10, 10), beta=st.floats(1e-3, 1e4), mu=st.floats(1e-3, 10),
           B_g=st.floats(0, 100), B_d=st.floats(0, 1e4))
    def test_root_residual(self, delta, beta, mu, B_g, B_d):
        eta = eta_plus(delta, beta, mu, B_g, B_d)
        lhs = (mu + beta * B_g ** 2) / mu * (eta + math.sqrt(2 * eta * B_d / beta))
        assert eta > 0
        assert lhs == pytest.approx(delta / 4, rel=1e-10)

    def test_monotone_in_delta(self):
        for delta in np.geomspace(1e-8, 1.0, 20):
            assert eta_plus(2 * delta, 3.0, 0.5, 2.0, 7.0) > eta_plus(delta, 3.0, 0.5, 2.0, 7.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            eta_plus(0.0, 1.0, 1.0, 1.0, 1.0)


class TestEllipsoidUpdate:
    def test_hand_update(self):
        b = 2.0
        st0 = EllipsoidState.ball(2, b)
        s1 = ellipsoid_update(st0, np.array([-1.0, 0.0]))
        np.testing.assert_allclose(s1.center, [b / 3, 0.0], atol=1e-15)
        np.testing.assert_allclose(s1.shape, np.diag([4 / 9 * b * b, 4 / 3 * b * b]), atol=1e-14)

    def test_volume_ratio_m2(self):
        assert math.exp(0.5 * logdet_decrement(2)) == pytest.approx(4 / (3 * math.sqrt(3)))
        assert math.exp(0.5 * logdet_decrement(2)) <= math.exp(-1 / 6)

    def test_matches_explicit_formula(self):
        rng = np.random.default_rng(0)
        m = 4
        st_ = EllipsoidState.ball(m, 1.5)
        for _ in range(10):
            a = rng.standard_normal(m)
            B, y = st_.shape, st_.center
            Ba = B @ a
            aBa = a @ Ba
            B_new = m * m / (m * m - 1.0) * (B - 2.0 / ((m + 1) * aBa) * np.outer(Ba, Ba))
            y_new = y - Ba / ((m + 1) * math.sqrt(aBa))
            st_ = ellipsoid_update(st_, a)
            np.testing.assert_allclose(st_.shape, B_new, rtol=1e-10, atol=1e-14)
            np.testing.assert_allclose(st_.center, y_new, rtol=1e-10, atol=1e-14)

    @settings(max_examples=20)
    @given(m=st.integers(2, 10), seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3))
    def test_scale_invariant(self, m, seed, c):
        a = np.random.default_rng(seed).standard_normal(m)
        st0 = EllipsoidState.ball(m, 1.0)
        u, v = ellipsoid_update(st0, a), ellipsoid_update(st0, c * a)
        np.testing.assert_allclose(u.center, v.center, atol=1e-14)
        np.testing.assert_allclose(u.shape, v.shape, atol=1e-14)

    @settings(max_examples=10, deadline=None)
    @given(m=st.sampled_from([2, 3, 5, 10]), seed=st.integers(0, 10_000))
    def test_logdet_law_and_spd(self, m, seed):
        rng = np.random.default_rng(seed)
        s = EllipsoidState.ball(m, 3.0)
        for _ in range(100):
            prev = s.logdet
            s = ellipsoid_update(s, rng.standard_normal(m))
            if s.iter % 50:
                assert s.logdet - prev == pytest.approx(logdet_decrement(m), abs=1e-10)
            np.linalg.cholesky(s.shape)
        sign, ld = np.linalg.slogdet(s.shape)
        assert sign > 0 and ld == pytest.approx(s.logdet, rel=1e-6)

    @pytest.mark.parametrize("m", [2, 3, 5, 10])
    def test_volume_ratio_bound(self, m):
        assert 0.5 * logdet_decrement(m) <= -1.0 / (2 * (m + 1))

    @settings(max_examples=20)
    @given(seed=st.integers(0, 10_000))
    def test_kept_half_contained(self, seed):
        rng = np.random.default_rng(seed)
        m = 3
        s = EllipsoidState.ball(m, 1.0, center=rng.standard_normal(m))
        a = rng.standard_normal(m)
        s1 = ellipsoid_update(s, a)
        for _ in range(200):
            u = rng.standard_normal(m)
            pt = s.center + s.factor @ (u / np.linalg.norm(u) * rng.uniform() ** (1 / m))
            if a @ (pt - s.center) <= 0:
                assert s1.contains(pt, rtol=1e-9)

    def test_rejects_zero_normal_and_m1(self):
        with pytest.raises(ValueError):
            ellipsoid_update(EllipsoidState.ball(2, 1.0), np.zeros(2))
        with pytest.raises(ValueError):
            EllipsoidState.ball(1, 1.0)

    def test_degenerate_factor_is_fatal(self):
        s = EllipsoidState(np.zeros(2), np.zeros((2, 2)), 0.0)
        with pytest.raises(FloatingPointError):
            ellipsoid_update(s, np.array([1.0, 0.0]))

    def test_resolution(self):
        assert EllipsoidState.ball(2, 1.0).resolved()
        tiny_state = EllipsoidState(np.ones(2), 1e-18 * np.eye(2), -80.0)
        assert not tiny_state.resolved()


class TestEllipsoidSearch:
    def test_inactive_found_near_zero(self):
        prob = inactive_toy2d()
        sub = SaddleSubproblem(prob, 1.0, np.zeros(2))
        trace = []
        out = ellipsoid_search(sub, 1e-3, 1.0, APG, trace=trace)
        assert out.flag == FOUND
        assert np.linalg.norm(out.y_hat) <= 1.0
        assert out.cuts <= 20
        assert trace[-1].branch == FOUND

    @pytest.mark.parametrize("seed", range(20))
    def test_iteration_bound_and_certificate(self, seed):
        inst, prob = tiny(seed)
        sub = SaddleSubproblem(prob, 1.0, np.zeros(2))
        c = prob.constants
        delta, b = 1e-3, 4.0 * (1 + np.linalg.norm(reference_solve(inst).z_star))
        out = ellipsoid_search(sub, delta, b, APG)
        B_d = sub.beta * c.G + sub.beta * b
        eta = min(b, eta_plus(delta, sub.beta, c.mu, c.B_g, B_d))
        assert out.cuts <= ellipsoid_iteration_bound(2, b, eta)
        # b exceeds the saddle bound, so the search must certify
        assert out.flag == FOUND
        assert certificate(sub, out.y_hat) <= delta

    def test_trace_file(self, tmp_path):
        recs = [CutRecord(0, "norm", 1.5, -2.0), CutRecord(1, FOUND, 0.5, -3.0)]
        write_cut_trace(recs, tmp_path / "cuts.csv")
        lines = (tmp_path / "cuts.csv").read_text().splitlines()
        assert lines[0] == "iter,branch,y_norm,logdet"
        assert lines[2].startswith("1,found,0.5,")

    def test_small_ball_exhausts(self):
        _, prob = tiny(1)
        sub = SaddleSubproblem(prob, 1.0, np.zeros(2))
        out = ellipsoid_search(sub, 1e-3, 1e-6, APG)
        if out.flag != FOUND:
            assert out.flag == EXHAUSTED

    def test_branches_recorded(self):
        _, prob = tiny(2)
        trace = []
        stem(SaddleSubproblem(prob, 1.0, np.zeros(2)), 1e-3, APG, trace=trace)
        assert {r.branch for r in trace} <= {"nonneg", "norm", "objective", FOUND, "resolution"}
        assert trace[-1].branch == FOUND


class TestStem:
    def test_inactive_single_call(self):
        sub = SaddleSubproblem(inactive_toy2d(), 1.0, np.zeros(2))
        out = stem(sub, 1e-3, APG)
        assert out.flag == FOUND and out.ellipsoid_calls == 1

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("beta,z", [(1.0, (0.0, 0.0)), (0.2, (1.0, 0.5))])
    def test_calls_bound(self, seed, beta, z):
        inst, prob = tiny(seed)
        z = np.array(z)
        sub = SaddleSubproblem(prob, beta, z)
        delta = 1e-3
        out = stem(sub, delta, APG)
        zs = float(np.linalg.norm(reference_solve(inst).z_star))
        assert out.ellipsoid_calls <= stem_calls_bound(zs, float(np.linalg.norm(z)))
        assert certificate(sub, out.y_hat) <= delta

    def test_toy2d_active(self):
        prob = to_problem(load(FIXTURES / "toy2d.qcqp"))
        sub = SaddleSubproblem(prob, 1.0, np.zeros(2))
        out = stem(sub, 1e-4, APG)
        assert out.flag == FOUND
        assert certificate(sub, out.y_hat) <= 1e-4

    def test_calls_bound_formula(self):
        assert stem_calls_bound(0.0, 0.0) == 1
        assert stem_calls_bound(0.5, 0.0) == 1
        assert stem_calls_bound(1.5, 1.0) == 3

    def test_delta_hypothesis(self):
        sub = SaddleSubproblem(inactive_toy2d(), 1.0, np.zeros(2))
        with pytest.raises(ValueError):
            stem(sub, 1e3, APG)

    def test_requires_two_constraints(self, toy1d):
        with pytest.raises(ValueError):
            stem(SaddleSubproblem(toy1d, 1.0, np.zeros(1)), 1e-3, APG)
