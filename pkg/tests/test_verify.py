import numpy as np
import pytest

from cpialm import verify
from cpialm.verify import CHECKS, CheckResult, Context, box_qp_reference, run_check

# checks whose instances the injection touches, plus the cheap ones that must stay green
INJECTION_CHECKS = (1, 2, 3, 4, 5, 6, 7, 11)


class TestCheckResult:
    def test_line(self):
        line = CheckResult(3, "ellipsoid update law", True, "ok", 0.25, 2).line()
        assert line == "[PASS] criterion  3 ellipsoid update law: ok (0.2s, budget 2s)"

    def test_fail_tag(self):
        assert CheckResult(1, "x", False, "bad", 0.0, 5).line().startswith("[FAIL]")

    def test_twelve_criteria(self):
        assert [c[0] for c in CHECKS] == list(range(1, 13))


class TestContext:
    def test_invalid_level(self):
        with pytest.raises(ValueError):
            Context("medium")

    def test_invalid_injection(self):
        with pytest.raises(ValueError):
            Context("fast", inject="L_doubled")


class TestRunCheck:
    def test_exception_is_failure(self, monkeypatch):
        def boom(ctx):
            raise RuntimeError("broken")

        patched = [(c[0], c[1], c[2], boom if c[0] == 3 else c[3]) for c in CHECKS]
        monkeypatch.setattr(verify, "CHECKS", patched)
        res = run_check(3, Context())
        assert not res.passed
        assert res.detail == "error: RuntimeError: broken"

    def test_suite_reports_each_line(self):
        lines = []
        out = verify.verify_suite("fast", only=[3], report=lines.append)
        assert len(out) == 1 and out[0].passed
        assert lines == [out[0].line()]


class TestBoxReference:
    def test_matches_active_set_solution(self):
        # minimizer of |x - (2, -0.5)|^2 / 2 on [-1, 1]^2
        x, p = box_qp_reference(np.eye(2), -np.array([2.0, -0.5]), -np.ones(2), np.ones(2))
        np.testing.assert_allclose(x, [1.0, -0.5], atol=1e-14)
        assert p == pytest.approx(0.5 - 2.0 + 0.125 - 0.25)

    def test_kkt_on_random_instance(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((20, 20))
        Q = A @ A.T + np.eye(20)
        c = 10 * rng.standard_normal(20)
        lo, hi = -np.ones(20), np.ones(20)
        x, _ = box_qp_reference(Q, c, lo, hi)
        pg = x - np.clip(x - (Q @ x + c), lo, hi)
        assert np.linalg.norm(pg) <= 1e-10


class TestFaultInjection:
    def test_halved_modulus_caught_by_rate_check_only(self):
        ctx = Context("fast", inject="mu_halved")
        results = {cid: run_check(cid, ctx) for cid in INJECTION_CHECKS}
        for r in results.values():
            print(r.line())
        assert not results[1].passed, "rate-bound check did not detect the halved modulus"
        others = [r.line() for cid, r in results.items() if cid != 1 and not r.passed]
        assert not others, others
