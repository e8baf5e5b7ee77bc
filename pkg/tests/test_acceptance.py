"""The twelve acceptance criteria, each at its stated tolerance and runtime.

The level defaults to ``fast``; set ``CPIALM_VERIFY_LEVEL=full`` for the
``n = 1000`` benchmark runs.
"""

import os

import pytest

from cpialm.verify import CHECKS, Context, run_check

LEVEL = os.environ.get("CPIALM_VERIFY_LEVEL", "fast")


@pytest.fixture(scope="module")
def ctx():
    # shared so the residual criterion reuses the benchmark runs
    return Context(LEVEL)


@pytest.mark.parametrize("cid", [c[0] for c in CHECKS], ids=[f"criterion{c[0]:02d}" for c in CHECKS])
def test_criterion(ctx, cid, capsys):
    res = run_check(cid, ctx)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.detail
    if res.budget_sec > 0:
        assert res.seconds < res.budget_sec, f"took {res.seconds:.1f}s"
