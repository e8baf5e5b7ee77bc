import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cpialm.qcqp import GeneratorConfig, build_oracles, generate  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def finite_diff_grad(fun, x, h=1e-6):
    """Central-difference gradient of a scalar function."""
    g = np.empty_like(x, dtype=float)
    for i in range(x.size):
        e = np.zeros_like(x, dtype=float)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def make_qcqp(n, m, seed=0, **kw):
    inst = generate(GeneratorConfig(n=n, m=m, seed=seed, **kw))
    oracles, constants = build_oracles(inst)
    return SimpleNamespace(instance=inst, oracles=oracles, constants=constants, n=n, m=m)


@pytest.fixture
def qcqp_small():
    return make_qcqp(6, 2, seed=11)
