"""Random convex QCQP instances, their oracles and a reference solver.

An instance is::

    min  1/2 x^T Q0 x + c0^T x
    s.t. 1/2 x^T Qj x + cj^T x + dj <= 0,  j = 1..m,
         l <= x <= u.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import optimize

from .problem import OracleBundle, Problem, ProblemConstants, box_indicator, kkt_residuals

Array = np.ndarray

FORMAT_HEADER = "# cpialm-qcqp v1"


@dataclass(frozen=True, eq=False)
class QcqpInstance:
    """Dense QCQP data.

    ``Q`` stacks the constraint matrices with shape ``(m, n, n)``; ``C`` has
    rows ``c_j`` and ``d`` holds the constants.
    """

    Q0: Array
    c0: Array
    Q: Array
    C: Array
    d: Array
    lower: Array
    upper: Array
    seed: int = 0

    def __post_init__(self):
        n = self.Q0.shape[0]
        if self.Q0.shape != (n, n) or self.c0.shape != (n,):
            raise ValueError("Q0 must be n x n and c0 an n-vector")
        m = self.Q.shape[0]
        if self.Q.shape != (m, n, n) or self.C.shape != (m, n) or self.d.shape != (m,):
            raise ValueError("constraint data has inconsistent shapes")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("box bounds must be n-vectors")
        if np.any(self.lower >= self.upper):
            raise ValueError("box requires lower < upper")
        if not np.array_equal(self.Q0, self.Q0.T):
            raise ValueError("Q0 must be symmetric")
        if m and not np.array_equal(self.Q, np.transpose(self.Q, (0, 2, 1))):
            raise ValueError("constraint matrices must be symmetric")

    @property
    def n(self) -> int:
        return self.Q0.shape[0]

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    def __eq__(self, other):
        if not isinstance(other, QcqpInstance):
            return NotImplemented
        return self.seed == other.seed and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("Q0", "c0", "Q", "C", "d", "lower", "upper"))


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of :func:`generate`.

    ``rank`` is the rank of each ``Q_j`` and defaults to ``n // 2``.
    ``q0_zero_eigs`` zeroes the smallest eigenvalues of ``Q0`` (convex but not
    strongly convex); ``q0_negative_eig`` replaces the smallest eigenvalue by
    a negative value (nonconvex objective). With ``orient_active`` the sign
    of each ``c_j`` is chosen so that the minimizer of ``f`` over the box is
    infeasible for constraint ``j`` whenever a sign flip achieves that,
    which makes constraints active at the solution.
    """

    n: int
    m: int
    seed: int = 0
    rank: Optional[int] = None
    spectrum: Tuple[float, float] = (1.0, 100.0)
    c_scale: float = 1.0
    d_range: Tuple[float, float] = (-1.0, -0.1)
    box: Tuple[float, float] = (-10.0, 10.0)
    q0_zero_eigs: int = 0
    q0_negative_eig: Optional[float] = None
    orient_active: bool = True

    def __post_init__(self):
        if self.n < 2 or self.m < 0:
            raise ValueError("need n >= 2 and m >= 0")
        r = self.resolved_rank
        if not 1 <= r < self.n:
            raise ValueError(f"rank must satisfy 1 <= rank < n, got {r}")
        lo, hi = self.spectrum
        if not 0 < lo <= hi:
            raise ValueError("spectrum must satisfy 0 < lambda_min <= lambda_max")
        a, b = self.d_range
        if not a <= b < 0:
            raise ValueError("d_range must be a negative interval")
        if not self.box[0] < 0 < self.box[1]:
            raise ValueError("box must contain the origin in its interior")
        if not 0 <= self.q0_zero_eigs < self.n:
            raise ValueError("q0_zero_eigs out of range")
        if self.q0_negative_eig is not None and self.q0_negative_eig >= 0:
            raise ValueError("q0_negative_eig must be negative")

    @property
    def resolved_rank(self) -> int:
        return self.n // 2 if self.rank is None else self.rank


def _symmetrize(A: Array) -> Array:
    return 0.5 * (A + A.T)


def generate(cfg: GeneratorConfig) -> QcqpInstance:
    """Draw a seeded random instance."""
    rng = np.random.default_rng(cfg.seed)
    n, m, r = cfg.n, cfg.m, cfg.resolved_rank
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lo, hi = cfg.spectrum
    lam = np.exp(rng.uniform(math.log(lo), math.log(hi), size=n))
    lam[0], lam[-1] = lo, hi
    lam.sort()
    if cfg.q0_zero_eigs:
        lam[:cfg.q0_zero_eigs] = 0.0
    if cfg.q0_negative_eig is not None:
        lam[0] = cfg.q0_negative_eig
    Q0 = _symmetrize((U * lam) @ U.T)
    c0 = rng.standard_normal(n) * cfg.c_scale
    Q = np.empty((m, n, n))
    for j in range(m):
        M = rng.standard_normal((n, r))
        M /= np.linalg.norm(M, 2)
        Q[j] = _symmetrize(M @ M.T)
    C = rng.standard_normal((m, n)) * cfg.c_scale
    d = rng.uniform(cfg.d_range[0], cfg.d_range[1], size=m)
    lower = np.full(n, float(cfg.box[0]))
    upper = np.full(n, float(cfg.box[1]))
    if cfg.orient_active and m:
        x_free = np.clip(np.linalg.lstsq(Q0, -c0, rcond=None)[0], lower, upper)
        flip = C @ x_free < 0
        C[flip] *= -1.0
    return QcqpInstance(Q0, c0, Q, C, d, lower, upper, cfg.seed)


def spectral_bounds(A: Array) -> Tuple[float, float]:
    """Extreme eigenvalues of a symmetric matrix."""
    w = np.linalg.eigvalsh(A)
    return float(w[0]), float(w[-1])


def compute_constants(inst: QcqpInstance, require_strong: bool = True) -> ProblemConstants:
    """Analytic constants of an instance.

    ``mu`` and ``L_f`` are the extreme eigenvalues of ``Q0``; ``B_g`` and
    ``G`` are bounds over the ball of radius ``||max(|l|, |u|)||``, which
    contains the box.
    """
    lmin, lmax = spectral_bounds(inst.Q0)
    if require_strong and lmin <= 0:
        raise ValueError(f"Q0 is not positive definite (lambda_min={lmin:.3e})")
    qn = np.array([np.linalg.norm(Qj, 2) for Qj in inst.Q])
    cn = np.linalg.norm(inst.C, axis=1) if inst.m else np.zeros(0)
    R = float(np.linalg.norm(np.maximum(np.abs(inst.lower), np.abs(inst.upper))))
    return ProblemConstants(
        mu=max(lmin, 0.0),
        L_f=max(lmax, abs(lmin)),
        L_g=float(np.sqrt(np.sum(qn ** 2))),
        D_h=float(np.linalg.norm(inst.upper - inst.lower)),
        B_g=float(np.sqrt(np.sum((qn * R + cn) ** 2))),
        G=float(np.sqrt(np.sum((0.5 * qn * R ** 2 + cn * R + np.abs(inst.d)) ** 2))),
    )


def build_oracles(inst: QcqpInstance, require_strong: bool = True):
    """Return ``(OracleBundle, ProblemConstants)`` for ``inst``."""
    Q0, c0, Q, C, d = inst.Q0, inst.c0, inst.Q, inst.C, inst.d
    # one (m*n, n) matrix so that all Q_j x come from a single product
    Qs = Q.reshape(inst.m * inst.n, inst.n)
    m, n = inst.m, inst.n

    def f_value(x):
        return float(0.5 * x @ (Q0 @ x) + c0 @ x)

    def f_grad(x):
        return Q0 @ x + c0

    def g_value(x):
        Qx = (Qs @ x).reshape(m, n)
        return 0.5 * (Qx @ x) + C @ x + d

    def g_jacobian(x):
        return (Qs @ x).reshape(m, n) + C

    h_value, h_prox = box_indicator(inst.lower, inst.upper)
    bundle = OracleBundle(f_value, f_grad, g_value, g_jacobian, h_value, h_prox,
                          inst.lower.copy(), inst.upper.copy())
    return bundle, compute_constants(inst, require_strong)


def to_problem(inst: QcqpInstance, require_strong: bool = True) -> Problem:
    oracles, consts = build_oracles(inst, require_strong)
    return Problem(oracles, consts, inst.n, inst.m)


# ----------------------------------------------------------------------------
# text format

def _fmt(v: float) -> str:
    return repr(float(v))


def _vec(v: Array) -> str:
    return " ".join(_fmt(a) for a in v)


def serialize(inst: QcqpInstance) -> str:
    """Text form of ``inst``; floats use shortest round-trip decimal strings."""
    out = [FORMAT_HEADER, f"n {inst.n}", f"m {inst.m}", f"seed {inst.seed}",
           "[lower]", _vec(inst.lower), "[upper]", _vec(inst.upper), "[Q0]"]
    out += [_vec(row) for row in inst.Q0]
    out += ["[c0]", _vec(inst.c0)]
    for j in range(inst.m):
        out.append(f"[Q{j + 1}]")
        out += [_vec(row) for row in inst.Q[j]]
        out += [f"[c{j + 1}]", _vec(inst.C[j])]
    out += ["[d]", _vec(inst.d)]
    return "\n".join(out) + "\n"


class ParseError(ValueError):
    """Malformed instance text."""


class _Lines:
    def __init__(self, text: str):
        self.items = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
        self.items = [(i, ln) for i, ln in self.items if ln and not ln.startswith("#")]
        self.pos = 0

    def next(self, what: str):
        if self.pos >= len(self.items):
            raise ParseError(f"unexpected end of input: missing {what}")
        item = self.items[self.pos]
        self.pos += 1
        return item

    def keyed(self, key: str) -> int:
        lineno, ln = self.next(f"'{key}' line")
        parts = ln.split()
        if len(parts) != 2 or parts[0] != key:
            raise ParseError(f"line {lineno}: expected '{key} <int>', got {ln!r}")
        try:
            return int(parts[1])
        except ValueError:
            raise ParseError(f"line {lineno}: '{key}' value is not an integer") from None

    def section(self, name: str):
        lineno, ln = self.next(f"section [{name}]")
        if ln != f"[{name}]":
            raise ParseError(f"line {lineno}: expected section [{name}], got {ln!r}")

    def vector(self, name: str, n: int) -> Array:
        lineno, ln = self.next(f"data of section [{name}]")
        try:
            v = np.array([float(t) for t in ln.split()])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric entry in section [{name}]") from None
        if v.shape != (n,):
            raise ParseError(f"line {lineno}: section [{name}] expects {n} values, got {v.size}")
        return v


def parse(text: str) -> QcqpInstance:
    """Inverse of :func:`serialize`."""
    L = _Lines(text)
    n = L.keyed("n")
    m = L.keyed("m")
    seed = L.keyed("seed")
    if n < 1 or m < 0:
        raise ParseError("dimensions must satisfy n >= 1, m >= 0")
    L.section("lower")
    lower = L.vector("lower", n)
    L.section("upper")
    upper = L.vector("upper", n)
    L.section("Q0")
    Q0 = np.array([L.vector("Q0", n) for _ in range(n)])
    L.section("c0")
    c0 = L.vector("c0", n)
    Q = np.empty((m, n, n))
    C = np.empty((m, n))
    for j in range(m):
        L.section(f"Q{j + 1}")
        Q[j] = np.array([L.vector(f"Q{j + 1}", n) for _ in range(n)])
        L.section(f"c{j + 1}")
        C[j] = L.vector(f"c{j + 1}", n)
    L.section("d")
    d = L.vector("d", m) if m else np.zeros(0)
    if m == 0:
        # an empty vector line is skipped by the reader, nothing to consume
        pass
    if L.pos != len(L.items):
        lineno, _ = L.items[L.pos]
        raise ParseError(f"line {lineno}: trailing content after section [d]")
    try:
        return QcqpInstance(Q0, c0, Q, C, d, lower, upper, seed)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load(path) -> QcqpInstance:
    with open(path) as fh:
        return parse(fh.read())


def save(inst: QcqpInstance, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize(inst))


# ----------------------------------------------------------------------------
# reference solver for tiny instances

@dataclass(frozen=True)
class ReferenceSolution:
    x_star: Array
    z_star: Array
    f_star: float
    kkt: float


def _kkt_error(inst, oracles, x, z):
    r = kkt_residuals(oracles, x, z)
    return max(r.pres, r.dres, r.compl)


def _solve_pattern(inst: QcqpInstance, x0: Array, lo_set, up_set, act):
    """Newton iteration on the KKT system of one active pattern.

    Fixed coordinates sit on their bounds; active constraints hold with
    equality. Returns ``(x, z)`` or None when the system is singular.
    """
    n = inst.n
    fixed = np.zeros(n, dtype=bool)
    fixed[list(lo_set)] = True
    fixed[list(up_set)] = True
    free = ~fixed
    x = x0.copy()
    x[list(lo_set)] = inst.lower[list(lo_set)]
    x[list(up_set)] = inst.upper[list(up_set)]
    act = list(act)
    z = np.zeros(len(act))
    nf = int(free.sum())
    for _ in range(60):
        Qa = inst.Q[act]
        grad = inst.Q0 @ x + inst.c0
        J = (Qa @ x) + inst.C[act] if act else np.zeros((0, n))
        gvals = 0.5 * np.einsum("ji,i->j", Qa @ x, x) + inst.C[act] @ x + inst.d[act] \
            if act else np.zeros(0)
        r1 = (grad + J.T @ z)[free]
        H = inst.Q0 + np.einsum("j,jab->ab", z, Qa) if act else inst.Q0
        K = np.zeros((nf + len(act), nf + len(act)))
        K[:nf, :nf] = H[np.ix_(free, free)]
        K[:nf, nf:] = J[:, free].T
        K[nf:, :nf] = J[:, free]
        rhs = -np.concatenate([r1, gvals])
        if np.linalg.norm(rhs) < 1e-15 * (1 + np.linalg.norm(grad)):
            break
        try:
            step = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        x[free] += step[:nf]
        z += step[nf:]
    return x, z


def _multipliers(inst, x, act):
    """Least-squares multipliers of the active constraints on the free coordinates."""
    grad = inst.Q0 @ x + inst.c0
    free = (x > inst.lower + 1e-12) & (x < inst.upper - 1e-12)
    if not act:
        return np.zeros(inst.m)
    J = (inst.Q[act] @ x) + inst.C[act]
    zA, *_ = np.linalg.lstsq(J[:, free].T, -grad[free], rcond=None) if free.any() \
        else (np.zeros(len(act)),)
    z = np.zeros(inst.m)
    z[act] = np.maximum(zA, 0.0)
    return z


def reference_solve(inst: QcqpInstance, tol: float = 1e-10) -> ReferenceSolution:
    """High-accuracy KKT pair of a tiny strongly convex instance.

    A sequential quadratic programming run gives a candidate whose active
    pattern seeds a Newton polish of the KKT system; if the polished point
    fails to certify, every pattern of box faces and active constraints is
    tried.
    """
    if inst.n > 5 or inst.m > 3:
        raise ValueError("reference_solve is meant for n <= 5, m <= 3")
    oracles, consts = build_oracles(inst)
    best = None

    def consider(x, z):
        nonlocal best
        x = np.clip(x, inst.lower, inst.upper)
        err = _kkt_error(inst, oracles, x, z)
        if best is None or err < best[0]:
            best = (err, x, z)

    cons = [{"type": "ineq", "fun": (lambda x, j=j: -oracles.g_value(x)[j]),
             "jac": (lambda x, j=j: -oracles.g_jacobian(x)[j])} for j in range(inst.m)]
    res = optimize.minimize(oracles.f_value, np.zeros(inst.n), jac=oracles.f_grad,
                            bounds=list(zip(inst.lower, inst.upper)), constraints=cons,
                            method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    x0 = np.clip(res.x, inst.lower, inst.upper)
    gx = oracles.g_value(x0)

    def patterns_near(x):
        lo = tuple(np.flatnonzero(x <= inst.lower + 1e-7))
        up = tuple(np.flatnonzero(x >= inst.upper - 1e-7))
        act = tuple(np.flatnonzero(oracles.g_value(x) >= -1e-7))
        return lo, up, act

    def try_pattern(lo, up, act, start):
        out = _solve_pattern(inst, start, lo, up, act)
        if out is None:
            return
        x, zA = out
        if np.any(zA < -1e-9):
            return
        x = np.clip(x, inst.lower, inst.upper)
        z_newton = np.zeros(inst.m)
        z_newton[list(act)] = np.maximum(zA, 0.0)
        consider(x, z_newton)
        consider(x, _multipliers(inst, x, list(act)))

    try_pattern(*patterns_near(x0), x0)
    if best is None or best[0] > tol:
        idx = range(inst.n)
        for act_r in range(inst.m + 1):
            for act in itertools.combinations(range(inst.m), act_r):
                for states in itertools.product((0, 1, 2), repeat=inst.n):
                    lo = tuple(i for i in idx if states[i] == 1)
                    up = tuple(i for i in idx if states[i] == 2)
                    try_pattern(lo, up, act, x0)
                    if best is not None and best[0] <= tol:
                        break
                if best is not None and best[0] <= tol:
                    break
            if best is not None and best[0] <= tol:
                break
    if best is None or best[0] > tol:
        warnings.warn("reference_solve could not certify a KKT point to the requested "
                      f"tolerance (best {best[0] if best else float('nan'):.2e}); "
                      "falling back to the SQP candidate", RuntimeWarning)
        if best is None:
            consider(x0, _multipliers(inst, x0, list(np.flatnonzero(gx >= -1e-7))))
    err, x, z = best
    return ReferenceSolution(x, z, oracles.f_value(x), float(err))
