"""Saddle-point form of the augmented Lagrangian subproblem and its dual searches.

For fixed ``beta`` and ``z`` the subproblem ``min_x L_beta(x, z)`` is
rewritten as ``min_x max_{y >= 0} Phi(x, y)`` with::

    theta(x) = g(x) + z / beta
    Phi(x, y) = F(x) + beta (y^T theta(x) - ||y||^2 / 2)

The dual function ``d(y) = min_x Phi(x, y)`` is ``beta``-strongly concave
with gradient ``beta (theta(x(y)) - y)``. Its maximizer is located by
bisection when ``m = 1`` and by an ellipsoid method otherwise; each query
costs one strongly convex APG solve in ``x``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .apg import ApgConfig, ApgResult, SmoothFunction, apg_solve
from .problem import Problem, positive_part

Array = np.ndarray

FOUND = "found"
INTERVAL = "interval"
EXHAUSTED = "exhausted"

DOUBLING_CAP = 60
LOGDET_REFRESH = 50
RESOLUTION_ULPS = 16


@dataclass(frozen=True)
class SaddleSubproblem:
    """Data of one augmented Lagrangian subproblem in saddle-point form."""

    problem: Problem
    beta: float
    z: Array

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        z = np.asarray(self.z, dtype=float)
        if z.shape != (self.problem.m,) or np.any(z < 0):
            raise ValueError("z must be a nonnegative m-vector")
        object.__setattr__(self, "z", z)

    @property
    def m(self) -> int:
        return self.problem.m

    def theta(self, x: Array) -> Array:
        return self.problem.oracles.g_value(x) + self.z / self.beta

    def psi(self, y: Array) -> SmoothFunction:
        """Smooth part of ``Phi(., y)``."""
        o, beta = self.problem.oracles, self.beta
        y = np.asarray(y, dtype=float)
        shift = float(y @ (self.z / beta) - 0.5 * (y @ y))

        def value(x):
            return o.f_value(x) + beta * (float(y @ o.g_value(x)) + shift)

        def grad(x):
            return o.f_grad(x) + beta * (o.g_jacobian(x).T @ y)

        return SmoothFunction(value, grad)

    def psi_lipschitz(self, y: Array) -> float:
        c = self.problem.constants
        return c.L_f + self.beta * float(np.linalg.norm(y)) * c.L_g

    def grad_d(self, x_of_y: Array, y: Array) -> Array:
        """Dual gradient ``beta (theta(x(y)) - y)`` given the minimizer ``x(y)``."""
        return self.beta * (self.theta(x_of_y) - y)


def phi_value(sub: SaddleSubproblem, x: Array) -> float:
    """``F(x) + beta/2 ||[theta(x)]_+||^2``."""
    o = sub.problem.oracles
    t = positive_part(sub.theta(x))
    return float(o.F(x) + 0.5 * sub.beta * (t @ t))


def saddle_value(sub: SaddleSubproblem, x: Array, y: Array) -> float:
    """``Phi(x, y)``."""
    o = sub.problem.oracles
    y = np.asarray(y, dtype=float)
    return float(o.F(x) + sub.beta * (y @ sub.theta(x) - 0.5 * (y @ y)))


def inner_config(sub: SaddleSubproblem, y: Array, eps_bar: float, apg_cfg: ApgConfig) -> ApgConfig:
    """APG settings for minimizing ``Phi(., y)``.

    Without line search the step constant is the global Lipschitz constant
    ``L_f + beta ||y|| L_g``.
    """
    mu = sub.problem.constants.mu
    if apg_cfg.line_search:
        return apg_cfg.with_(eps_bar=eps_bar, mu_psi=mu)
    L = max(sub.psi_lipschitz(y), mu)
    return apg_cfg.with_(eps_bar=eps_bar, mu_psi=mu, L_min=L)


def solve_inner(sub: SaddleSubproblem, y: Array, eps_bar: float, apg_cfg: ApgConfig,
                x0: Optional[Array] = None) -> ApgResult:
    """Approximately compute ``x(y) = argmin_x Phi(x, y)`` to stationarity ``eps_bar``."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("y must be nonnegative")
    o = sub.problem.oracles
    if x0 is None:
        x0 = np.zeros(sub.problem.n)
        if o.is_box:
            x0 = np.clip(x0, o.lower, o.upper)
    x0 = o.h_prox(np.asarray(x0, dtype=float), 1.0)
    return apg_solve(sub.psi(y), o.h_prox, inner_config(sub, y, eps_bar, apg_cfg), x0)


@dataclass(frozen=True)
class DualSearchResult:
    """Outcome of a dual search.

    ``certificate`` is ``||[theta(x_hat)]_+ - y_hat||``; ``inner`` is the APG
    result of the solve that produced ``x_hat``.
    """

    x_hat: Array
    y_hat: Array
    flag: str
    inner: ApgResult
    certificate: float
    grad_evals: int
    func_evals: int
    inner_solves: int
    interval: Optional[Tuple[float, float]] = None
    cuts: int = 0
    ellipsoid_calls: int = 0
    floor_hits: int = 0


class InnerStarts:
    """Start-point policy for successive inner solves.

    In ``warm`` mode the first solve starts at ``x0`` and later ones at the
    previous solution; in ``random`` mode every solve draws a uniform point
    in the box from ``rng``.
    """

    def __init__(self, problem: Problem, mode: str = "warm", x0: Optional[Array] = None,
                 rng: Optional[np.random.Generator] = None):
        if mode not in ("warm", "random"):
            raise ValueError("mode must be 'warm' or 'random'")
        self.problem = problem
        self.mode = mode
        self.last = None if x0 is None else np.asarray(x0, dtype=float)
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def next(self) -> Optional[Array]:
        if self.mode == "random" and self.problem.oracles.is_box:
            o = self.problem.oracles
            return self.rng.uniform(o.lower, o.upper)
        return self.last

    def record(self, x: Array) -> None:
        self.last = x


class _Tally:
    def __init__(self, sub: SaddleSubproblem, apg_cfg: ApgConfig, starts: Optional[InnerStarts]):
        self.sub = sub
        self.apg_cfg = apg_cfg
        self.starts = starts if starts is not None else InnerStarts(sub.problem)
        self.grad_evals = 0
        self.func_evals = 0
        self.solves = 0
        self.floor_hits = 0

    def solve(self, y: Array, eps_bar: float) -> ApgResult:
        res = solve_inner(self.sub, y, eps_bar, self.apg_cfg, self.starts.next())
        self.starts.record(res.x_hat)
        self.grad_evals += res.grad_evals
        self.func_evals += res.func_evals
        self.solves += 1
        self.floor_hits += int(res.floor_hit)
        return res

    def result(self, res: ApgResult, y: Array, flag: str, **kw) -> DualSearchResult:
        y = np.asarray(y, dtype=float)
        cert = float(np.linalg.norm(positive_part(self.sub.theta(res.x_hat)) - y))
        return DualSearchResult(res.x_hat, y, flag, res, cert, self.grad_evals,
                                self.func_evals, self.solves, floor_hits=self.floor_hits, **kw)


def _check_delta(delta: float) -> None:
    if not delta > 0:
        raise ValueError("delta must be positive")


def _intv(t: _Tally, delta: float, eps_bar: float):
    sub = t.sub
    res = t.solve(np.zeros(1), eps_bar)
    th = sub.theta(res.x_hat)[0]
    if max(th, 0.0) <= 0.75 * delta:
        return res, 0.0, 0.0, True
    a, b = 0.0, 1.0 / sub.beta
    res = t.solve(np.array([b]), eps_bar)
    th = sub.theta(res.x_hat)[0]
    doublings = 0
    while abs(max(th, 0.0) - b) > 0.75 * delta and th - b > 0:
        doublings += 1
        if doublings > DOUBLING_CAP:
            raise RuntimeError("interval search exceeded the doubling cap; "
                               "check the problem constants and constraint qualification")
        a, b = b, 2 * b
        res = t.solve(np.array([b]), eps_bar)
        th = sub.theta(res.x_hat)[0]
    if abs(max(th, 0.0) - b) <= 0.75 * delta:
        return res, b, b, True
    return res, a, b, False


def intv_search(sub: SaddleSubproblem, delta: float, apg_cfg: ApgConfig,
                starts: Optional[InnerStarts] = None) -> DualSearchResult:
    """Find a bracket ``[a, b]`` of the dual maximizer, or a point that already certifies.

    Only for a single constraint. Returns flag ``found`` with ``y_hat`` in
    ``{0, b}`` or flag ``interval`` with the bracket.
    """
    if sub.m != 1:
        raise ValueError("intv_search requires m = 1")
    _check_delta(delta)
    c = sub.problem.constants
    t = _Tally(sub, apg_cfg, starts)
    res, a, b, found = _intv(t, delta, c.mu * delta / (4 * c.B_g))
    if found:
        return t.result(res, np.array([a]), FOUND)
    return t.result(res, np.array([b]), INTERVAL, interval=(a, b))


def bisection_budget(a: float, b: float, delta: float, beta: float, mu: float, B_g: float) -> int:
    """Maximum number of halvings of ``[a, b]``."""
    width = mu * delta / (mu + beta * B_g ** 2)
    if b - a <= width:
        return 0
    return max(0, math.ceil(math.log2((b - a) / width) - 1e-12))


def bisec(sub: SaddleSubproblem, delta: float, apg_cfg: ApgConfig,
          starts: Optional[InnerStarts] = None) -> DualSearchResult:
    """Bisection on the dual of a single-constraint subproblem."""
    if sub.m != 1:
        raise ValueError("bisec requires m = 1")
    _check_delta(delta)
    c = sub.problem.constants
    eps_bar = c.mu * delta / (4 * c.B_g)
    t = _Tally(sub, apg_cfg, starts)
    res, a, b, _ = _intv(t, delta, eps_bar)
    width = c.mu * delta / (c.mu + sub.beta * c.B_g ** 2)
    halvings = 0
    while b - a > width:
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break  # bracket below float resolution
        halvings += 1
        res = t.solve(np.array([mid]), eps_bar)
        th = sub.theta(res.x_hat)[0]
        if abs(max(th, 0.0) - mid) <= 0.75 * delta:
            return t.result(res, np.array([mid]), FOUND, interval=(a, b), cuts=halvings)
        if th - mid > 0:
            a = mid
        else:
            b = mid
    y = np.array([0.5 * (a + b)])
    res = t.solve(y, eps_bar)
    out = t.result(res, y, FOUND, interval=(a, b), cuts=halvings)
    if out.certificate > 0.75 * delta:
        out = t.result(res, y, INTERVAL, interval=(a, b), cuts=halvings)
    return out


def eta_plus(delta: float, beta: float, mu: float, B_g: float, B_d: float) -> float:
    """Positive root ``eta`` of ``((mu + beta B_g^2)/mu) (eta + sqrt(2 eta B_d / beta)) = delta/4``."""
    for name, v in (("delta", delta), ("beta", beta), ("mu", mu)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if B_g < 0 or B_d < 0:
        raise ValueError("B_g and B_d must be nonnegative")
    kappa = mu * delta / (4 * (mu + beta * B_g ** 2))
    c = math.sqrt(2 * B_d / beta)
    # s = sqrt(eta) solves s^2 + c s - kappa = 0; this form avoids cancellation
    s = 2 * kappa / (c + math.sqrt(c * c + 4 * kappa))
    return s * s


@dataclass(frozen=True)
class EllipsoidState:
    """Ellipsoid ``{y : (y - center)^T B^{-1} (y - center) <= 1}`` with ``B = factor factor^T``.

    Keeping the factor instead of ``B`` preserves positive definiteness
    through long runs of cuts, where the explicit rank-one downdate of ``B``
    cancels catastrophically once the ellipsoid is very thin.
    """

    center: Array
    factor: Array
    logdet: float
    iter: int = 0

    @classmethod
    def ball(cls, m: int, radius: float, center: Optional[Array] = None) -> "EllipsoidState":
        if m < 2:
            raise ValueError("the ellipsoid method needs m >= 2")
        c = np.zeros(m) if center is None else np.asarray(center, dtype=float)
        return cls(c, radius * np.eye(m), 2 * m * math.log(radius), 0)

    @property
    def m(self) -> int:
        return self.center.shape[0]

    @property
    def shape(self) -> Array:
        return self.factor @ self.factor.T

    def resolved(self) -> bool:
        """False once every semi-axis is below the float64 spacing at the center."""
        scale = float(np.linalg.norm(self.center))
        return float(np.linalg.norm(self.factor, 2)) > RESOLUTION_ULPS * np.finfo(float).eps * scale

    def contains(self, y: Array, rtol: float = 1e-9) -> bool:
        u = np.linalg.solve(self.factor, np.asarray(y, dtype=float) - self.center)
        return float(u @ u) <= 1.0 + rtol


def logdet_decrement(m: int) -> float:
    """Change of ``log det`` per ellipsoid update (negative)."""
    return m * math.log(m * m / (m * m - 1.0)) + math.log((m - 1.0) / (m + 1.0))


def ellipsoid_update(state: EllipsoidState, a: Array) -> EllipsoidState:
    """Minimum-volume ellipsoid containing ``state`` cut by ``a^T (y - center) <= 0``.

    With ``B = J J^T`` and ``p = J^T a / ||J^T a||`` the update is
    ``center - J p / (m + 1)`` and
    ``J m / sqrt(m^2 - 1) (I - (1 - sqrt((m - 1)/(m + 1))) p p^T)``.
    """
    m = state.m
    if m < 2:
        raise ValueError("the ellipsoid method needs m >= 2")
    a = np.asarray(a, dtype=float)
    if not np.any(a):
        raise ValueError("cut normal must be nonzero")
    J = state.factor
    w = J.T @ a
    nw = float(np.linalg.norm(w))
    if not (nw > 0 and math.isfinite(nw)):
        raise FloatingPointError("ellipsoid shape lost positive definiteness")
    p = w / nw
    Jp = J @ p
    center = state.center - Jp / (m + 1)
    shrink = 1.0 - math.sqrt((m - 1.0) / (m + 1.0))
    Jn = (m / math.sqrt(m * m - 1.0)) * (J - shrink * np.outer(Jp, p))
    it = state.iter + 1
    logdet = state.logdet + logdet_decrement(m)
    if it % LOGDET_REFRESH == 0:
        sv = np.linalg.svd(Jn, compute_uv=False)
        if not np.all(sv > 0):
            raise FloatingPointError("ellipsoid shape lost positive definiteness")
        logdet = 2.0 * float(np.sum(np.log(sv)))
    return EllipsoidState(center, Jn, logdet, it)


def ellipsoid_iteration_bound(m: int, b: float, eta: float) -> int:
    return math.ceil(2 * m * (m + 1) * math.log(4 * b / eta) - 1e-12)


@dataclass(frozen=True)
class CutRecord:
    iter: int
    branch: str
    y_norm: float
    logdet: float


def write_cut_trace(records: List[CutRecord], path) -> None:
    """Write cut records as CSV with columns iter, branch, y_norm, logdet."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "branch", "y_norm", "logdet"])
        for r in records:
            w.writerow([r.iter, r.branch, repr(r.y_norm), repr(r.logdet)])


def _ellipsoid_eps(sub: SaddleSubproblem, delta: float) -> float:
    c = sub.problem.constants
    return min(c.mu * delta / (4 * c.B_g),
               c.mu ** 2 * delta / (8 * c.B_g * (c.mu + sub.beta * c.B_g ** 2)))


def _ellipsoid(t: _Tally, delta: float, b: float, trace: Optional[list]):
    sub = t.sub
    c = sub.problem.constants
    m = sub.m
    eps_bar = _ellipsoid_eps(sub, delta)
    B_d = sub.beta * c.G + float(np.linalg.norm(sub.z)) + sub.beta * b
    eta = min(b, eta_plus(delta, sub.beta, c.mu, c.B_g, B_d))
    state = EllipsoidState.ball(m, b)
    floor = m * math.log(eta / 4)
    last = None
    while 0.5 * state.logdet > floor:
        if not state.resolved():
            # further cuts cannot move the center; treat as exhausted
            if trace is not None:
                trace.append(CutRecord(state.iter, "resolution", float(np.linalg.norm(state.center)),
                                       state.logdet))
            break
        y = state.center
        if np.any(y < 0):
            i0 = int(np.argmin(y))
            a = np.zeros(m)
            a[i0] = -1.0
            branch = "nonneg"
        elif np.linalg.norm(y) > b:
            a = y.copy()
            branch = "norm"
        else:
            res = t.solve(y, eps_bar)
            last = (res, y.copy())
            th = sub.theta(res.x_hat)
            if np.linalg.norm(positive_part(th) - y) <= 0.75 * delta:
                if trace is not None:
                    trace.append(CutRecord(state.iter, FOUND, float(np.linalg.norm(y)), state.logdet))
                return res, y.copy(), True, state.iter
            a = y - th
            branch = "objective"
            if not np.any(a):
                # exact dual stationarity; certificate test above would have fired
                return res, y.copy(), True, state.iter
        if trace is not None:
            trace.append(CutRecord(state.iter, branch, float(np.linalg.norm(y)), state.logdet))
        state = ellipsoid_update(state, a)
    if last is None:
        y0 = np.zeros(m)
        last = (t.solve(y0, eps_bar), y0)
    return last[0], last[1], False, state.iter


def ellipsoid_search(sub: SaddleSubproblem, delta: float, b: float, apg_cfg: ApgConfig,
                     starts: Optional[InnerStarts] = None,
                     trace: Optional[list] = None) -> DualSearchResult:
    """Ellipsoid method for the dual over ``{y >= 0, ||y|| <= b}``.

    Returns flag ``found`` once a query point certifies, or ``exhausted``
    with the last inner solution when the volume floor is reached.
    Cut records are appended to ``trace`` when it is a list.
    """
    if sub.m < 2:
        raise ValueError("ellipsoid_search requires m >= 2")
    _check_delta(delta)
    if not b > 0:
        raise ValueError("b must be positive")
    t = _Tally(sub, apg_cfg, starts)
    res, y, found, cuts = _ellipsoid(t, delta, b, trace)
    return t.result(res, y, FOUND if found else EXHAUSTED, cuts=cuts, ellipsoid_calls=1)


def stem_calls_bound(z_star_norm: float, z_norm: float) -> int:
    v = 2 * z_star_norm + z_norm
    return (max(0, math.ceil(math.log2(v) - 1e-12)) if v > 0 else 0) + 1


def stem(sub: SaddleSubproblem, delta: float, apg_cfg: ApgConfig,
         starts: Optional[InnerStarts] = None, trace: Optional[list] = None) -> DualSearchResult:
    """Ellipsoid searches over balls of radius ``2^k / beta`` until one certifies."""
    if sub.m < 2:
        raise ValueError("stem requires m >= 2")
    _check_delta(delta)
    c = sub.problem.constants
    if delta > 8 * (c.mu + sub.beta * c.B_g ** 2) / (sub.beta * c.mu):
        raise ValueError("delta too large for the ellipsoid search guarantee")
    t = _Tally(sub, apg_cfg, starts)
    b = 1.0 / sub.beta
    cuts = 0
    for k in range(DOUBLING_CAP + 1):
        res, y, found, n_cuts = _ellipsoid(t, delta, b, trace)
        cuts += n_cuts
        if found:
            return t.result(res, y, FOUND, cuts=cuts, ellipsoid_calls=k + 1)
        b *= 2.0
    raise RuntimeError("ellipsoid search exceeded the doubling cap; "
                       "check the problem constants and constraint qualification")
