"""Inexact augmented Lagrangian outer loops and the convex / nonconvex wrappers."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .apg import ApgConfig, SmoothFunction, apg_solve
from .dualcut import (InnerStarts, SaddleSubproblem, bisec, solve_inner, stem)
from .problem import (KktResidual, OracleBundle, Problem, ProblemConstants, is_eps_kkt,
                      kkt_residuals, positive_part)

Array = np.ndarray

TRACE_COLUMNS = ("trial", "solver", "outer_iter", "beta", "grad_evals", "func_evals",
                 "pres", "dres", "compl", "time_sec")


@dataclass(frozen=True)
class IalmConfig:
    """Outer-loop parameters.

    Parameters
    ----------
    beta0, sigma : float
        Penalty schedule ``beta_k = beta0 * sigma**k``.
    eps : float
        Target KKT accuracy.
    max_outer : int
        Cap on the number of outer iterations.
    subsolver : {"apg_direct", "cutting_plane"}
        Used by :func:`ialm_solve`.
    init_mode : {"random", "warm"}
        ``random`` starts every subproblem from a uniform point of the box
        (seeded by ``seed`` and the outer index); ``warm`` starts from the
        previous iterate.
    apg : ApgConfig
        Defaults for the APG; tolerances and moduli are filled in per solve.
        The cutting-plane solver always runs its inner APG with the global
        smoothness constant and no line search.
    stop_at_kkt : bool
        Stop as soon as an eps-KKT point is found. When False all
        ``max_outer`` iterations run.
    eps_schedule : {"constant", "ceiling"}
        ``constant`` uses ``min(eps, sqrt(eps mu (sigma-1)/(8 sigma+1)))``
        for every subproblem; ``ceiling`` uses the looser per-iteration
        ceiling ``min(eps, 24 B_g (mu + beta_k B_g^2) / mu)``.
    inner_rel_floor : float
        Relative precision floor of the inner APG solves (see ``ApgConfig``).
        The ellipsoid search asks for inner tolerances far below machine
        precision once ``B_g`` is large; the floor stops such solves when
        the stationarity measure is at rounding level. Set to 0 to disable.
    x0 : ndarray, optional
        Initial point; defaults to a random box point or the origin.
    seed : int
        Seed of the random initial points.
    """

    beta0: float = 1.0
    sigma: float = 10.0
    eps: float = 1e-4
    max_outer: int = 50
    subsolver: str = "cutting_plane"
    init_mode: str = "warm"
    apg: ApgConfig = field(default_factory=ApgConfig)
    stop_at_kkt: bool = True
    eps_schedule: str = "constant"
    inner_rel_floor: float = 1e-13
    x0: Optional[Array] = None
    seed: int = 0

    def __post_init__(self):
        if not self.beta0 > 0:
            raise ValueError("beta0 must be positive")
        if not self.sigma > 1:
            raise ValueError("sigma must exceed 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be positive")
        if self.subsolver not in ("apg_direct", "cutting_plane"):
            raise ValueError("subsolver must be 'apg_direct' or 'cutting_plane'")
        if self.init_mode not in ("random", "warm"):
            raise ValueError("init_mode must be 'random' or 'warm'")
        if self.eps_schedule not in ("constant", "ceiling"):
            raise ValueError("eps_schedule must be 'constant' or 'ceiling'")

    def with_(self, **kw) -> "IalmConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class TraceRecord:
    """One outer iteration. Counters cover that iteration only."""

    outer_iter: int
    beta: float
    grad_evals: int
    func_evals: int
    pres: float
    dres: float
    compl: float
    time_sec: float
    z_norm: float = 0.0
    inner_solves: int = 0
    refined: bool = False
    floor_hits: int = 0
    search_flag: str = ""


@dataclass
class IalmTrace:
    solver: str
    records: List[TraceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def rows(self, trial: int = 0):
        for r in self.records:
            yield (trial, self.solver, r.outer_iter, r.beta, r.grad_evals, r.func_evals,
                   r.pres, r.dres, r.compl, r.time_sec)


def write_trace_csv(traces, path, trial: int = 0) -> None:
    """Write one or more traces with the columns of ``TRACE_COLUMNS``."""
    if isinstance(traces, IalmTrace):
        traces = [traces]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for tr in traces:
            for row in tr.rows(trial):
                w.writerow(row)


@dataclass(frozen=True)
class Solution:
    x_bar: Array
    z_bar: Array
    residual: KktResidual
    converged: bool
    outer_iters: int = 0
    element: Optional[Array] = None


def multiplier_update(z: Array, beta: float, gx: Array) -> Array:
    """``[z + beta g(x)]_+``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    if not beta > 0:
        raise ValueError("beta must be positive")
    return positive_part(z + beta * np.asarray(gx, dtype=float))


def _ceil_plus(v: float) -> int:
    if v == -math.inf:
        return 0
    return max(0, math.ceil(v - 1e-9))


def outer_budget(beta0: float, sigma: float, eps: float, z_star_norm: float) -> int:
    """Number of outer iterations that suffices for an eps-KKT point."""
    if not (beta0 > 0 and sigma > 1 and eps > 0) or z_star_norm < 0:
        raise ValueError("invalid arguments")

    def lg(v):
        return math.log(v) / math.log(sigma) if v > 0 else -math.inf

    return max(_ceil_plus(lg(9 * z_star_norm ** 2 / (beta0 * eps))),
               _ceil_plus(lg(8 * z_star_norm / (beta0 * eps))),
               _ceil_plus(lg(4 / (beta0 * eps)))) + 1


def output_multiplier_bound(z_star_norm: float, sigma: float) -> float:
    """Bound on the norm of the multiplier returned by the cutting-plane iALM."""
    zs = z_star_norm
    return 2 * zs + math.sqrt(2 * sigma ** 2 / (8 * sigma + 1)) * max(
        3 * zs, 2 * math.sqrt(2 * zs), 2.0)


def constant_tolerance(eps: float, mu: float, sigma: float) -> float:
    """Subproblem tolerance ``min(eps, sqrt(eps mu (sigma-1) / (8 sigma + 1)))``."""
    return min(eps, math.sqrt(eps * mu * (sigma - 1) / (8 * sigma + 1)))


def pres_envelope(k: int, z_star_norm: float, beta0: float, sigma: float, eps_bar: float,
                  mu: float) -> float:
    """Bound on ``||[g(x^{k+1})]_+||`` after outer iteration ``k``."""
    bk = beta0 * sigma ** k
    return 4 * z_star_norm / bk + eps_bar * (math.sqrt(sigma) + 1) * math.sqrt(
        2 / (mu * (sigma - 1))) / math.sqrt(bk)


def compl_envelope(k: int, z_star_norm: float, beta0: float, sigma: float, eps_bar: float,
                   mu: float) -> float:
    """Bound on the complementarity violation after outer iteration ``k``."""
    bk = beta0 * sigma ** k
    return 9 * z_star_norm ** 2 / (2 * bk) + eps_bar ** 2 * (8 * sigma + 1) / (2 * mu * (sigma - 1))


def multiplier_envelope(z_star_norm: float, betas, eps_list, mu: float) -> float:
    """Bound on ``||z^k||`` from the penalties and tolerances used so far."""
    s = sum(b * e * e for b, e in zip(betas, eps_list))
    return 2 * z_star_norm + math.sqrt(2 * s / mu)


def _initial_point(problem: Problem, cfg: IalmConfig, k: int, prev: Optional[Array]):
    o = problem.oracles
    if cfg.init_mode == "random" and o.is_box:
        rng = np.random.default_rng([cfg.seed, k])
        return rng.uniform(o.lower, o.upper), rng
    rng = np.random.default_rng([cfg.seed, k])
    if prev is not None:
        return prev, rng
    if cfg.x0 is not None:
        return o.h_prox(np.asarray(cfg.x0, dtype=float), 1.0), rng
    x = np.zeros(problem.n)
    return (np.clip(x, o.lower, o.upper) if o.is_box else x), rng


def _aug_smooth(oracles: OracleBundle, z: Array, beta: float) -> SmoothFunction:
    """Smooth part of ``L_beta(., z)``."""

    def value(x):
        t = positive_part(oracles.g_value(x) + z / beta)
        return oracles.f_value(x) + 0.5 * beta * float(t @ t) - float(z @ z) / (2 * beta)

    def grad(x):
        zp = positive_part(z + beta * oracles.g_value(x))
        return oracles.f_grad(x) + oracles.g_jacobian(x).T @ zp

    return SmoothFunction(value, grad)


def ialm_solve_apg(problem: Problem, cfg: IalmConfig):
    """Augmented Lagrangian method with a direct APG solve per subproblem.

    Returns
    -------
    Solution, IalmTrace
    """
    c = problem.constants
    if not c.mu > 0:
        raise ValueError("ialm_solve_apg requires a strongly convex objective")
    o = problem.oracles
    eps_bar = constant_tolerance(cfg.eps, c.mu, cfg.sigma)
    z = np.zeros(problem.m)
    trace = IalmTrace("apg")
    x = None
    res = None
    for k in range(cfg.max_outer):
        t0 = time.perf_counter()
        beta = cfg.beta0 * cfg.sigma ** k
        x0, _ = _initial_point(problem, cfg, k, x)
        apg_cfg = cfg.apg.with_(eps_bar=eps_bar, mu_psi=c.mu, line_search=True)
        sol = apg_solve(_aug_smooth(o, z, beta), o.h_prox, apg_cfg, x0)
        x = sol.x_hat
        z = multiplier_update(z, beta, o.g_value(x))
        res = kkt_residuals(o, x, z, dres_element=sol.element)
        trace.records.append(TraceRecord(k + 1, beta, sol.grad_evals, sol.func_evals,
                                         res.pres, res.dres, res.compl,
                                         time.perf_counter() - t0, float(np.linalg.norm(z)),
                                         1, False, int(sol.floor_hit)))
        if cfg.stop_at_kkt and is_eps_kkt(res, cfg.eps):
            break
    return Solution(x, z, res, is_eps_kkt(res, cfg.eps), len(trace), sol.element), trace


def refinement_fires(m: int, mu: float, beta: float, B_g: float) -> bool:
    """Whether the extra refinement solve of the cutting-plane iALM is required."""
    r1 = mu / (4 * beta * B_g ** 2)
    if m == 1:
        return r1 > 1
    return min(r1, mu ** 2 / (8 * beta * B_g ** 2 * (mu + beta * B_g ** 2))) > 1


def ialm_solve_cutting_plane(problem: Problem, cfg: IalmConfig, search_trace: Optional[list] = None):
    """Augmented Lagrangian method whose subproblems are solved by dual cutting planes.

    Single-constraint subproblems use bisection; several constraints use
    ellipsoid searches with growing radius.

    Returns
    -------
    Solution, IalmTrace
    """
    c = problem.constants
    if not c.mu > 0:
        raise ValueError("ialm_solve_cutting_plane requires a strongly convex objective")
    if problem.m < 1:
        raise ValueError("at least one constraint is required")
    o = problem.oracles
    eps_const = constant_tolerance(cfg.eps, c.mu, cfg.sigma)
    inner = cfg.apg.with_(line_search=False, rel_floor=cfg.inner_rel_floor)
    z = np.zeros(problem.m)
    trace = IalmTrace("cut")
    x = None
    res = None
    for k in range(cfg.max_outer):
        t0 = time.perf_counter()
        beta = cfg.beta0 * cfg.sigma ** k
        ceiling = 24 * c.B_g * (c.mu + beta * c.B_g ** 2) / c.mu
        eps_k = min(eps_const, ceiling) if cfg.eps_schedule == "constant" \
            else min(cfg.eps, ceiling)
        delta = eps_k / (3 * beta * c.B_g)
        x0, rng = _initial_point(problem, cfg, k, x)
        starts = InnerStarts(problem, "warm", x0, rng)
        sub = SaddleSubproblem(problem, beta, z)
        if problem.m == 1:
            out = bisec(sub, delta, inner, starts)
        else:
            out = stem(sub, delta, inner, starts, trace=search_trace)
        y = out.y_hat
        sol = out.inner
        grads, funcs, solves, floors = out.grad_evals, out.func_evals, out.inner_solves, out.floor_hits
        refined = refinement_fires(problem.m, c.mu, beta, c.B_g)
        if refined:
            sol = solve_inner(sub, y, eps_k / 3, inner, sol.x_hat)
            grads += sol.grad_evals
            funcs += sol.func_evals
            solves += 1
            floors += int(sol.floor_hit)
        x = sol.x_hat
        gx = o.g_value(x)
        # element of d_x L_beta(x, z) = d_x L_0(x, z_next), built from the
        # certified element of d_x Phi(x, y)
        th_plus = positive_part(gx + z / beta)
        element = sol.element + beta * (o.g_jacobian(x).T @ (th_plus - y))
        z = multiplier_update(z, beta, gx)
        res = kkt_residuals(o, x, z, dres_element=element)
        trace.records.append(TraceRecord(k + 1, beta, grads, funcs, res.pres, res.dres,
                                         res.compl, time.perf_counter() - t0,
                                         float(np.linalg.norm(z)), solves, refined, floors,
                                         out.flag))
        if cfg.stop_at_kkt and is_eps_kkt(res, cfg.eps):
            break
    return Solution(x, z, res, is_eps_kkt(res, cfg.eps), len(trace), element), trace


def ialm_solve(problem: Problem, cfg: IalmConfig):
    """Dispatch on ``cfg.subsolver``."""
    if cfg.subsolver == "apg_direct":
        return ialm_solve_apg(problem, cfg)
    return ialm_solve_cutting_plane(problem, cfg)


# ----------------------------------------------------------------------------
# wrappers

def _with_objective(problem: Problem, f_value, f_grad, mu: float, L_f: float) -> Problem:
    c = problem.constants
    consts = ProblemConstants(mu=mu, L_f=L_f, L_g=c.L_g, D_h=c.D_h, B_g=c.B_g, G=c.G)
    return Problem(problem.oracles.with_f(f_value, f_grad), consts, problem.n, problem.m)


@dataclass(frozen=True)
class ConvexReport:
    """Residual chain of the convex wrapper.

    ``perturbed`` is the residual of the regularized problem and
    ``shift_norm`` the norm of the regularization gradient at the output.
    """

    perturbed: KktResidual
    shift_norm: float


def solve_convex(problem: Problem, eps: float, x0: Array, cfg: IalmConfig):
    """Solve a convex (not necessarily strongly convex) problem to eps-KKT.

    A proximal term ``eps / (4 D_h) ||x - x0||^2`` makes the objective
    ``eps / (2 D_h)``-strongly convex; the regularized problem is solved to
    ``eps / 2`` and its certificate transferred back.

    Returns
    -------
    Solution, IalmTrace, ConvexReport
    """
    o, c = problem.oracles, problem.constants
    x0 = o.h_prox(np.asarray(x0, dtype=float), 1.0)
    w = eps / (2 * c.D_h)

    def f_value(x):
        d = x - x0
        return o.f_value(x) + 0.5 * w * float(d @ d)

    def f_grad(x):
        return o.f_grad(x) + w * (x - x0)

    pert = _with_objective(problem, f_value, f_grad, c.mu + w, c.L_f + w)
    sol, trace = ialm_solve_cutting_plane(pert, cfg.with_(eps=eps / 2, x0=x0))
    x = sol.x_bar
    shift = w * (x - x0)
    element = sol.element - shift
    res = kkt_residuals(o, x, sol.z_bar, dres_element=element)
    report = ConvexReport(sol.residual, float(np.linalg.norm(shift)))
    return (Solution(x, sol.z_bar, res, is_eps_kkt(res, eps), sol.outer_iters, element),
            trace, report)


def multiplier_bound_slater(F_feas: float, F_star: float, L_f: float, D_h: float,
                            slack: float) -> float:
    """Uniform bound ``(F(x_feas) - F* + L_f D_h^2) / min_i(-g_i(x_feas))`` on subproblem multipliers."""
    if not slack > 0:
        raise ValueError("the Slater point must satisfy g(x_feas) < 0")
    return (F_feas - F_star + L_f * D_h ** 2) / slack


def inflated_multiplier_bound(B_z: float, sigma: float) -> float:
    return 2 * B_z + math.sqrt(2 * sigma ** 2 / (8 * sigma + 1)) * max(
        3 * B_z, 2 * math.sqrt(2 * B_z), 2.0)


def proximal_point_budget(L_f: float, gap0: float, D_h: float, Bbar_z: float,
                          infeas0: float, eps: float) -> int:
    """Number of proximal-point rounds that suffices for an eps-KKT point."""
    return math.ceil(64 * L_f * (gap0 + L_f * D_h ** 2 + Bbar_z * infeas0) / eps ** 2)


def objective_lower_bound(problem: Problem, x_feas: Array) -> float:
    """Lower bound of ``F`` over ``dom(h)`` from smoothness at ``x_feas``."""
    o, c = problem.oracles, problem.constants
    return o.F(x_feas) - float(np.linalg.norm(o.f_grad(x_feas))) * c.D_h - 0.5 * c.L_f * c.D_h ** 2


@dataclass(frozen=True)
class NonconvexReport:
    """Diagnostics of the proximal-point wrapper.

    ``steps`` holds ``2 L_f ||x^{k+1} - x^k||`` per round and ``budget`` the
    worst-case number of rounds.
    """

    rounds: int
    budget: int
    steps: List[float]
    eps_sub: float
    eps_sub_used: float
    B_z: float
    Bbar_z: float


def solve_nonconvex(problem: Problem, eps: float, x_bar0: Array, x_feas: Array,
                    cfg: IalmConfig, f_star: Optional[float] = None,
                    min_sub_eps: float = 0.0, max_rounds: Optional[int] = None):
    """Proximal-point wrapper for a possibly nonconvex smooth objective.

    Each round minimizes ``f(x) + L_f ||x - x^k||^2`` subject to the original
    constraints with the cutting-plane iALM.

    Parameters
    ----------
    problem : Problem
        ``constants.L_f`` must bound the gradient Lipschitz constant of ``f``;
        ``mu`` is ignored.
    eps : float
        Target KKT accuracy of the original problem.
    x_bar0 : ndarray
        Starting point in ``dom(h)``.
    x_feas : ndarray
        Strictly feasible point, ``g(x_feas) < 0``.
    cfg : IalmConfig
        Outer-loop parameters of the subproblem solves; ``eps`` is replaced.
    f_star : float, optional
        Optimal value, or a lower bound of it. Defaults to a bound derived
        from smoothness at ``x_feas``.
    min_sub_eps : float
        Lower limit on the subproblem accuracy, to keep it within float64
        reach. The worst-case accuracy is used when it is larger.
    max_rounds : int, optional
        Cap on the number of rounds; defaults to the worst-case budget.

    Returns
    -------
    Solution, list of IalmTrace, NonconvexReport
    """
    o, c = problem.oracles, problem.constants
    x_feas = np.asarray(x_feas, dtype=float)
    g_feas = o.g_value(x_feas)
    if np.any(g_feas >= 0):
        raise ValueError("x_feas is not strictly feasible")
    if not np.isfinite(o.h_value(x_feas)):
        raise ValueError("x_feas lies outside dom(h)")
    L_f = c.L_f
    F_low = objective_lower_bound(problem, x_feas) if f_star is None else f_star
    B_z = multiplier_bound_slater(o.F(x_feas), F_low, L_f, c.D_h, float(np.min(-g_feas)))
    Bbar_z = inflated_multiplier_bound(B_z, cfg.sigma)
    eps_sub = min(eps / 2, eps ** 2 / (64 * L_f * (c.D_h + 2 * Bbar_z)))
    eps_used = max(eps_sub, min_sub_eps)
    x = o.h_prox(np.asarray(x_bar0, dtype=float), 1.0)
    budget = proximal_point_budget(L_f, o.F(x) - F_low, c.D_h, Bbar_z,
                                   float(np.linalg.norm(positive_part(o.g_value(x)))), eps)
    cap = budget if max_rounds is None else min(budget, max_rounds)
    traces, steps = [], []
    sol = None
    res = None
    element = None
    for k in range(cap):
        center = x.copy()

        def f_value(v, center=center):
            d = v - center
            return o.f_value(v) + L_f * float(d @ d)

        def f_grad(v, center=center):
            return o.f_grad(v) + 2 * L_f * (v - center)

        sub = _with_objective(problem, f_value, f_grad, L_f, 3 * L_f)
        sol, tr = ialm_solve_cutting_plane(sub, cfg.with_(eps=eps_used, x0=center,
                                                          seed=cfg.seed + k))
        traces.append(tr)
        x = sol.x_bar
        shift = 2 * L_f * (x - center)
        steps.append(float(np.linalg.norm(shift)))
        element = sol.element - shift
        res = kkt_residuals(o, x, sol.z_bar, dres_element=element)
        if is_eps_kkt(sol.residual, eps / 2) and steps[-1] <= eps / 2:
            break
    report = NonconvexReport(len(steps), budget, steps, eps_sub, eps_used, B_z, Bbar_z)
    return (Solution(x, sol.z_bar, res, is_eps_kkt(res, eps), len(steps), element),
            traces, report)
