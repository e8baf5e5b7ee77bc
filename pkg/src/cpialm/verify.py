"""Acceptance checks and the ``verify_suite`` driver.

Each check returns a :class:`CheckResult`. The ``fast`` level keeps every
instance at ``n <= 200``; ``full`` runs the benchmark checks at ``n = 1000``
with ``m`` in ``{1, 2, 5}``.

``inject="mu_halved"`` shifts the objective of the APG instances down by
half of their strong convexity modulus while the constants still report the
original value, so the APG runs with an overestimated modulus.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import optimize

from .apg import ApgConfig, SmoothFunction, apg_solve, gradient_budget, gap_bound
from .bench import BenchConfig, grad_ratios, run_benchmark, spread
from .dualcut import (EllipsoidState, SaddleSubproblem, ellipsoid_update, logdet_decrement,
                      saddle_value, solve_inner)
from .ialm import (IalmConfig, constant_tolerance, ialm_solve_cutting_plane, pres_envelope,
                   compl_envelope, solve_convex, solve_nonconvex)
from .problem import is_eps_kkt
from .qcqp import GeneratorConfig, generate, reference_solve, to_problem

LEVELS = ("fast", "full")
INJECTIONS = (None, "mu_halved")

# (n, m, seed) of the tiny instances used by several checks
TINY = ((2, 1, 0), (3, 1, 1), (2, 2, 2), (3, 2, 3), (3, 2, 4))


@dataclass(frozen=True)
class CheckResult:
    cid: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget_sec: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] criterion {self.cid:2d} {self.name}: {self.detail} "
                f"({self.seconds:.1f}s, budget {self.budget_sec:g}s)")


@dataclass
class Context:
    level: str = "fast"
    inject: Optional[str] = None
    cache: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        if self.inject not in INJECTIONS:
            raise ValueError(f"inject must be one of {INJECTIONS}")


# ----------------------------------------------------------------------------
# helpers

def box_qp_reference(Q, c, lower, upper, tol=1e-13, max_rounds=50):
    """Exact minimizer of ``1/2 x^T Q x + c^T x`` over a box (``Q`` positive definite).

    A bound-constrained quasi-Newton solve fixes the active set, which is
    then refined by solving the reduced linear system until the projected
    gradient vanishes.
    """
    f = lambda x: 0.5 * x @ Q @ x + c @ x  # noqa: E731
    g = lambda x: Q @ x + c  # noqa: E731
    x = optimize.minimize(f, np.clip(np.zeros_like(c), lower, upper), jac=g,
                          method="L-BFGS-B", bounds=list(zip(lower, upper)),
                          options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000}).x
    for _ in range(max_rounds):
        gr = g(x)
        at_lo = (x <= lower + 1e-10) & (gr > 0)
        at_up = (x >= upper - 1e-10) & (gr < 0)
        free = ~(at_lo | at_up)
        xn = np.where(at_lo, lower, np.where(at_up, upper, x))
        if free.any():
            rhs = -(c[free] + Q[np.ix_(free, ~free)] @ xn[~free])
            xn[free] = np.linalg.solve(Q[np.ix_(free, free)], rhs)
        xn = np.clip(xn, lower, upper)
        pg = xn - np.clip(xn - g(xn), lower, upper)
        x = xn
        if np.linalg.norm(pg) <= tol * (1 + np.linalg.norm(c)):
            break
    return x, f(x)


def _apg_instances(ctx: Context):
    """Ten box QPs, n = 50, condition number 100."""
    key = ("apg", ctx.inject)
    if key in ctx.cache:
        return ctx.cache[key]
    out = []
    for seed in range(10):
        inst = generate(GeneratorConfig(n=50, m=0, seed=seed, spectrum=(1.0, 100.0),
                                        c_scale=20.0, box=(-1.0, 1.0)))
        Q, mu, L = inst.Q0, 1.0, 100.0
        if ctx.inject == "mu_halved":
            Q = Q - 0.5 * mu * np.eye(inst.n)
        x_star, p_star = box_qp_reference(Q, inst.c0, inst.lower, inst.upper)
        out.append(dict(Q=Q, c=inst.c0, lower=inst.lower, upper=inst.upper, mu=mu, L=L,
                        x_star=x_star, p_star=p_star, seed=seed))
    ctx.cache[key] = out
    return out


def _quad(Q, c):
    return SmoothFunction(lambda x: float(0.5 * x @ Q @ x + c @ x), lambda x: Q @ x + c)


def _apg_start(d):
    rng = np.random.default_rng(1000 + d["seed"])
    return rng.uniform(d["lower"], d["upper"])


def _tiny(ctx: Context):
    if "tiny" in ctx.cache:
        return ctx.cache["tiny"]
    out = []
    for n, m, seed in TINY:
        inst = generate(GeneratorConfig(n=n, m=m, seed=seed, rank=1, spectrum=(1.0, 10.0)))
        out.append((inst, to_problem(inst), reference_solve(inst)))
    ctx.cache["tiny"] = out
    return out


def _tiny_runs(ctx: Context):
    """Cutting-plane iALM at eps = 1e-6 on the tiny instances."""
    if "tiny_runs" in ctx.cache:
        return ctx.cache["tiny_runs"]
    cfg = IalmConfig(eps=1e-6, max_outer=30)
    out = [ialm_solve_cutting_plane(p, cfg) + (cfg,) for _, p, _ in _tiny(ctx)]
    ctx.cache["tiny_runs"] = out
    return out


def _x_of_y(sub, y, x0=None):
    return solve_inner(sub, y, 1e-12, ApgConfig(line_search=False, max_iters=200000), x0).x_hat


# ----------------------------------------------------------------------------
# checks

def check_apg_rate(ctx: Context):
    worst, n_bad = -math.inf, 0
    for d in _apg_instances(ctx):
        P = _quad(d["Q"], d["c"])
        x0 = _apg_start(d)
        gap0 = P.value(x0) - d["p_star"]
        dist0 = float(np.linalg.norm(x0 - d["x_star"]))
        cfg = ApgConfig(mu_psi=d["mu"], eps_bar=1e-10, max_iters=200)
        hist = []
        apg_solve(P, lambda v, t: np.clip(v, d["lower"], d["upper"]), cfg, x0,
                  callback=lambda k, x: hist.append((k, P.value(x))))
        for k, val in hist:
            if k > 200:
                continue
            bound = gap_bound(k, d["mu"], d["L"], cfg.gamma1, gap0, dist0)
            # float64 evaluation error of P at the reference point
            slack = 64 * np.finfo(float).eps * (abs(d["p_star"]) + 1.0)
            excess = (val - d["p_star"]) - bound
            worst = max(worst, excess)
            n_bad += excess > slack
    return n_bad == 0, f"{n_bad} violations over 10 instances, worst excess {worst:.2e}"


def check_apg_budget(ctx: Context):
    worst = 0.0
    ok = True
    for d in _apg_instances(ctx):
        P = _quad(d["Q"], d["c"])
        cfg = ApgConfig(mu_psi=d["mu"], eps_bar=1e-8)
        res = apg_solve(P, lambda v, t: np.clip(v, d["lower"], d["upper"]), cfg, _apg_start(d))
        D_r = float(np.linalg.norm(d["upper"] - d["lower"]))
        T = gradient_budget(d["mu"], d["L"], cfg.L_min, cfg.gamma1, cfg.eps_bar, D_r)
        ok &= res.converged and res.grad_evals <= T
        worst = max(worst, res.grad_evals / T)
    return ok, f"max grad_evals / budget = {worst:.3f}"


def check_ellipsoid_law(ctx: Context):
    rng = np.random.default_rng(0)
    worst_dec, worst_ratio, ok = 0.0, -math.inf, True
    for m in (2, 3, 5, 10):
        dec = logdet_decrement(m)
        cuts = 0
        while cuts < 1000:
            st = EllipsoidState.ball(m, 1.0, rng.standard_normal(m))
            for _ in range(50):
                before = np.linalg.slogdet(st.shape)[1]
                st = ellipsoid_update(st, rng.standard_normal(m))
                after = np.linalg.slogdet(st.shape)[1]
                worst_dec = max(worst_dec, abs((after - before) - dec))
                cuts += 1
        ratio = math.exp(0.5 * dec)
        worst_ratio = max(worst_ratio, ratio / math.exp(-1.0 / (2 * (m + 1))))
        ok &= worst_dec <= 1e-10 and ratio <= math.exp(-1.0 / (2 * (m + 1)))
    return ok, f"max |decrement error| {worst_dec:.1e}, max volume ratio / limit {worst_ratio:.4f}"


def check_dual_gradient(ctx: Context):
    rng = np.random.default_rng(1)
    worst = 0.0
    subs = [SaddleSubproblem(p, 2.0, np.full(p.m, 0.5)) for inst, p, _ in _tiny(ctx)
            if p.n <= 3 and p.m <= 2]
    h = 1e-5
    for k in range(20):
        sub = subs[k % len(subs)]
        y = rng.uniform(0.1, 2.0, size=sub.m)
        x = _x_of_y(sub, y)
        grad = sub.grad_d(x, y)
        fd = np.empty(sub.m)
        for i in range(sub.m):
            e = np.zeros(sub.m)
            e[i] = h
            dp = saddle_value(sub, _x_of_y(sub, y + e, x), y + e)
            dm = saddle_value(sub, _x_of_y(sub, y - e, x), y - e)
            fd[i] = (dp - dm) / (2 * h)
        worst = max(worst, float(np.linalg.norm(grad - fd) / np.linalg.norm(grad)))
    return worst <= 1e-4, f"max relative error {worst:.2e} over 20 points"


def check_dual_monotone(ctx: Context):
    rng = np.random.default_rng(2)
    bad_mono = bad_lip = 0
    worst_lip = 0.0
    for inst, p, _ in _tiny(ctx):
        c = p.constants
        sub = SaddleSubproblem(p, 3.0, np.full(p.m, 0.2))
        for _ in range(100):
            y1, y2 = rng.uniform(0.0, 2.0, size=(2, p.m))
            x1, x2 = _x_of_y(sub, y1), _x_of_y(sub, y2)
            dy, dx = y1 - y2, x1 - x2
            dth = sub.theta(x1) - sub.theta(x2)
            # effect of the 1e-12 inner stationarity on both sides
            err = 1e-12 / c.mu
            slack = 2 * sub.beta * float(np.linalg.norm(dy)) * c.B_g * err \
                + 4 * c.mu * float(np.linalg.norm(dx)) * err + 1e-14
            bad_mono += sub.beta * float(dy @ dth) > -c.mu * float(dx @ dx) + slack
            lhs, rhs = float(np.linalg.norm(dx)), sub.beta * c.B_g / c.mu * float(np.linalg.norm(dy))
            worst_lip = max(worst_lip, lhs / rhs if rhs > 0 else 0.0)
            bad_lip += lhs > rhs + 2 * err
    ok = bad_mono == 0 and bad_lip == 0
    return ok, (f"monotonicity violations {bad_mono}, Lipschitz violations {bad_lip} "
                f"(max ratio {worst_lip:.3f}) over 500 pairs")


def check_envelopes(ctx: Context):
    bad, rows, worst = 0, 0, 0.0
    for (inst, p, ref), (sol, trace, cfg) in zip(_tiny(ctx), _tiny_runs(ctx)):
        mu = p.constants.mu
        eps_bar = constant_tolerance(cfg.eps, mu, cfg.sigma)
        zn = float(np.linalg.norm(ref.z_star))
        for r in trace.records:
            k = r.outer_iter - 1
            pe = pres_envelope(k, zn, cfg.beta0, cfg.sigma, eps_bar, mu)
            ce = compl_envelope(k, zn, cfg.beta0, cfg.sigma, eps_bar, mu)
            bad += (r.pres > pe) + (r.compl > ce)
            worst = max(worst, r.pres / pe, r.compl / ce)
            rows += 1
    return bad == 0, f"{bad} violations over {rows} outer iterations, max ratio {worst:.3f}"


def check_oracle_equivalence(ctx: Context):
    ok, dx, df = True, 0.0, 0.0
    for (inst, p, ref), (sol, trace, cfg) in zip(_tiny(ctx), _tiny_runs(ctx)):
        ex = float(np.linalg.norm(sol.x_bar - ref.x_star))
        ef = abs(p.oracles.F(sol.x_bar) - ref.f_star)
        dx, df = max(dx, ex), max(df, ef)
        ok &= ex <= 1e-3 and ef <= 1e-5
    return ok, f"max ||x - x*|| = {dx:.2e}, max |F - f*| = {df:.2e}"


def _bench(ctx: Context, key: str):
    if key in ctx.cache:
        return ctx.cache[key]
    full = ctx.level == "full"
    if key == "ratio":
        cfg = BenchConfig(n=1000 if full else 200, m_list=(1,), trials=3, output_path=None)
    else:
        cfg = BenchConfig(n=1000 if full else 50, m_list=(1, 2, 5) if full else (1, 5),
                          trials=3, solver_set=("cut",), output_path=None)
    report = run_benchmark(cfg, write=False)
    ctx.cache[key] = report
    return report


def check_ratio_and_flatness(ctx: Context):
    rep = _bench(ctx, "ratio")
    if rep.failures:
        return False, f"{len(rep.failures)} solver failures: {rep.failures[0].status}"
    ratios = np.concatenate([grad_ratios(r.trace) for r in rep.group(1, "apg")])
    spreads = [spread(r.trace.column("grad_evals")[1:]) for r in rep.group(1, "cut")]
    ok = bool(np.all((ratios >= 2.0) & (ratios <= 4.5))) and max(spreads) < 3
    return ok, (f"APG ratios in [{ratios.min():.2f}, {ratios.max():.2f}], "
                f"cutting-plane max/min over iterations 2-5 = {max(spreads):.2f}")


def per_subproblem_grads(rep, m: int) -> float:
    g = np.concatenate([r.trace.column("grad_evals") for r in rep.group(m, "cut")])
    return float(g.mean())


def check_m_scaling(ctx: Context):
    rep = _bench(ctx, "scaling")
    if rep.failures:
        return False, f"{len(rep.failures)} solver failures: {rep.failures[0].status}"
    g1, g5 = per_subproblem_grads(rep, 1), per_subproblem_grads(rep, 5)
    return g5 >= 4 * g1, f"mean grads per subproblem m=1: {g1:.0f}, m=5: {g5:.0f}, factor {g5 / g1:.1f}"


def check_final_residuals(ctx: Context):
    worst, bad, runs = 0.0, 0, 0
    for key in ("ratio", "scaling"):
        rep = _bench(ctx, key)
        for r in rep.runs:
            runs += 1
            if not r.ok:
                bad += 1
                continue
            f = r.trace.records[-1]
            worst = max(worst, f.pres, f.dres, f.compl)
            bad += max(f.pres, f.dres, f.compl) > 1e-4
    return bad == 0, f"{bad} of {runs} runs above 1e-4, worst final residual {worst:.2e}"


def check_convex_wrapper(ctx: Context):
    inst = generate(GeneratorConfig(n=50, m=1, seed=0, q0_zero_eigs=5, spectrum=(1.0, 10.0),
                                    box=(-1.0, 1.0)))
    p = to_problem(inst, require_strong=False)
    sol, trace, rep = solve_convex(p, 1e-3, np.zeros(50), IalmConfig())
    r = sol.residual
    ok = is_eps_kkt(r, 1e-3)
    return ok, f"pres {r.pres:.1e}, dres {r.dres:.1e}, compl {r.compl:.1e} after {sol.outer_iters} outer iterations"


def nonconvex_instance():
    gen = GeneratorConfig(n=20, m=2, seed=0, spectrum=(5.0, 10.0), q0_negative_eig=-5.0,
                          box=(-1.0, 1.0))
    return generate(gen)


def check_nonconvex_wrapper(ctx: Context):
    inst = nonconvex_instance()
    p = to_problem(inst, require_strong=False)
    eps = 1e-2
    x0 = np.zeros(20)
    sol, traces, rep = solve_nonconvex(p, eps, x0, x0, IalmConfig(), min_sub_eps=eps ** 2)
    r = sol.residual
    ok = rep.rounds <= rep.budget and min(rep.steps) <= eps / 2 and is_eps_kkt(r, eps)
    return ok, (f"{rep.rounds} rounds (cap {rep.budget}), min step {min(rep.steps):.1e}, "
                f"pres {r.pres:.1e}, dres {r.dres:.1e}, compl {r.compl:.1e}")


CHECKS: List[tuple] = [
    (1, "APG rate bound", 5, check_apg_rate),
    (2, "APG complexity budget", 5, check_apg_budget),
    (3, "ellipsoid update law", 2, check_ellipsoid_law),
    (4, "dual-gradient identity", 10, check_dual_gradient),
    (5, "dual monotonicity and Lipschitz", 10, check_dual_monotone),
    (6, "outer-iteration envelopes", 30, check_envelopes),
    (7, "oracle equivalence", 30, check_oracle_equivalence),
    (8, "APG ratio and cutting-plane flatness", 600, check_ratio_and_flatness),
    (9, "m-scaling", 900, check_m_scaling),
    (10, "final residuals", 0, check_final_residuals),
    (11, "convex wrapper", 120, check_convex_wrapper),
    (12, "nonconvex wrapper", 300, check_nonconvex_wrapper),
]


def run_check(cid: int, ctx: Context) -> CheckResult:
    """Run one criterion; exceptions count as failures."""
    _, name, budget, fn = next(c for c in CHECKS if c[0] == cid)
    t0 = time.perf_counter()
    try:
        passed, detail = fn(ctx)
    except Exception as exc:
        passed, detail = False, f"error: {type(exc).__name__}: {exc}"
    return CheckResult(cid, name, bool(passed), detail, time.perf_counter() - t0, budget)


def verify_suite(level: str = "fast", inject: Optional[str] = None,
                 only: Optional[List[int]] = None,
                 report: Optional[Callable[[str], None]] = None) -> List[CheckResult]:
    """Run the acceptance checks and return one result per criterion.

    ``report`` receives each result line as it completes.
    """
    ctx = Context(level, inject)
    out = []
    for cid, *_ in CHECKS:
        if only is not None and cid not in only:
            continue
        res = run_check(cid, ctx)
        out.append(res)
        if report is not None:
            report(res.line())
    return out
