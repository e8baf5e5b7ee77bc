"""Adaptive accelerated proximal gradient for strongly convex composite problems.

Minimizes ``P(x) = psi(x) + r(x)`` where ``psi`` is smooth and strongly
convex and ``r`` has an exact proximal map. Step constants are adapted by
backtracking, and every iteration produces a certified element of the
subdifferential of ``P`` that drives the stopping test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

_MAX_BACKTRACKS = 200


@dataclass(frozen=True)
class SmoothFunction:
    """Value and gradient callables of the smooth part ``psi``."""

    value: Callable[[Array], float]
    grad: Callable[[Array], Array]


@dataclass(frozen=True)
class ApgConfig:
    """Parameters of the adaptive APG.

    Parameters
    ----------
    L_min : float
        Smallest step constant ever tried.
    gamma1 : float
        Multiplicative increase of the step constant during backtracking.
    gamma2 : float
        Multiplicative decrease applied between iterations.
    eps_bar : float
        Target norm of the certified subgradient element.
    mu_psi : float
        Strong-convexity modulus of ``psi``.
    max_iters : int
        Safety cap on the number of outer iterations.
    line_search : bool
        When False, ``L_min`` is treated as a global Lipschitz constant and
        used as is, so no function values are needed.
    rel_floor : float
        Relative precision floor. The solve also stops once the certified
        element is below ``rel_floor`` times the magnitude of the gradients
        it is formed from, which guards against tolerances below what
        float64 arithmetic can resolve. Zero disables the floor.
    """

    L_min: float = 1.0
    gamma1: float = 1.5
    gamma2: float = 2.0
    eps_bar: float = 1e-6
    mu_psi: float = 1.0
    max_iters: int = 100_000
    line_search: bool = True
    rel_floor: float = 0.0

    def __post_init__(self):
        if not self.L_min > 0:
            raise ValueError("L_min must be positive")
        if not self.gamma1 > 1:
            raise ValueError("gamma1 must exceed 1")
        if not self.gamma2 >= 1:
            raise ValueError("gamma2 must be at least 1")
        if not self.eps_bar > 0:
            raise ValueError("eps_bar must be positive")
        if not self.mu_psi > 0:
            raise ValueError("mu_psi must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.rel_floor < 0:
            raise ValueError("rel_floor must be nonnegative")

    def with_(self, **kw) -> "ApgConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class ApgResult:
    """Outcome of :func:`apg_solve`.

    ``element`` is the certified subgradient of ``P`` at ``x_hat`` and
    ``stationarity`` its norm. ``converged`` is False when ``max_iters`` was
    hit; ``floor_hit`` marks a stop on the relative precision floor rather
    than on ``eps_bar``.
    """

    x_hat: Array
    x_tilde: Array
    L_hat: float
    element: Array
    stationarity: float
    grad_evals: int
    func_evals: int
    iters: int
    converged: bool
    floor_hit: bool = False


class _Counted:
    """Counts evaluations of ``psi`` and caches the most recent gradients."""

    def __init__(self, psi: SmoothFunction):
        self.psi = psi
        self.grad_evals = 0
        self.func_evals = 0
        self._cache = []

    def value(self, x):
        self.func_evals += 1
        return self.psi.value(x)

    def grad(self, x):
        for xc, gc in self._cache:
            if xc is x or np.array_equal(xc, x):
                return gc
        self.grad_evals += 1
        g = self.psi.grad(x)
        self._cache.append((x, g))
        if len(self._cache) > 3:
            self._cache.pop(0)
        return g


def prox_grad_step(psi_grad_at_y: Array, y: Array, L: float, h_prox) -> Array:
    """Exact solution of ``min <grad, x> + L/2 ||x - y||^2 + r(x)``."""
    if not L > 0:
        raise ValueError("L must be positive")
    return h_prox(y - psi_grad_at_y / L, 1.0 / L)


def _descent_holds(psi_x, psi_y, grad_y, x, y, L):
    d = x - y
    rhs = psi_y + grad_y @ d + 0.5 * L * (d @ d)
    # tiny slack for rounding in the comparison of nearly equal values
    return psi_x <= rhs + 1e-15 * (abs(psi_y) + abs(rhs))


def backtrack_until_descent(psi: SmoothFunction, anchor: Array, L_start: float,
                            cfg: ApgConfig, h_prox, *, _counted: Optional[_Counted] = None):
    """Increase ``L`` by ``gamma1`` until the prox-gradient step from ``anchor`` descends.

    The first trial uses ``gamma1 * L_start``.

    Returns
    -------
    x : ndarray
        Accepted trial point.
    L : float
        Accepted step constant.
    """
    c = _counted if _counted is not None else _Counted(psi)
    g = c.grad(anchor)
    psi_a = c.value(anchor)
    L = L_start
    for _ in range(_MAX_BACKTRACKS):
        L *= cfg.gamma1
        x = prox_grad_step(g, anchor, L, h_prox)
        if _descent_holds(c.value(x), psi_a, g, x, anchor, L):
            return x, L
    raise RuntimeError("backtracking did not terminate; gradient is not Lipschitz")


def stationarity_element(psi_grad, x_hat: Array, x_tilde: Array, L_hat: float,
                         grad_x_tilde: Optional[Array] = None) -> Array:
    """Certified element ``grad psi(x_hat) - grad psi(x_tilde) - L_hat (x_hat - x_tilde)``.

    It lies in the subdifferential of ``P`` at ``x_hat`` whenever ``x_hat``
    is the prox-gradient step from ``x_tilde`` with constant ``L_hat``.
    """
    gt = psi_grad(x_tilde) if grad_x_tilde is None else grad_x_tilde
    return psi_grad(x_hat) - gt - L_hat * (x_hat - x_tilde)


def apg_solve(psi: SmoothFunction, h_prox, cfg: ApgConfig, y0: Array,
              callback: Optional[Callable[[int, Array], None]] = None) -> ApgResult:
    """Run the adaptive APG from ``y0`` until the certified element is small.

    Parameters
    ----------
    psi : SmoothFunction
        Smooth, ``cfg.mu_psi``-strongly convex part.
    h_prox : callable
        Proximal map ``(v, t) -> argmin_u r(u) + ||u - v||^2 / (2 t)``.
    cfg : ApgConfig
        Algorithm parameters.
    y0 : ndarray
        Starting point in ``dom(r)``.
    callback : callable, optional
        Called as ``callback(k, x_k)`` for the initial point ``k = 0`` and for
        each accepted iterate thereafter.

    Returns
    -------
    ApgResult
    """
    c = _Counted(psi)
    y0 = np.asarray(y0, dtype=float)
    mu, g1, g2 = cfg.mu_psi, cfg.gamma1, cfg.gamma2

    if cfg.line_search:
        x0, L_pre = backtrack_until_descent(psi, y0, cfg.L_min / g1, cfg, h_prox, _counted=c)
        L_k = max(cfg.L_min, L_pre / g2)
    else:
        x0 = prox_grad_step(c.grad(y0), y0, cfg.L_min, h_prox)
        L_k = cfg.L_min
    x_prev, x_cur = x0, x0
    alpha_prev = 1.0
    if callback is not None:
        callback(0, x_cur)

    x_hat = x_cur
    x_tilde = x_cur
    L_hat = L_k
    elem = np.zeros_like(x_cur)
    stat = np.inf
    best = None
    for k in range(cfg.max_iters):
        diff = x_cur - x_prev
        # main step with backtracking on the accelerated point
        L_t = L_k / g1 if cfg.line_search else L_k
        for _ in range(_MAX_BACKTRACKS):
            if cfg.line_search:
                L_t *= g1
            alpha = min(1.0, math.sqrt(mu / L_t))
            w = alpha * (1.0 - alpha_prev) / (alpha_prev * (1.0 + alpha))
            y = x_cur + w * diff if w != 0.0 else x_cur
            gy = c.grad(y)
            x_tilde = prox_grad_step(gy, y, L_t, h_prox)
            if not cfg.line_search:
                break
            psi_tilde = c.value(x_tilde)
            if _descent_holds(psi_tilde, c.value(y), gy, x_tilde, y, L_t):
                break
        else:
            raise RuntimeError("backtracking did not terminate; gradient is not Lipschitz")

        # secondary prox step from the new iterate, used for the certificate
        gt = c.grad(x_tilde)
        L_hat = L_t / g1 if cfg.line_search else L_t
        for _ in range(_MAX_BACKTRACKS):
            if cfg.line_search:
                L_hat *= g1
            x_hat = prox_grad_step(gt, x_tilde, L_hat, h_prox)
            if not cfg.line_search:
                break
            if _descent_holds(c.value(x_hat), psi_tilde, gt, x_hat, x_tilde, L_hat):
                break
        else:
            raise RuntimeError("backtracking did not terminate; gradient is not Lipschitz")

        gh = c.grad(x_hat)
        elem = gh - gt - L_hat * (x_hat - x_tilde)
        stat = float(np.linalg.norm(elem))
        if best is None or stat < best[0]:
            best = (stat, x_hat, x_tilde, L_hat, elem)

        x_prev, x_cur = x_cur, x_tilde
        alpha_prev = alpha
        L_k = max(cfg.L_min, L_t / g2) if cfg.line_search else L_k
        if callback is not None:
            callback(k + 1, x_cur)

        if stat <= cfg.eps_bar:
            return ApgResult(x_hat, x_tilde, L_hat, elem, stat, c.grad_evals,
                             c.func_evals, k + 1, True)
        if cfg.rel_floor > 0:
            scale = np.linalg.norm(gh) + np.linalg.norm(gt) + L_hat * np.linalg.norm(x_tilde)
            if stat <= cfg.rel_floor * scale:
                return ApgResult(x_hat, x_tilde, L_hat, elem, stat, c.grad_evals,
                                 c.func_evals, k + 1, True, floor_hit=True)

    stat, x_hat, x_tilde, L_hat, elem = best
    return ApgResult(x_hat, x_tilde, L_hat, elem, stat, c.grad_evals, c.func_evals,
                     cfg.max_iters, False)


def rate_factor(mu: float, L: float, gamma1: float) -> float:
    """Per-iteration contraction ``1 - sqrt(mu / (gamma1 L))`` of the objective gap."""
    return 1.0 - math.sqrt(mu / (gamma1 * L))


def gap_bound(k: int, mu: float, L: float, gamma1: float, gap0: float, dist0: float) -> float:
    """Upper bound on ``P(x^k) - P*`` given the initial gap and ``||x^0 - x*||``."""
    return rate_factor(mu, L, gamma1) ** k * (gap0 + 0.5 * mu * dist0 ** 2)


def stationarity_bound(k: int, mu: float, L: float, L_min: float, gamma1: float,
                       gap0: float, dist0: float) -> float:
    """Upper bound on the certified element norm at iteration ``k``."""
    q = rate_factor(mu, L, gamma1)
    return ((math.sqrt(gamma1 * L) + L / math.sqrt(L_min))
            * math.sqrt(2 * gap0 + mu * dist0 ** 2) * q ** ((k + 1) / 2))


def _ceil_plus(v: float) -> int:
    return max(0, math.ceil(v - 1e-12))


def gradient_budget(mu: float, L: float, L_min: float, gamma1: float,
                     eps_bar: float, D_r: float) -> int:
    """Worst-case number of gradient evaluations to reach ``eps_bar``.

    ``D_r`` is the diameter of ``dom(r)``.
    """
    line = 1 + _ceil_plus(math.log(L / L_min) / math.log(gamma1))
    kappa_term = 2 * math.sqrt(gamma1 * L / mu)
    log_arg = (D_r / eps_bar) * (math.sqrt(gamma1 * L) + L / math.sqrt(L_min)) \
        * math.sqrt(2 * gamma1 * L + mu)
    return line * (1 + 2 * _ceil_plus(kappa_term * math.log(log_arg)))
