"""Constrained problem abstraction, Lagrangian evaluations and KKT residuals.

The problem class handled throughout the package is::

    min  F(x) = f(x) + h(x)   s.t.  g(x) <= 0,

with ``f`` smooth, ``h`` a simple closed convex function given through its
proximal map, and ``g`` an ``m``-vector of smooth convex constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


def box_indicator(lower: Array, upper: Array):
    """Return ``(h_value, h_prox)`` for the indicator of ``[lower, upper]``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower >= upper):
        raise ValueError("box requires lower < upper componentwise")

    def h_value(x):
        if np.all(x >= lower) and np.all(x <= upper):
            return 0.0
        return np.inf

    def h_prox(x, t):
        return np.clip(x, lower, upper)

    return h_value, h_prox


@dataclass(frozen=True)
class OracleBundle:
    """Callables describing ``f``, ``g`` and ``h``.

    ``h_prox(v, t)`` must return ``argmin_u h(u) + ||u - v||^2 / (2 t)``.
    When ``h`` is a box indicator, ``lower``/``upper`` should be set so that
    residuals can use the exact normal cone of the box.
    """

    f_value: Callable[[Array], float]
    f_grad: Callable[[Array], Array]
    g_value: Callable[[Array], Array]
    g_jacobian: Callable[[Array], Array]
    h_value: Callable[[Array], float]
    h_prox: Callable[[Array, float], Array]
    lower: Optional[Array] = None
    upper: Optional[Array] = None

    def F(self, x: Array) -> float:
        return self.f_value(x) + self.h_value(x)

    @property
    def is_box(self) -> bool:
        return self.lower is not None and self.upper is not None

    def with_f(self, f_value, f_grad) -> "OracleBundle":
        """Copy of the bundle with the smooth objective replaced."""
        return OracleBundle(f_value, f_grad, self.g_value, self.g_jacobian,
                            self.h_value, self.h_prox, self.lower, self.upper)


@dataclass(frozen=True)
class ProblemConstants:
    """Problem constants: strong convexity, smoothness and bounds on ``dom(h)``.

    Attributes
    ----------
    mu : float
        Strong-convexity modulus of ``f``.
    L_f : float
        Lipschitz constant of ``grad f``.
    L_g : float
        Lipschitz constant of the Jacobian of ``g``.
    D_h : float
        Diameter of ``dom(h)``.
    B_g : float
        Upper bound of ``||J_g(x)||`` over ``dom(h)``.
    G : float
        Upper bound of ``||g(x)||`` over ``dom(h)``.
    """

    mu: float
    L_f: float
    L_g: float
    D_h: float
    B_g: float
    G: float

    def __post_init__(self):
        for name in ("mu", "L_f", "L_g", "D_h", "B_g", "G"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if self.D_h <= 0:
            raise ValueError("D_h must be positive")
        if self.mu > self.L_f * (1 + 1e-12):
            raise ValueError(f"mu={self.mu} exceeds L_f={self.L_f}")


@dataclass(frozen=True)
class Problem:
    """Oracles and constants of one instance, with its dimensions."""

    oracles: OracleBundle
    constants: ProblemConstants
    n: int
    m: int


@dataclass(frozen=True)
class KktResidual:
    """Primal feasibility, dual residual and complementarity violation."""

    pres: float
    dres: float
    compl: float

    def __post_init__(self):
        if min(self.pres, self.dres, self.compl) < 0:
            raise ValueError("KKT residuals are nonnegative")

    def as_tuple(self):
        return (self.pres, self.dres, self.compl)


def positive_part(v: Array) -> Array:
    return np.maximum(v, 0.0)


def eval_lagrangian0(oracles: OracleBundle, x: Array, z: Array) -> float:
    """Ordinary Lagrangian ``F(x) + z^T g(x)``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("multiplier must be nonnegative")
    hx = oracles.h_value(x)
    if not np.isfinite(hx):
        raise ValueError("query point lies outside dom(h)")
    return float(oracles.f_value(x) + hx + z @ oracles.g_value(x))


def eval_aug_lagrangian(oracles: OracleBundle, x: Array, z: Array, beta: float) -> float:
    """Augmented Lagrangian ``F(x) + beta/2 ||[g(x) + z/beta]_+||^2 - ||z||^2/(2 beta)``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("multiplier must be nonnegative")
    hx = oracles.h_value(x)
    if not np.isfinite(hx):
        raise ValueError("query point lies outside dom(h)")
    shifted = positive_part(oracles.g_value(x) + z / beta)
    return float(oracles.f_value(x) + hx + 0.5 * beta * (shifted @ shifted) - (z @ z) / (2 * beta))


def aug_lagrangian_grad(oracles: OracleBundle, x: Array, z: Array, beta: float) -> Array:
    """Gradient of the smooth part of the augmented Lagrangian in ``x``.

    Equals ``grad f(x) + J_g(x)^T [z + beta g(x)]_+``, i.e. the gradient of the
    ordinary Lagrangian at the updated multiplier.
    """
    z_next = positive_part(z + beta * oracles.g_value(x))
    return oracles.f_grad(x) + oracles.g_jacobian(x).T @ z_next


def box_dres_element(oracles: OracleBundle, x: Array, z: Array, atol: float = 1e-12) -> Array:
    """Minimum-norm element of ``grad_x L_0(x, z) + N_box(x)``.

    Component ``i`` of ``grad f + J_g^T z`` is zeroed when it points outward
    at an active bound. Without a box, ``h`` is taken to be zero.
    """
    v = oracles.f_grad(x) + oracles.g_jacobian(x).T @ np.asarray(z, dtype=float)
    if not oracles.is_box:
        return v
    at_lower = x <= oracles.lower + atol
    at_upper = x >= oracles.upper - atol
    v = v.copy()
    v[at_lower & (v > 0)] = 0.0
    v[at_upper & (v < 0)] = 0.0
    return v


def kkt_residuals(oracles: OracleBundle, x: Array, z: Array,
                  dres_element: Optional[Array] = None) -> KktResidual:
    """Residuals of the epsilon-KKT conditions at ``(x, z)``.

    ``dres_element`` must be an element of the subdifferential of the
    ordinary Lagrangian in ``x``; when omitted, the box normal-cone
    reduction is used.
    """
    z = np.asarray(z, dtype=float)
    gx = oracles.g_value(x)
    if dres_element is None:
        dres_element = box_dres_element(oracles, x, z)
    pres = float(np.linalg.norm(positive_part(gx)))
    compl = float(np.sum(np.abs(z * gx)))
    return KktResidual(pres=pres, dres=float(np.linalg.norm(dres_element)), compl=compl)


def is_eps_kkt(res: KktResidual, eps: float) -> bool:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return res.pres <= eps and res.dres <= eps and res.compl <= eps


def check_eps_optimal(oracles: OracleBundle, x: Array, f_star: float, eps: float) -> bool:
    """Whether ``|F(x) - f_star| <= eps`` and ``||[g(x)]_+|| <= eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    gap = abs(oracles.F(x) - f_star)
    return bool(gap <= eps and np.linalg.norm(positive_part(oracles.g_value(x))) <= eps)


@dataclass
class EvalCounter:
    f_value: int = 0
    f_grad: int = 0
    g_value: int = 0
    g_jacobian: int = 0

    def total(self) -> int:
        return self.f_value + self.f_grad + self.g_value + self.g_jacobian


def counting(oracles: OracleBundle):
    """Wrap ``oracles`` so that every evaluation of f, grad f, g, J_g is counted.

    Returns ``(wrapped_bundle, counter)``.
    """
    counter = EvalCounter()

    def f_value(x):
        counter.f_value += 1
        return oracles.f_value(x)

    def f_grad(x):
        counter.f_grad += 1
        return oracles.f_grad(x)

    def g_value(x):
        counter.g_value += 1
        return oracles.g_value(x)

    def g_jacobian(x):
        counter.g_jacobian += 1
        return oracles.g_jacobian(x)

    wrapped = OracleBundle(f_value, f_grad, g_value, g_jacobian, oracles.h_value,
                           oracles.h_prox, oracles.lower, oracles.upper)
    return wrapped, counter
