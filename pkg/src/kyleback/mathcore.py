"""Numerical kernels for pricing-rule analysis.

This module implements the deterministic machinery that everything else is
built on: two-variable functions with optional closed-form partials, fixed
and adaptive Simpson quadrature, bracketed bisection, the demand-space
transform ``kw`` and its inverse, the price-map inverse ``xi``, the insider's
value potential ``psi``, consistency residuals for the price/weighting PDE
pair, and the drift-cost scan ``g_cost`` / ``g_argmin``.

Functions that take a ``rule`` accept any object exposing ``H``, ``w``, ``c``,
``j`` and ``g`` attributes (see ``kyleback.market.PricingRule``).  Rules may
carry closed forms (``kw_cf``, ``kw_inv_cf``, ``h_inv_cf``, ``big_g_cf``,
``psi_cf``, ``g_inner_cf``); when present they are used unless the caller
forces quadrature by passing an explicit ``QuadratureSpec``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    NonPositiveW,
    NotInRange,
    NotInvertible,
    NotOnto,
    QuadratureFailure,
)

# Pinned numerics. Finite-difference steps scale with |x| (absolute in t),
# root brackets grow geometrically from |x| = 1 and give up at |x| = 1e12.
QUAD_TOL = 1e-9
QUAD_MAX_DEPTH = 40
ROOT_TOL = 1e-10
BRACKET_LIMIT = 1e12
FD_STEP = 1e-5


@dataclass(frozen=True)
class Func2:
    """A function of (t, x) with optional closed-form partial derivatives.

    Evaluators must accept floats and numpy arrays interchangeably.  Missing
    partials fall back to finite differences: central in x with step
    ``FD_STEP * (1 + |x|)``, central in t with step ``FD_STEP`` except at the
    ends of the unit time interval where a one-sided difference is used.
    """

    fn: Callable
    fn_x: Optional[Callable] = None
    fn_t: Optional[Callable] = None
    fn_xx: Optional[Callable] = None
    name: str = ""

    def __call__(self, t, x):
        return self.fn(t, x)

    def d_x(self, t, x):
        if self.fn_x is not None:
            return self.fn_x(t, x)
        h = FD_STEP * (1.0 + np.abs(x))
        return (self.fn(t, x + h) - self.fn(t, x - h)) / (2.0 * h)

    def d_t(self, t, x):
        """Time partial; ``t`` must be scalar (x may be an array)."""
        if self.fn_t is not None:
            return self.fn_t(t, x)
        h = FD_STEP
        if t - h < 0.0:
            return (self.fn(t + h, x) - self.fn(t, x)) / h
        if t + h > 1.0:
            return (self.fn(t, x) - self.fn(t - h, x)) / h
        return (self.fn(t + h, x) - self.fn(t - h, x)) / (2.0 * h)

    def d_xx(self, t, x):
        if self.fn_xx is not None:
            return self.fn_xx(t, x)
        h = FD_STEP * (1.0 + np.abs(x))
        return (self.fn(t, x + h) - 2.0 * self.fn(t, x) + self.fn(t, x - h)) / (h * h)

    @staticmethod
    def const(value: float, name: str = "") -> "Func2":
        v = float(value)
        zero = lambda t, x: np.zeros_like(np.asarray(x, dtype=float)) + 0.0
        return Func2(
            fn=lambda t, x: np.full_like(np.asarray(x, dtype=float), v) if np.ndim(x) else v,
            fn_x=zero,
            fn_t=zero,
            fn_xx=zero,
            name=name or f"const({v})",
        )


@dataclass(frozen=True)
class QuadratureSpec:
    """How to integrate: 'adaptive' Simpson to a tolerance, or 'fixed' panels."""

    method: str = "adaptive"
    panels: int = 64
    tol: float = QUAD_TOL
    max_depth: int = QUAD_MAX_DEPTH


DEFAULT_QUAD = QuadratureSpec()


def _simpson_fixed(f: Callable[[float], float], a: float, b: float, panels: int) -> float:
    n = 2 * panels
    xs = np.linspace(a, b, n + 1)
    ys = np.asarray([f(float(v)) for v in xs], dtype=float)
    h = (b - a) / n
    return float(h / 3.0 * (ys[0] + ys[-1] + 4.0 * ys[1:-1:2].sum() + 2.0 * ys[2:-1:2].sum()))


def _adaptive_simpson(f, a, b, tol, max_depth):
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _adapt(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _adapt(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    err = left + right - whole
    if abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    if depth <= 0:
        raise QuadratureFailure(
            f"adaptive quadrature did not reach tol={tol:g} on [{a:g}, {b:g}]"
        )
    return _adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + _adapt(
        f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1
    )


def integrate(f: Callable[[float], float], a: float, b: float,
              quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Integrate a scalar function over [a, b] per the quadrature spec."""
    if a == b:
        return 0.0
    if b < a:
        return -integrate(f, b, a, quad)
    if quad.method == "fixed":
        return _simpson_fixed(f, a, b, quad.panels)
    if quad.method != "adaptive":
        raise ValueError(f"unknown quadrature method {quad.method!r}")
    return _adaptive_simpson(f, a, b, quad.tol, quad.max_depth)


def simpson_fixed_vec(f: Callable, a, b, panels: int = 64) -> np.ndarray:
    """Composite Simpson over per-element intervals [a_i, b_i].

    ``f`` must accept an array of abscissae and return an array of values.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = 2 * panels
    k = np.arange(n + 1, dtype=float) / n
    xs = a[None, :] + (b - a)[None, :] * k[:, None]
    ys = f(xs)
    wts = np.ones(n + 1)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    h = (b - a) / n
    return h / 3.0 * np.einsum("i,ij->j", wts, ys)


def expand_bracket(fn: Callable[[float], float], target: float,
                   limit: float = BRACKET_LIMIT):
    """Bracket a root of increasing ``fn(x) = target`` by doubling from |x|=1.

    Returns (lo, hi) with fn(lo) <= target <= fn(hi), or None when the target
    stays out of reach at |x| = limit (the function's range excludes it).
    """
    lo, hi = -1.0, 1.0
    flo, fhi = fn(lo), fn(hi)
    while flo > target:
        lo *= 2.0
        if abs(lo) > limit:
            return None
        flo = fn(lo)
        if math.isnan(flo):
            return None
    while fhi < target:
        hi *= 2.0
        if hi > limit:
            return None
        fhi = fn(hi)
        if math.isnan(fhi):
            return None
    return lo, hi


def bisect_increasing(fn: Callable[[float], float], target: float,
                      lo: float, hi: float, tol: float = ROOT_TOL) -> float:
    """Bisect an increasing function on a bracketing interval."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _space_integrand(rule, t: float):
    w = rule.w

    def f(u: float) -> float:
        wv = w(t, u)
        if wv <= 0.0:
            raise NonPositiveW(f"w({t:g}, {u:g}) = {wv:g} <= 0")
        return 1.0 / wv

    return f


def kw(rule, t: float, x: float, quad: Optional[QuadratureSpec] = None) -> float:
    """Demand-space transform of a signal level.

    Integrates the reciprocal weighting from 0 to x and adds the accumulated
    half drift of the weighting slope along x = 0.  A rule-supplied closed
    form is used unless an explicit quadrature spec forces integration.
    """
    cf = getattr(rule, "kw_cf", None)
    if cf is not None and quad is None:
        return cf(t, x)
    q = quad or DEFAULT_QUAD
    space = integrate(_space_integrand(rule, t), 0.0, x, q)
    time = 0.5 * integrate(lambda s: float(rule.w.d_x(s, 0.0)), 0.0, t, q)
    return space + time


def kw_inv(rule, t: float, y: float, quad: Optional[QuadratureSpec] = None) -> float:
    """Invert the demand-space transform at a fixed time.

    Raises NotOnto when the target is outside the transform's range within
    the bracket limit.
    """
    cf = getattr(rule, "kw_inv_cf", None)
    if cf is not None and quad is None:
        return cf(t, y)
    fn = lambda x: kw(rule, t, x, quad=quad or DEFAULT_QUAD)

    def probe(x: float) -> float:
        # Probes at extreme x may be unintegrable; that means the target is
        # not certifiably reachable, which the caller must see as NotOnto.
        try:
            return fn(x)
        except QuadratureFailure:
            return float("nan")

    bracket = expand_bracket(probe, y)
    if bracket is None:
        raise NotOnto(f"no x with kw({t:g}, x) = {y:g} within |x| <= {BRACKET_LIMIT:g}")
    return bisect_increasing(fn, y, *bracket)


def xi(rule, t: float, a: float) -> float:
    """Signal level at which the price map equals the payoff level ``a``.

    Raises NotInRange when ``a`` is outside the range of the price map.
    """
    cf = getattr(rule, "h_inv_cf", None)
    if cf is not None:
        return cf(t, a)
    fn = lambda x: float(rule.H(t, x))
    bracket = expand_bracket(fn, a)
    if bracket is None:
        raise NotInRange(f"price level {a:g} outside the range of H({t:g}, .)")
    return bisect_increasing(fn, a, *bracket)


def big_g(rule, t: float, x, quad: Optional[QuadratureSpec] = None):
    """Antiderivative in x (from 0) of the drift field g."""
    cf = getattr(rule, "big_g_cf", None)
    if cf is not None and quad is None:
        return cf(t, x)
    q = quad or DEFAULT_QUAD
    if np.ndim(x):
        return np.array([integrate(lambda u: float(rule.g(t, u)), 0.0, float(v), q)
                         for v in np.asarray(x, dtype=float)])
    return integrate(lambda u: float(rule.g(t, u)), 0.0, float(x), q)


def kw_dt(rule, t: float, x):
    """Time derivative of the transform at fixed x.

    Valid for rules whose weighting satisfies its drift-consistency PDE, in
    which case the derivative collapses to ``w_x(t,x)/2 - G(t,x)``.
    """
    return 0.5 * rule.w.d_x(t, x) - big_g(rule, t, x)


def psi(rule, t: float, x: float, a: float,
        quad: Optional[QuadratureSpec] = None) -> float:
    """Insider value potential at signal level x, payoff level a.

    Sum of the price-gap integral from the break-even signal level to x and
    the accumulated half product of price slope and weighting along the
    break-even curve over the remaining horizon.  Nonnegative for admissible
    rules.
    """
    cf = getattr(rule, "psi_cf", None)
    if cf is not None and quad is None:
        return cf(t, x, a)
    q = quad or DEFAULT_QUAD
    xi_t = xi(rule, t, a)
    winv = _space_integrand(rule, t)

    def gap(u: float) -> float:
        return (float(rule.H(t, u)) - a) * winv(u)

    term1 = integrate(gap, xi_t, x, q)
    if t >= 1.0:
        return term1

    def rim(s: float) -> float:
        xs = xi(rule, s, a)
        return float(rule.H.d_x(s, xs)) * float(rule.w(s, xs))

    term2 = 0.5 * integrate(rim, t, 1.0, q)
    return term1 + term2


def psi_vec(rule, t: float, x, a) -> np.ndarray:
    """Vectorized value potential; falls back to a scalar loop.

    Elements whose payoff level is outside the price map's range come back
    as nan rather than raising, so batch callers can flag them per path.
    """
    x = np.asarray(x, dtype=float)
    a = np.broadcast_to(np.asarray(a, dtype=float), x.shape)
    cf = getattr(rule, "psi_cf", None)
    if cf is not None:
        return np.asarray(cf(t, x, a), dtype=float)
    out = np.empty(x.shape)
    for i, (xv, av) in enumerate(zip(x, a)):
        try:
            out[i] = psi(rule, t, float(xv), float(av))
        except NotInRange:
            out[i] = np.nan
    return out


def pde_residuals(rule, t: float, x: float) -> tuple:
    """Residuals of the weighting-drift PDE and the price-map heat PDE."""
    w = float(rule.w(t, x))
    r_w = float(rule.w.d_t(t, x)) + 0.5 * w * w * float(rule.w.d_xx(t, x)) \
        - w * w * float(rule.g(t, x))
    r_h = float(rule.H.d_t(t, x)) + 0.5 * w * w * float(rule.H.d_xx(t, x))
    return r_w, r_h


def g_cost(rule, t: float, x: float, a: float,
           quad: Optional[QuadratureSpec] = None) -> tuple:
    """Drift cost of holding the signal at x: signed and absolute variants.

    Returns the integral of (H - a) * g and of (H - a) * |g| from the
    break-even signal level to x.  The absolute variant is the running cost
    magnitude; the signed variant is the term that enters the wealth
    decomposition.
    """
    cf = getattr(rule, "g_inner_cf", None)
    if cf is not None and quad is None:
        signed = cf(t, x, a)
        cfa = getattr(rule, "g_inner_abs_cf", None)
        if cfa is not None:
            return signed, cfa(t, x, a)
    q = quad or DEFAULT_QUAD
    xi_t = xi(rule, t, a)

    def signed_int(u: float) -> float:
        return (float(rule.H(t, u)) - a) * float(rule.g(t, u))

    def abs_int(u: float) -> float:
        return (float(rule.H(t, u)) - a) * abs(float(rule.g(t, u)))

    return integrate(signed_int, xi_t, x, q), integrate(abs_int, xi_t, x, q)


def golden_section(f: Callable[[float], float], a: float, b: float,
                   tol: float = 1e-10, max_iter: int = 200) -> float:
    """Golden-section minimizer on [a, b] for a unimodal objective."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = a, b
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def g_argmin(rule, t: float, a: float, window: tuple, grid_n: int = 65,
             quad: Optional[QuadratureSpec] = None) -> float:
    """Signal level minimizing the signed drift cost on a window.

    Grid scan followed by golden-section refinement inside the winning cell;
    exact ties break toward the smallest x.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError("window must satisfy lo < hi")
    xs = np.linspace(lo, hi, grid_n)
    obj = lambda v: g_cost(rule, t, float(v), a, quad=quad)[0]
    vals = np.array([obj(v) for v in xs])
    k = int(np.argmin(vals))
    cell_lo = xs[max(0, k - 1)]
    cell_hi = xs[min(grid_n - 1, k + 1)]
    xg = golden_section(obj, float(cell_lo), float(cell_hi))
    fg, fk = obj(xg), float(vals[k])
    if fg < fk:
        return xg
    if fg > fk:
        return float(xs[k])
    return min(xg, float(xs[k]))
