"""Pricing rules, signal models, and market-state transitions.

A pricing rule bundles the price map H, the weighting w, the continuous
quadratic-variation penalty c, the jump penalty j, and the drift field g
that ties the weighting to its consistency PDE.  The catalog exposes the
standard instances by name; each carries closed forms for the hot-path
transforms so simulation does not pay quadrature costs.

State transitions implement how the market maker's signal responds to
demand: continuous moves scale by the weighting and collect a compensator
when the declared demand quadratic variation deviates from the noise clock,
and jumps displace the signal through the demand-space transform with the
jump penalty applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NonPositiveW, NotInRange, NotInvertible
from .mathcore import (
    DEFAULT_QUAD,
    Func2,
    QuadratureSpec,
    kw,
    kw_inv,
    pde_residuals,
    xi,
)


@dataclass(frozen=True)
class PricingRule:
    """A market maker's pricing scheme and its penalty structure.

    ``j`` maps (t, x_pre, dY) to the jump penalty subtracted in demand space.
    Optional ``*_cf`` fields are closed forms used instead of quadrature or
    root finding when present; all evaluators accept scalars or arrays.
    """

    name: str
    H: Func2
    w: Func2
    c: Func2
    g: Func2
    j: Callable = field(default=lambda t, x, k: 0.0 * k)
    kw_cf: Optional[Callable] = None
    kw_inv_cf: Optional[Callable] = None
    h_inv_cf: Optional[Callable] = None
    big_g_cf: Optional[Callable] = None
    psi_cf: Optional[Callable] = None
    g_inner_cf: Optional[Callable] = None
    g_inner_abs_cf: Optional[Callable] = None


@dataclass(frozen=True)
class MarketState:
    """Market-side state of one path: time, signal, total demand, QV clocks."""

    t: float = 0.0
    x: float = 0.0
    y: float = 0.0
    qv_theta_c: float = 0.0
    qv_y_c: float = 0.0


def price(rule: PricingRule, t: float, x):
    """Quoted price at signal level x."""
    return rule.H(t, x)


def step_continuous(rule: PricingRule, state: MarketState, d_yc: float,
                    qv_rate: float, dt: float,
                    qv_theta_rate: float = 0.0) -> MarketState:
    """Advance the signal over one continuous step of declared QV rates.

    ``qv_rate`` is the declared d[Y,Y]/dt of total demand over the step and
    ``qv_theta_rate`` the insider's own d[theta,theta]/dt.  The signal moves
    by the weighted demand increment plus the penalty compensator that prices
    excess quadratic variation.
    """
    w = float(rule.w(state.t, state.x))
    if w <= 0.0:
        raise NonPositiveW(f"w({state.t:g}, {state.x:g}) = {w:g} <= 0")
    comp = (0.5 * float(rule.w.d_x(state.t, state.x))
            + float(rule.c(state.t, state.x))) * w * (qv_rate - 1.0) * dt
    return MarketState(
        t=state.t + dt,
        x=state.x + w * d_yc + comp,
        y=state.y + d_yc,
        qv_theta_c=state.qv_theta_c + qv_theta_rate * dt,
        qv_y_c=state.qv_y_c + qv_rate * dt,
    )


def apply_jump(rule: PricingRule, state: MarketState, d_y: float) -> MarketState:
    """Displace the signal through a block trade of size d_y.

    The post-jump signal solves the demand-space relation: its transform
    equals the pre-jump transform plus the demand jump plus the jump penalty.
    QV accumulators are unchanged.
    """
    pen = float(rule.j(state.t, state.x, d_y))
    target = pen + kw(rule, state.t, state.x) + d_y
    x_new = kw_inv(rule, state.t, target)
    return replace(state, x=x_new, y=state.y + d_y)


# ---------------------------------------------------------------------------
# Catalog


def _identity_func2() -> Func2:
    return Func2(
        fn=lambda t, x: np.asarray(x, dtype=float) + 0.0 if np.ndim(x) else float(x),
        fn_x=lambda t, x: np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else 1.0,
        fn_t=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0,
        fn_xx=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0,
        name="x",
    )


def _attach_penalties(c0: float, j_lambda: float):
    c = Func2.const(float(c0), name=f"const({c0:g})")
    jl = float(j_lambda)
    j = lambda t, x, k: jl * k
    return c, j


def _suffix(c0: float, j_lambda: float) -> str:
    parts = []
    if c0:
        parts.append(f"c0={c0:g}")
    if j_lambda:
        parts.append(f"j={j_lambda:g}")
    return f"({', '.join(parts)})" if parts else ""


def make_back_identity(c0: float = 0.0, j_lambda: float = 0.0) -> PricingRule:
    """Flat unit weighting with the identity price map."""
    c, j = _attach_penalties(c0, j_lambda)
    return PricingRule(
        name="back-identity" + _suffix(c0, j_lambda),
        H=_identity_func2(),
        w=Func2.const(1.0, name="1"),
        c=c,
        g=Func2.const(0.0, name="0"),
        j=j,
        kw_cf=lambda t, x: x + 0.0,
        kw_inv_cf=lambda t, y: y + 0.0,
        h_inv_cf=lambda t, a: a + 0.0,
        big_g_cf=lambda t, x: 0.0 * np.asarray(x, dtype=float) if np.ndim(x) else 0.0,
        psi_cf=lambda t, x, a: 0.5 * (x - a) ** 2 + 0.5 * (1.0 - t),
        g_inner_cf=lambda t, x, a: 0.0 * np.asarray(x, dtype=float) if np.ndim(x) else 0.0,
        g_inner_abs_cf=lambda t, x, a: 0.0 * np.asarray(x, dtype=float) if np.ndim(x) else 0.0,
    )


def make_back_lognormal(c0: float = 0.0, j_lambda: float = 0.0) -> PricingRule:
    """Flat unit weighting with an exponential price map (positive prices)."""
    c, j = _attach_penalties(c0, j_lambda)
    h = lambda t, x: np.exp(x + 0.5 * (1.0 - t))

    def h_inv(t, a):
        a_arr = np.asarray(a, dtype=float)
        if np.any(a_arr <= 0.0):
            raise NotInRange("price level must be positive for this rule")
        out = np.log(a_arr) - 0.5 * (1.0 - t)
        return out if np.ndim(a) else float(out)

    def psi_cf(t, x, a):
        return h(t, x) - a * (1.0 + x - np.log(a))

    zero = lambda t, x: 0.0 * np.asarray(x, dtype=float) if np.ndim(x) else 0.0
    return PricingRule(
        name="back-lognormal" + _suffix(c0, j_lambda),
        H=Func2(fn=h, fn_x=h, fn_t=lambda t, x: -0.5 * h(t, x), fn_xx=h,
                name="exp(x + (1-t)/2)"),
        w=Func2.const(1.0, name="1"),
        c=c,
        g=Func2.const(0.0, name="0"),
        j=j,
        kw_cf=lambda t, x: x + 0.0,
        kw_inv_cf=lambda t, y: y + 0.0,
        h_inv_cf=h_inv,
        big_g_cf=zero,
        psi_cf=psi_cf,
        g_inner_cf=lambda t, x, a: zero(t, x),
        g_inner_abs_cf=lambda t, x, a: zero(t, x),
    )


def make_g_positive(c0: float = 0.0, j_lambda: float = 0.0) -> PricingRule:
    """Linearly growing weighting whose consistency PDE forces a drift field."""
    c, j = _attach_penalties(c0, j_lambda)

    def shape(t, x, v):
        return np.full_like(np.asarray(x, dtype=float), v) if np.ndim(x) else float(v)

    w = Func2(
        fn=lambda t, x: shape(t, x, 1.0 + t),
        fn_x=lambda t, x: shape(t, x, 0.0),
        fn_t=lambda t, x: shape(t, x, 1.0),
        fn_xx=lambda t, x: shape(t, x, 0.0),
        name="1 + t",
    )
    g = Func2(
        fn=lambda t, x: shape(t, x, 1.0 / (1.0 + t) ** 2),
        name="(1 + t)^-2",
    )
    return PricingRule(
        name="g-positive" + _suffix(c0, j_lambda),
        H=_identity_func2(),
        w=w,
        c=c,
        g=g,
        j=j,
        kw_cf=lambda t, x: x / (1.0 + t),
        kw_inv_cf=lambda t, y: y * (1.0 + t),
        h_inv_cf=lambda t, a: a + 0.0,
        big_g_cf=lambda t, x: x / (1.0 + t) ** 2,
        psi_cf=lambda t, x, a: 0.5 * (x - a) ** 2 / (1.0 + t)
        + 0.25 * (4.0 - (1.0 + t) ** 2),
        g_inner_cf=lambda t, x, a: 0.5 * (x - a) ** 2 / (1.0 + t) ** 2,
        g_inner_abs_cf=lambda t, x, a: 0.5 * (x - a) ** 2 / (1.0 + t) ** 2,
    )


CATALOG = {
    "back-identity": make_back_identity,
    "back-lognormal": make_back_lognormal,
    "g-positive": make_g_positive,
}


def catalog_rule(name: str, c0: float = 0.0, j_lambda: float = 0.0) -> PricingRule:
    """Build a cataloged rule by name with optional penalty attachments."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog rule {name!r}; have {sorted(CATALOG)}") from None
    return factory(c0=c0, j_lambda=j_lambda)


# ---------------------------------------------------------------------------
# Signal models


@dataclass(frozen=True)
class Law:
    """A named sampling law for the terminal signal."""

    kind: str = "normal"
    mean: float = 0.0
    std: float = 1.0

    def sample(self, gen: np.random.Generator, n: Optional[int] = None):
        if self.kind != "normal":
            raise ValueError(f"unsupported law {self.kind!r}")
        return gen.normal(self.mean, self.std, n)


@dataclass(frozen=True)
class SignalModel:
    """What the insider knows: a terminal signal and an increasing payoff map.

    Static models reveal the terminal signal at time zero; when ``z0_law``
    is set, each path draws its own terminal signal from the law instead of
    using the fixed ``z``.
    """

    z: float = 0.0
    payoff: Callable = field(default=lambda z: z + 0.0)
    payoff_name: str = "identity"
    static: bool = True
    z0_law: Optional[Law] = None

    def m_value(self, rule: PricingRule, z: Optional[float] = None) -> float:
        """Demand-space level the total demand must reach so the terminal
        price matches the payoff."""
        zv = self.z if z is None else z
        a = float(self.payoff(zv))
        return float(kw(rule, 1.0, xi(rule, 1.0, a)))

    def m_values(self, rule: PricingRule, z_arr: np.ndarray) -> np.ndarray:
        a = np.asarray(self.payoff(np.asarray(z_arr, dtype=float)), dtype=float)
        if rule.h_inv_cf is not None and rule.kw_cf is not None:
            return np.asarray(rule.kw_cf(1.0, rule.h_inv_cf(1.0, a)), dtype=float)
        return np.array([float(kw(rule, 1.0, xi(rule, 1.0, float(av)))) for av in a])

    def check_increasing(self, grid: Optional[np.ndarray] = None) -> bool:
        zs = grid if grid is not None else np.linspace(-5.0, 5.0, 41)
        vals = np.asarray(self.payoff(zs), dtype=float)
        return bool(np.all(np.diff(vals) >= 0.0))


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    rule_name: str
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def validate_rule(rule: PricingRule, window: tuple = (-4.0, 4.0),
                  times: tuple = (0.0, 0.25, 0.5, 0.75, 1.0),
                  n_grid: int = 41, pde_tol: float = 1e-6,
                  onto_probe: float = 1e3) -> ValidationReport:
    """Run the admissibility checks a rule must pass before simulation.

    Checks: finiteness of all fields on the window, strict positivity of the
    weighting, strict monotonicity of the price map, PDE residuals within
    tolerance, reachability of large demand-space targets, and a finite
    lower bound for the drift field relative to the price slope.
    """
    xs = np.linspace(window[0], window[1], n_grid)
    checks = []

    vals = {}
    finite = True
    detail = "all finite"
    try:
        for t in times:
            for fname, f in (("H", rule.H), ("w", rule.w), ("c", rule.c), ("g", rule.g)):
                v = np.asarray(f(t, xs), dtype=float)
                vals[(fname, t)] = v
                if not np.all(np.isfinite(v)):
                    finite = False
                    detail = f"{fname} not finite at t={t:g}"
    except Exception as exc:  # noqa: BLE001 - report, do not crash validation
        finite = False
        detail = f"evaluation failed: {exc}"
    checks.append(CheckResult("finite-on-window", finite, detail))

    if finite:
        wmin = min(float(vals[("w", t)].min()) for t in times)
        checks.append(CheckResult("w-positive", wmin > 0.0, f"min w = {wmin:g}"))

        mono = all(np.all(np.diff(vals[("H", t)]) > 0.0) for t in times)
        checks.append(CheckResult("H-increasing", mono,
                                  "strictly increasing on grid" if mono else
                                  "nonmonotone price map on grid"))

        try:
            r_max = 0.0
            for t in times:
                for x in xs[:: max(1, n_grid // 9)]:
                    r_w, r_h = pde_residuals(rule, float(t), float(x))
                    r_max = max(r_max, abs(r_w), abs(r_h))
            checks.append(CheckResult("pde-residuals", r_max < pde_tol,
                                      f"max residual = {r_max:.3g}"))
        except Exception as exc:  # noqa: BLE001
            checks.append(CheckResult("pde-residuals", False, f"failed: {exc}"))

        onto_ok, onto_detail = True, f"targets +-{onto_probe:g} reachable"
        try:
            for t in (times[0], times[-1]):
                kw_inv(rule, float(t), onto_probe)
                kw_inv(rule, float(t), -onto_probe)
        except Exception as exc:  # noqa: BLE001
            onto_ok, onto_detail = False, f"{type(exc).__name__}: {exc}"
        checks.append(CheckResult("kw-onto", onto_ok, onto_detail))

        try:
            g_over_hx = []
            for t in times:
                hx = np.asarray(rule.H.d_x(t, xs), dtype=float)
                g_over_hx.append(np.min(vals[("g", t)] / hx))
            gmin = float(min(g_over_hx))
            checks.append(CheckResult("g-lower-bound", math.isfinite(gmin),
                                      f"min g/H_x = {gmin:g}"))
        except Exception as exc:  # noqa: BLE001
            checks.append(CheckResult("g-lower-bound", False, f"failed: {exc}"))

    return ValidationReport(rule_name=rule.name, checks=tuple(checks))


# ---------------------------------------------------------------------------
# Identity-price reduction


def reduce_to_identity(rule: PricingRule, check_window: Optional[tuple] = None) -> PricingRule:
    """Transport a rule to one whose price map is the identity.

    The reduced rule acts on the price as its signal: its weighting is the
    original price slope times the original weighting read at the inverted
    price level, and the drift field and penalties are transported the same
    way.  Simulating the original signal and the reduced one under identical
    demand increments reproduces the same price path up to discretization.
    """

    def hinv(t, s):
        if rule.h_inv_cf is not None:
            return rule.h_inv_cf(t, s)
        if np.ndim(s):
            return np.array([_hinv_scalar(rule, t, float(v)) for v in np.asarray(s)])
        return _hinv_scalar(rule, t, float(s))

    if check_window is not None:
        for t in (0.0, 1.0):
            for s in check_window:
                hinv(t, float(s))

    def wt_fn(t, s):
        u = hinv(t, s)
        return rule.H.d_x(t, u) * rule.w(t, u)

    def wt_x(t, s):
        u = hinv(t, s)
        hx = rule.H.d_x(t, u)
        return (rule.H.d_xx(t, u) * rule.w(t, u) + hx * rule.w.d_x(t, u)) / hx

    def gt_fn(t, s):
        u = hinv(t, s)
        return rule.g(t, u) / rule.H.d_x(t, u)

    return PricingRule(
        name=f"reduced({rule.name})",
        H=_identity_func2(),
        w=Func2(fn=wt_fn, fn_x=wt_x, name=f"transported w of {rule.name}"),
        c=Func2(fn=lambda t, s: rule.c(t, hinv(t, s)), name="transported c"),
        g=Func2(fn=gt_fn, name="transported g"),
        j=lambda t, s, k: rule.j(t, hinv(t, s), k),
        h_inv_cf=lambda t, s: s + 0.0,
    )


def _hinv_scalar(rule: PricingRule, t: float, s: float) -> float:
    try:
        return xi(rule, t, s)
    except NotInRange as exc:
        raise NotInvertible(str(exc)) from exc
