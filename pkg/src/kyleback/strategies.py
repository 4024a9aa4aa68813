"""Insider strategy library.

Each strategy turns the insider's observables into a per-step decision:
a drift (the dt-coefficient of the insider's holdings), a Brownian loading
(the dB-coefficient), and occasional block trades at grid nodes.

Two layers are provided.  The scalar functions ``*_decide`` express one
decision from one ``Observation``; they are the reference semantics.  The
``Vec*`` classes hold per-path state for a whole block of paths and are what
the engine drives; both layers share the same formulas.

Barrier-style strategies steer a controlled coordinate U inside (-delta,
delta) with a two-sided reciprocal drift.  Explicit stepping of that drift is
stable only when steps cannot cross the boundary layer, so configuration
validation enforces dt <= delta^2 / 100 and the engine retries a step with a
finer grid when a boundary is still breached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import mathcore as mc
from .errors import SchemaError
from .market import PricingRule

# Barrier drifts are capped so a step taken exactly at a wall stays finite;
# the cap only binds within 1e-6 of the wall.
REP_CAP = 1e6
# Ramp targets arrive this fraction of the way into their window.
ARRIVE_FRACTION = 0.9
# After a block trade, the re-centering ramp spans this fraction of the
# inter-jump gap.
RECENTER_FRACTION = 0.4


@dataclass(frozen=True)
class Observation:
    """What the insider sees at a decision node.

    ``b`` is the cumulative noise trade, recoverable from the insider's own
    filtration; ``y - b`` equals the insider's cumulative holdings.  ``m`` is
    the demand-space level the total demand must reach at the horizon and
    ``z`` the terminal signal.  ``dt`` is the grid step, needed to recognize
    the final decision node and jump nodes.
    """

    t: float
    x: float
    y: float
    b: float = 0.0
    m: float = 0.0
    z: float = 0.0
    dt: float = 0.0


@dataclass(frozen=True)
class StrategyDecision:
    drift: float
    brown_load: float = 0.0
    jump: Optional[float] = None

    @property
    def qv_rate(self) -> float:
        return (1.0 + self.brown_load) ** 2


@dataclass(frozen=True)
class StrategyConfig:
    """Parameters for one strategy kind; unused fields are ignored.

    kinds: zero, bridge, tracker, exploit_c, exploit_j, scripted.
    """

    kind: str
    band_n: float = 10.0
    target: float = 0.0
    delta: float = 0.1
    t1: float = 0.25
    t2: float = 0.75
    x1: float = 0.0
    x2: float = 1.0
    b: float = 0.0
    n_jumps: int = 4
    kappa1: float = 1.0
    theta0: float = 0.0
    s_drift: float = 0.0
    s_load: float = 0.0
    s_jumps: tuple = ()


KINDS = ("zero", "bridge", "tracker", "exploit_c", "exploit_j", "scripted")


def repulsion(u, delta: float):
    """Two-sided barrier drift keeping u inside (-delta, delta).

    Reciprocal of the distance to the nearer wall, pushing inward: positive
    for u <= 0, negative for u > 0.  Distances are floored at 1/REP_CAP so
    the value stays finite and inward-pointing even past a wall.
    """
    u_arr = np.asarray(u, dtype=float)
    out = np.where(
        u_arr > 0.0,
        -1.0 / np.maximum(delta - u_arr, 1.0 / REP_CAP),
        1.0 / np.maximum(u_arr + delta, 1.0 / REP_CAP),
    )
    return out if out.ndim else float(out)


def band_repulsion(r, y1: float, ymid: float, y2: float):
    """One-sided reciprocal drift toward the interior of (y1, y2).

    Below the split level the push is away from y1, above it away from y2.
    """
    r_arr = np.asarray(r, dtype=float)
    out = np.where(
        r_arr > ymid,
        -1.0 / np.maximum(y2 - r_arr, 1.0 / REP_CAP),
        1.0 / np.maximum(r_arr - y1, 1.0 / REP_CAP),
    )
    return out if out.ndim else float(out)


def grid_node(time: float, dt: float) -> int:
    """Nearest grid node to a time, rounding half-interval ties upward."""
    return int(math.floor(time / dt + 0.5))


def _kw_arr(rule: PricingRule, t: float, x: np.ndarray) -> np.ndarray:
    if rule.kw_cf is not None:
        return np.asarray(rule.kw_cf(t, x), dtype=float)
    return np.array([mc.kw(rule, t, float(v)) for v in np.asarray(x, dtype=float)])


def _big_g_arr(rule: PricingRule, t: float, x: np.ndarray) -> np.ndarray:
    return np.asarray(mc.big_g(rule, t, x), dtype=float)


def _kw_dt_arr(rule: PricingRule, t: float, x: np.ndarray) -> np.ndarray:
    return 0.5 * np.asarray(rule.w.d_x(t, x), dtype=float) - _big_g_arr(rule, t, x)


# ---------------------------------------------------------------------------
# Scalar reference decisions


def zero_decide(obs: Observation) -> StrategyDecision:
    return StrategyDecision(drift=0.0, brown_load=0.0, jump=None)


def bridge_decide(obs: Observation, band_n: float,
                  exit_state: Optional[tuple] = None,
                  rule: Optional[PricingRule] = None) -> StrategyDecision:
    """Steer total demand to the terminal level m; divert on band exit.

    Before the demand leaves (-band_n, band_n) the drift is (m - y)/(1 - t).
    ``exit_state = (tau, k_tau)`` marks a past exit: thereafter the decision
    is a transform-space tracker toward the line k_tau (1 - t)/(1 - tau)
    with unit barrier width.  On the final node (t >= 1 - dt) the unexited
    bridge closes the gap exactly, cancelling its own noise exposure.
    """
    if exit_state is not None:
        tau, k_tau = exit_state
        tgt = _LinearPath(k_tau / (1.0 - tau) if tau < 1.0 else 0.0, tau)
        return _track_k(rule, obs.t, obs.x, tgt, delta=1.0)
    if obs.dt > 0.0 and obs.t >= 1.0 - obs.dt - 1e-12:
        return StrategyDecision(drift=(obs.m - obs.y) / (1.0 - obs.t), brown_load=-1.0)
    return StrategyDecision(drift=(obs.m - obs.y) / (1.0 - obs.t), brown_load=0.0)


@dataclass(frozen=True)
class _LinearPath:
    # k(t) = level * (1 - t), anchored at time t0 (collapsing line).
    level: float
    t0: float

    def value(self, t: float) -> float:
        return self.level * (1.0 - t)

    def slope(self, t: float) -> float:
        return -self.level


def _track_k(rule: PricingRule, t: float, x: float, target: _LinearPath,
             delta: float) -> StrategyDecision:
    u = mc.kw(rule, t, x) - target.value(t)
    drift = float(mc.big_g(rule, t, x)) + repulsion(u, delta) + target.slope(t)
    return StrategyDecision(drift=drift, brown_load=0.0)


def tracker_decide(obs: Observation, target, delta: float,
                   rule: PricingRule) -> StrategyDecision:
    """Hold the signal near a target path within a transform-space barrier.

    ``target`` is a signal-space path (an object with value(t), slope(t)) or
    a constant level.  The drift compensates the signal's own pull (G), the
    target's transform-space velocity, and adds the barrier push on
    U = K_w(t, X) - K_w(t, target(t)).
    """
    if hasattr(target, "value"):
        xv, sv = float(target.value(obs.t)), float(target.slope(obs.t))
    else:
        xv, sv = float(target), 0.0
    u = mc.kw(rule, obs.t, obs.x) - mc.kw(rule, obs.t, xv)
    drift = (float(mc.big_g(rule, obs.t, obs.x)) + repulsion(u, delta)
             + float(mc.kw_dt(rule, obs.t, xv)) + sv / float(rule.w(obs.t, xv)))
    return StrategyDecision(drift=drift, brown_load=0.0)


def exploit_c_decide(obs: Observation, cfg: StrategyConfig, rule: PricingRule,
                     hold_x: Optional[float] = None) -> StrategyDecision:
    """Pump declared quadratic variation through a mispriced c-penalty.

    Stage 1 tracks a ramp to the window midpoint.  Stage 2 loads the
    insider's Brownian coefficient with b and drives the transform R =
    K_w(t, X) with the banded reciprocal drift scaled by (1+b)^2, so R stays
    in (y1, y2); the market's compensator then pays the c-term.  Stage 3
    holds the signal where stage 2 left it.
    """
    xbar = 0.5 * (cfg.x1 + cfg.x2)
    if obs.t < cfg.t1:
        ramp = _RampPath(0.0, xbar, 0.0, ARRIVE_FRACTION * cfg.t1)
        return tracker_decide(obs, ramp, _stage1_delta(cfg, rule), rule)
    if obs.t <= cfg.t2:
        y1 = float(mc.kw(rule, cfg.t1, cfg.x1))
        y2 = float(mc.kw(rule, cfg.t1, cfg.x2))
        r = float(mc.kw(rule, obs.t, obs.x))
        drift = ((1.0 + cfg.b) ** 2 * band_repulsion(r, y1, 0.5 * (y1 + y2), y2)
                 + float(mc.big_g(rule, obs.t, obs.x)))
        return StrategyDecision(drift=drift, brown_load=cfg.b)
    return tracker_decide(obs, obs.x if hold_x is None else hold_x, 1.0, rule)


def _stage1_delta(cfg: StrategyConfig, rule: PricingRule) -> float:
    xbar = 0.5 * (cfg.x1 + cfg.x2)
    y1 = float(mc.kw(rule, cfg.t1, cfg.x1))
    y2 = float(mc.kw(rule, cfg.t1, cfg.x2))
    yc = float(mc.kw(rule, cfg.t1, xbar))
    return 0.5 * min(yc - y1, y2 - yc)


@dataclass(frozen=True)
class _RampPath:
    # Linear in signal space from x0 at t0 to x1 at t1, constant afterwards.
    x0: float
    x1: float
    t0: float
    t1: float

    def value(self, t: float) -> float:
        if self.t1 <= self.t0:
            return self.x1
        r = min(max((t - self.t0) / (self.t1 - self.t0), 0.0), 1.0)
        return self.x0 + (self.x1 - self.x0) * r

    def slope(self, t: float) -> float:
        if self.t0 <= t < self.t1:
            return (self.x1 - self.x0) / (self.t1 - self.t0)
        return 0.0


def jump_times(cfg: StrategyConfig) -> np.ndarray:
    """Block-trade schedule: n equally spaced times from t1, none at t2."""
    i = np.arange(cfg.n_jumps, dtype=float)
    return cfg.t1 + i * (cfg.t2 - cfg.t1) / cfg.n_jumps


def exploit_j_decide(obs: Observation, cfg: StrategyConfig,
                     rule: Optional[PricingRule] = None) -> StrategyDecision:
    """Pump block trades through a mispriced jump penalty.

    Emits a jump of kappa1 at each scheduled node; between jumps tracks the
    window midpoint, and after t2 holds.
    """
    jump = None
    if obs.dt > 0.0:
        for s in jump_times(cfg):
            if abs(obs.t - s) <= 0.5 * obs.dt:
                jump = cfg.kappa1
                break
    base = tracker_decide(obs, 0.5 * (cfg.x1 + cfg.x2), cfg.delta, rule) \
        if rule is not None else StrategyDecision(drift=0.0)
    return replace(base, jump=jump)


# ---------------------------------------------------------------------------
# Vectorized strategies (engine-facing)


class VecStrategy:
    """Per-path state for a block of paths plus vectorized decisions.

    Lifecycle: ``begin`` once per block; per node the engine asks
    ``jump_size`` (node-head block trade, common size), calls ``notify_jump``
    after applying it, then ``decide`` for drift/load arrays; ``boundary_gap``
    reports distance to the nearest barrier (None when the strategy has no
    barrier) so the engine can retry breached steps on a finer grid.
    """

    theta0 = 0.0
    name = "base"

    def begin(self, rule: PricingRule, n: int, z: np.ndarray, m: np.ndarray,
              dt: float, n_steps: int) -> None:
        self.rule = rule
        self.n = n
        self.z = z
        self.m = m
        self.dt = dt
        self.n_steps = n_steps

    def jump_size(self, k: int, t: float) -> float:
        return 0.0

    def notify_jump(self, t: float, x_post: np.ndarray, active: np.ndarray) -> None:
        pass

    def decide(self, k: int, t: float, x: np.ndarray, y: np.ndarray,
               active: np.ndarray):
        raise NotImplementedError

    def boundary_gap(self, t: float, x: np.ndarray) -> Optional[np.ndarray]:
        return None

    def mutable_state(self) -> list:
        """Per-path arrays the engine snapshots around step retries."""
        return []


class VecZero(VecStrategy):
    name = "zero"

    def decide(self, k, t, x, y, active):
        zeros = np.zeros(self.n)
        return zeros, zeros


class VecScripted(VecStrategy):
    """Deterministic schedule: constant drift and loading plus listed jumps."""

    name = "scripted"

    def __init__(self, cfg: StrategyConfig):
        self.cfg = cfg
        self.theta0 = cfg.theta0

    def begin(self, rule, n, z, m, dt, n_steps):
        super().begin(rule, n, z, m, dt, n_steps)
        self._jumps = {}
        for tj, size in self.cfg.s_jumps:
            node = grid_node(tj, dt)
            if node >= n_steps:
                raise SchemaError(
                    f"scripted jump at {tj:g} falls on the terminal node")
            self._jumps[node] = float(size)

    def jump_size(self, k, t):
        return self._jumps.get(k, 0.0)

    def decide(self, k, t, x, y, active):
        return (np.full(self.n, self.cfg.s_drift),
                np.full(self.n, self.cfg.s_load))


class VecBridge(VecStrategy):
    """Demand bridge with band diversion and an exact terminal close.

    While |Y| stays inside the band the drift is (m - y)/(1 - t); the final
    decision node closes Y to m exactly with loading -1.  On first exit the
    path switches permanently to a transform-space tracker toward the
    collapsing line K_tau (1 - t)/(1 - tau) with unit barrier width.
    """

    name = "bridge"

    def __init__(self, cfg: StrategyConfig):
        self.band_n = float(cfg.band_n)

    def begin(self, rule, n, z, m, dt, n_steps):
        super().begin(rule, n, z, m, dt, n_steps)
        self.exited = np.zeros(n, dtype=bool)
        self.level = np.zeros(n)  # k_tau / (1 - tau) per exited path

    def decide(self, k, t, x, y, active):
        newly = active & ~self.exited & (np.abs(y) >= self.band_n)
        if newly.any() and t < 1.0:
            k_tau = _kw_arr(self.rule, t, x[newly])
            self.level[newly] = k_tau / (1.0 - t)
            self.exited |= newly
        one_minus_t = 1.0 - t
        drift = (self.m - y) / one_minus_t
        load = np.zeros(self.n)
        if k == self.n_steps - 1:
            load[:] = -1.0
        if self.exited.any():
            e = self.exited
            target_k = self.level[e] * one_minus_t
            u = _kw_arr(self.rule, t, x[e]) - target_k
            drift_e = (_big_g_arr(self.rule, t, x[e]) + repulsion(u, 1.0)
                       - self.level[e])
            drift[e] = drift_e
            load[e] = 0.0
        return drift, load

    def boundary_gap(self, t, x):
        if not self.exited.any():
            return None
        gap = np.full(self.n, np.inf)
        e = self.exited
        u = _kw_arr(self.rule, t, x[e]) - self.level[e] * (1.0 - t)
        gap[e] = 1.0 - np.abs(u)
        return gap

    def mutable_state(self):
        return [self.exited, self.level]


class _VecTrackerCore(VecStrategy):
    """Per-path ramp targets with a transform-space barrier.

    Targets are piecewise linear: from (t0, x0) to (t1, x1) and constant
    afterwards, either in signal space ("x") or directly in transform space
    ("k").  Subclasses re-point the arrays.
    """

    def begin(self, rule, n, z, m, dt, n_steps):
        super().begin(rule, n, z, m, dt, n_steps)
        self.tg_x0 = np.zeros(n)
        self.tg_x1 = np.zeros(n)
        self.tg_t0 = np.zeros(n)
        self.tg_t1 = np.full(n, 1.0)

    def _target(self, t: float):
        span = np.maximum(self.tg_t1 - self.tg_t0, 1e-300)
        r = np.clip((t - self.tg_t0) / span, 0.0, 1.0)
        val = self.tg_x0 + (self.tg_x1 - self.tg_x0) * r
        slope = np.where((self.tg_t0 <= t) & (t < self.tg_t1),
                         (self.tg_x1 - self.tg_x0) / span, 0.0)
        return val, slope

    def _u(self, t: float, x: np.ndarray, val: np.ndarray) -> np.ndarray:
        return _kw_arr(self.rule, t, x) - _kw_arr(self.rule, t, val)

    def _tracker_decision(self, t, x, delta: float):
        val, slope = self._target(t)
        u = self._u(t, x, val)
        w_at = np.asarray(self.rule.w(t, val), dtype=float)
        drift = (_big_g_arr(self.rule, t, x) + repulsion(u, delta)
                 + _kw_dt_arr(self.rule, t, val) + slope / w_at)
        return drift, u

    def mutable_state(self):
        return [self.tg_x0, self.tg_x1, self.tg_t0, self.tg_t1]


class VecTracker(_VecTrackerCore):
    """Hold the signal at a constant target level."""

    name = "tracker"

    def __init__(self, cfg: StrategyConfig):
        self.cfg = cfg
        self.delta = float(cfg.delta)

    def begin(self, rule, n, z, m, dt, n_steps):
        super().begin(rule, n, z, m, dt, n_steps)
        self.tg_x0[:] = self.cfg.target
        self.tg_x1[:] = self.cfg.target
        u0 = float(mc.kw(rule, 0.0, 0.0) - mc.kw(rule, 0.0, self.cfg.target))
        if abs(u0) >= self.delta:
            raise SchemaError(
                f"tracker target {self.cfg.target:g} starts {abs(u0):g} away "
                f"in transform space, outside the barrier width {self.delta:g}")

    def decide(self, k, t, x, y, active):
        drift, _ = self._tracker_decision(t, x, self.delta)
        return drift, np.zeros(self.n)

    def boundary_gap(self, t, x):
        val, _ = self._target(t)
        return self.delta - np.abs(self._u(t, x, val))


class VecExploitC(_VecTrackerCore):
    """Three-stage quadratic-variation pump (see exploit_c_decide)."""

    name = "exploit_c"

    def __init__(self, cfg: StrategyConfig):
        self.cfg = cfg

    def begin(self, rule, n, z, m, dt, n_steps):
        super().begin(rule, n, z, m, dt, n_steps)
        cfg = self.cfg
        self.xbar = 0.5 * (cfg.x1 + cfg.x2)
        self.y1 = float(mc.kw(rule, cfg.t1, cfg.x1))
        self.y2 = float(mc.kw(rule, cfg.t1, cfg.x2))
        self.ymid = 0.5 * (self.y1 + self.y2)
        self.delta1 = _stage1_delta(cfg, rule)
        self.tg_x1[:] = self.xbar
        self.tg_t1[:] = ARRIVE_FRACTION * cfg.t1
        self.hold = np.full(n, np.nan)

    def decide(self, k, t, x, y, active):
        cfg = self.cfg
        if t < cfg.t1:
            drift, _ = self._tracker_decision(t, x, self.delta1)
            return drift, np.zeros(self.n)
        if t <= cfg.t2:
            r = _kw_arr(self.rule, t, x)
            drift = ((1.0 + cfg.b) ** 2
                     * band_repulsion(r, self.y1, self.ymid, self.y2)
                     + _big_g_arr(self.rule, t, x))
            return drift, np.full(self.n, cfg.b)
        fresh = np.isnan(self.hold) & active
        if fresh.any():
            self.hold[fresh] = x[fresh]
            self.tg_x0[fresh] = x[fresh]
            self.tg_x1[fresh] = x[fresh]
            self.tg_t0[fresh] = t
            self.tg_t1[fresh] = t
        drift, _ = self._tracker_decision(t, x, 1.0)
        return drift, np.zeros(self.n)

    def boundary_gap(self, t, x):
        cfg = self.cfg
        if t < cfg.t1:
            val, _ = self._target(t)
            return self.delta1 - np.abs(self._u(t, x, val))
        if t <= cfg.t2:
            r = _kw_arr(self.rule, t, x)
            return np.minimum(r - self.y1, self.y2 - r)
        val, _ = self._target(t)
        gap = 1.0 - np.abs(self._u(t, x, val))
        # Paths that have not latched a hold target yet carry no barrier.
        return np.where(np.isnan(self.hold), np.inf, gap)

    def mutable_state(self):
        return super().mutable_state() + [self.hold]


class VecExploitJ(_VecTrackerCore):
    """Scheduled block trades with re-centering ramps between them."""

    name = "exploit_j"

    def __init__(self, cfg: StrategyConfig):
        self.cfg = cfg
        self.delta = float(cfg.delta)

    def begin(self, rule, n, z, m, dt, n_steps):
        super().begin(rule, n, z, m, dt, n_steps)
        cfg = self.cfg
        self.xbar = 0.5 * (cfg.x1 + cfg.x2)
        self.tg_x1[:] = self.xbar
        self.tg_t1[:] = ARRIVE_FRACTION * cfg.t1
        gap = (cfg.t2 - cfg.t1) / cfg.n_jumps
        self.recenter = RECENTER_FRACTION * gap
        self._jump_nodes = {grid_node(s, dt): cfg.kappa1
                            for s in jump_times(cfg)}

    def jump_size(self, k, t):
        return self._jump_nodes.get(k, 0.0)

    def notify_jump(self, t, x_post, active):
        self.tg_x0[active] = x_post[active]
        self.tg_x1[active] = self.xbar
        self.tg_t0[active] = t
        self.tg_t1[active] = t + self.recenter

    def decide(self, k, t, x, y, active):
        drift, _ = self._tracker_decision(t, x, self.delta)
        return drift, np.zeros(self.n)

    def boundary_gap(self, t, x):
        val, _ = self._target(t)
        return self.delta - np.abs(self._u(t, x, val))


def make_strategy(cfg: StrategyConfig, rule: PricingRule, dt: float) -> VecStrategy:
    """Build a vectorized strategy, enforcing stiffness guards against dt."""
    if cfg.kind not in KINDS:
        raise SchemaError(f"unknown strategy kind {cfg.kind!r}; have {KINDS}")
    if cfg.kind == "zero":
        return VecZero()
    if cfg.kind == "scripted":
        for tj, _ in cfg.s_jumps:
            if not 0.0 <= tj < 1.0:
                raise SchemaError(f"scripted jump time {tj:g} outside [0, 1)")
        return VecScripted(cfg)
    if cfg.kind == "bridge":
        if cfg.band_n <= 0.0:
            raise SchemaError("band_n must be positive")
        _require_dt(dt, 1.0, "bridge diversion tracker")
        return VecBridge(cfg)
    if cfg.kind == "tracker":
        if cfg.delta <= 0.0:
            raise SchemaError("delta must be positive")
        _require_dt(dt, cfg.delta, "tracker")
        return VecTracker(cfg)
    if not 0.0 < cfg.t1 < cfg.t2 < 1.0:
        raise SchemaError("windows must satisfy 0 < t1 < t2 < 1")
    if not cfg.x1 < cfg.x2:
        raise SchemaError("window levels must satisfy x1 < x2")
    if cfg.kind == "exploit_c":
        d1 = _stage1_delta(cfg, rule)
        _require_dt(dt, d1, "exploit_c stage 1")
        half_band = 0.5 * (float(mc.kw(rule, cfg.t1, cfg.x2))
                           - float(mc.kw(rule, cfg.t1, cfg.x1)))
        _require_dt(dt, half_band / (1.0 + cfg.b), "exploit_c stage 2")
        return VecExploitC(cfg)
    if cfg.n_jumps < 1:
        raise SchemaError("n_jumps must be at least 1")
    if cfg.delta <= 0.0:
        raise SchemaError("delta must be positive")
    _require_dt(dt, cfg.delta, "exploit_j tracker")
    gap = (cfg.t2 - cfg.t1) / cfg.n_jumps
    if gap < 2.0 * dt:
        raise SchemaError(
            f"jump spacing {gap:g} needs at least two grid steps at dt={dt:g}")
    if RECENTER_FRACTION * gap < 4.0 * dt:
        raise SchemaError(
            f"re-centering window {RECENTER_FRACTION * gap:g} needs at least "
            f"four grid steps at dt={dt:g}")
    return VecExploitJ(cfg)


def _require_dt(dt: float, delta: float, label: str) -> None:
    bound = delta * delta / 100.0
    if dt > bound + 1e-15:
        raise SchemaError(
            f"{label}: dt={dt:g} exceeds the stiffness guard {bound:g} "
            f"(delta={delta:g})")
