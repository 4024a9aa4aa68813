"""Path simulator and wealth accounting.

Paths live on a uniform grid of n_steps = 1/dt intervals over [0, 1].  Node k
carries time t_k = k dt; decisions happen at nodes 0..n_steps-1 and the state
at the final node is the left limit at time one.  At each decision node the
engine applies any declared block trade first (displacing the signal through
the demand-space transform with its penalty), then takes one Euler step of
the continuous dynamics with the declared quadratic-variation rates.

Wealth is accounted three ways per path and cross-checked by tests: the
direct left-point sum of holdings against price moves, the
integration-by-parts form, and the value-potential decomposition whose six
terms the engine accumulates on the fly.

Randomness: path i draws from a counter-based stream keyed by (seed, i), so
results are independent of worker count and path batching.  Increments are
pre-drawn in fixed-size chunks to keep the stream layout stable.  A step that
lands outside a strategy's barrier is retried on a 2^L-times finer grid
(L <= 10) with Brownian-bridge refinements of the same increment, drawn from
a separate per-path stream so main-stream draws never depend on retries.
Paths that still breach, or that produce non-finite state, are excluded and
counted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import mathcore as mc
from .errors import NotInRange, PathDiverged, SchemaError
from .market import PricingRule, SignalModel
from .strategies import (StrategyConfig, VecBridge, VecStrategy, grid_node,
                         make_strategy)

BLOCK_SIZE = 4096
CHUNK_STEPS = 512
MAX_RETRY_LEVELS = 10
DIVERGE_LIMIT = 1e12
RETRY_KEY_OFFSET = 2 ** 63
G_PANELS = 16


@dataclass(frozen=True)
class SimConfig:
    """One simulation setup: rule, signal, strategy, grid, master seed."""

    rule: PricingRule
    signal: SignalModel
    strategy: StrategyConfig
    dt: float
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise SchemaError("dt must be positive")
        n = round(1.0 / self.dt)
        if n < 2 or abs(n * self.dt - 1.0) > 1e-9:
            raise SchemaError(f"1/dt must be an integer >= 2, got dt={self.dt!r}")
        if not 0 <= int(self.seed) < 2 ** 63:
            raise SchemaError("seed must be a non-negative integer below 2**63")

    @property
    def n_steps(self) -> int:
        return round(1.0 / self.dt)


@dataclass(frozen=True)
class JumpEvent:
    """One block trade: node index, time, and the displacements it caused."""

    node: int
    time: float
    d_theta: float
    d_y: float
    d_x: float
    d_s: float


@dataclass(frozen=True)
class PathRecord:
    """Full history of one path.

    Node arrays hold left limits: the state carried INTO each node, before
    any block trade at that node.  Jump events carry the within-node
    displacements.  The final node is the left limit at time one.
    """

    t: np.ndarray
    b: np.ndarray
    y: np.ndarray
    x: np.ndarray
    s: np.ndarray
    theta: np.ndarray
    qv_theta_c: np.ndarray
    qv_y_c: np.ndarray
    jumps: tuple
    z: float
    f_z: float
    m: float
    path_index: int

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def terminal(self) -> tuple:
        """(price, holdings, signal) left limits at time one, and f(Z)."""
        return float(self.s[-1]), float(self.theta[-1]), float(self.x[-1]), self.f_z


@dataclass(frozen=True)
class WealthBreakdown:
    """Terms of the value-potential wealth identity.

    ``endowment`` marks the initial position to the payoff; the potential
    terms account only for trading after time zero.
    """

    psi0: float
    psi1: float
    qv_term: float
    c_term: float
    g_term: float
    jump_sum: float
    endowment: float = 0.0

    @property
    def total(self) -> float:
        return (self.psi0 - self.psi1 + self.qv_term + self.c_term
                - self.g_term + self.jump_sum + self.endowment)


@dataclass
class BlockResult:
    """Per-path aggregates for a contiguous block of path indices."""

    path_start: int
    n_paths: int
    z: np.ndarray
    f_z: np.ndarray
    direct: np.ndarray
    ibp: np.ndarray
    psi0: np.ndarray
    psi1: np.ndarray
    qv_term: np.ndarray
    c_term: np.ndarray
    g_term: np.ndarray
    jump_sum: np.ndarray
    endowment: np.ndarray
    bmart: np.ndarray
    hsq: np.ndarray
    diverged: np.ndarray
    breach_failed: np.ndarray
    retried_steps: int
    y_snap: Optional[np.ndarray] = None
    x_snap: Optional[np.ndarray] = None

    @property
    def excluded(self) -> np.ndarray:
        return self.diverged | self.breach_failed

    @property
    def total(self) -> np.ndarray:
        return (self.psi0 - self.psi1 + self.qv_term + self.c_term
                - self.g_term + self.jump_sum + self.endowment)


def _path_generator(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _retry_generator(seed: int, index: int) -> np.random.Generator:
    key = np.array([int(seed), int(index) + RETRY_KEY_OFFSET], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _h_arr(rule: PricingRule, t: float, x: np.ndarray) -> np.ndarray:
    return np.asarray(rule.H(t, x), dtype=float)


def _kw_arr(rule: PricingRule, t: float, x: np.ndarray) -> np.ndarray:
    if rule.kw_cf is not None:
        return np.asarray(rule.kw_cf(t, x), dtype=float)
    return np.array([mc.kw(rule, t, float(v)) for v in x])


def _kw_inv_arr(rule: PricingRule, t: float, target: np.ndarray) -> np.ndarray:
    if rule.kw_inv_cf is not None:
        return np.asarray(rule.kw_inv_cf(t, target), dtype=float)
    return np.array([mc.kw_inv(rule, t, float(v)) for v in target])


def _make_g_inner(rule: PricingRule):
    """Vectorized signed drift-cost integrand, nan where undefined."""
    if rule.g_inner_cf is not None:
        return lambda t, x, a: np.asarray(rule.g_inner_cf(t, x, a), dtype=float)
    # The zero shortcut must not be fooled by isolated roots of g.
    probe = np.abs([float(rule.g(tt, xx))
                    for tt in (0.0, 0.31, 0.5, 0.73, 1.0)
                    for xx in (-2.83, -1.57, -0.9, -0.27, 0.0, 0.41, 1.03, 2.19)])
    if probe.max() == 0.0:
        return lambda t, x, a: np.zeros_like(np.asarray(x, dtype=float))

    def inner(t, x, a):
        x = np.asarray(x, dtype=float)
        a = np.broadcast_to(np.asarray(a, dtype=float), x.shape)
        if rule.h_inv_cf is not None:
            lo = np.asarray(rule.h_inv_cf(t, a), dtype=float)
        else:
            lo = np.empty_like(x)
            for i, av in enumerate(a):
                try:
                    lo[i] = mc.xi(rule, t, float(av))
                except NotInRange:
                    lo[i] = np.nan
        f = lambda u: (np.asarray(rule.H(t, u), dtype=float) - a)  \
            * np.asarray(rule.g(t, u), dtype=float)
        return mc.simpson_fixed_vec(f, lo, x, panels=G_PANELS)

    return inner


def _increments(rule, t, h, x, theta, s, drift, load, d_b, a, g_inner):
    """Candidate continuous step and its accounting contributions.

    All inputs/outputs are arrays over paths; nothing is committed here.
    Values of rule fields are read at the step's left endpoint.
    """
    w = np.asarray(rule.w(t, x), dtype=float)
    # A nonpositive weighting has left the rule's domain; poison the step so
    # the caller's finiteness check excludes the path.
    w = np.where(w > 0.0, w, np.nan)
    w_x = np.asarray(rule.w.d_x(t, x), dtype=float)
    c_v = np.asarray(rule.c(t, x), dtype=float)
    h_x = np.asarray(rule.H.d_x(t, x), dtype=float)
    d_theta = drift * h + load * d_b
    d_y = d_b + d_theta
    qv_excess = load * (2.0 + load)  # (1+load)^2 - 1
    x_new = x + w * d_y + (0.5 * w_x + c_v) * w * qv_excess * h
    s_new = _h_arr(rule, t + h, x_new)
    contribs = {
        "direct": theta * (s_new - s),
        "hdtheta": s * d_theta,
        "covar": load * (1.0 + load) * h_x * w * h,
        "qv_term": -0.5 * w * h_x * load * load * h,
        "c_term": (s - a) * c_v * qv_excess * h,
        "g_term": g_inner(t, x, a) * h,
        # Predictable-coefficient noise integral: exactly mean-zero, and it
        # is the martingale gap between direct wealth and the decomposition.
        "bmart": (s - a) * d_b,
        "hsq": s * s * h,
    }
    return x_new, s_new, d_theta, d_y, contribs


def _bridge_split(total: float, span: float, parts: int,
                  gen: np.random.Generator) -> np.ndarray:
    """Split one Brownian increment into ``parts`` sub-increments.

    Exact-sum refinement: each segment is halved with a conditional midpoint
    draw, so the sub-increments always sum to ``total``.
    """
    segs = np.array([total])
    lens = np.array([span])
    while segs.size < parts:
        mids = 0.5 * segs + gen.standard_normal(segs.size) * np.sqrt(0.25 * lens)
        out = np.empty(segs.size * 2)
        out[0::2] = mids
        out[1::2] = segs - mids
        segs = out
        lens = np.repeat(0.5 * lens, 2)
    return segs


def simulate_block(cfg: SimConfig, path_start: int, n_paths: int,
                   snapshot_times: tuple = (), record: bool = False):
    """Simulate paths [path_start, path_start + n_paths) in lockstep.

    Returns a BlockResult, or (BlockResult, [PathRecord...]) when ``record``
    is set.  Excluded paths (divergence or unresolved barrier breach) keep
    placeholder aggregates and are flagged; callers must mask them.
    """
    rule, sig = cfg.rule, cfg.signal
    dt, n_steps = cfg.dt, cfg.n_steps
    n = n_paths
    strat = make_strategy(cfg.strategy, rule, dt)
    g_inner = _make_g_inner(rule)

    gens = [_path_generator(cfg.seed, path_start + i) for i in range(n)]
    if sig.z0_law is not None:
        z = np.array([float(sig.z0_law.sample(g)) for g in gens])
    else:
        z = np.full(n, float(sig.z))
    a = np.asarray(sig.payoff(z), dtype=float)
    if isinstance(strat, VecBridge):
        m = sig.m_values(rule, z)
    else:
        m = np.zeros(n)
    strat.begin(rule, n, z, m, dt, n_steps)
    theta0 = float(getattr(strat, "theta0", 0.0))

    x = np.zeros(n)
    y = np.zeros(n)
    b = np.zeros(n)
    theta = np.full(n, theta0)
    s = _h_arr(rule, 0.0, x)
    s_at_start = s.copy()
    endowment = theta0 * (a - s_at_start)
    qv_theta = np.zeros(n)
    qv_y = np.zeros(n)

    acc = {name: np.zeros(n) for name in
           ("direct", "hdtheta", "covar", "qv_term", "c_term", "g_term",
            "jump_sum", "bmart", "hsq")}
    active = np.ones(n, dtype=bool)
    diverged = np.zeros(n, dtype=bool)
    breach_failed = np.zeros(n, dtype=bool)
    retried_steps = 0
    retry_gens: dict = {}

    snap_nodes = {}
    for col, ts in enumerate(snapshot_times):
        node = grid_node(ts, dt)
        if not 0 <= node <= n_steps:
            raise SchemaError(f"snapshot time {ts:g} outside the grid")
        snap_nodes.setdefault(node, []).append(col)
    y_snap = np.full((n, len(snapshot_times)), np.nan) if snapshot_times else None
    x_snap = np.full((n, len(snapshot_times)), np.nan) if snapshot_times else None

    if record:
        rec_arrays = {name: np.zeros((n_steps + 1, n)) for name in
                      ("b", "y", "x", "s", "theta", "qv_theta", "qv_y")}
        rec_events: list = []

    sqrt_dt = math.sqrt(dt)
    chunk = None
    for k in range(n_steps):
        t = k * dt
        if k % CHUNK_STEPS == 0:
            chunk = np.stack([g.standard_normal(CHUNK_STEPS) for g in gens])
            chunk *= sqrt_dt
        d_b = chunk[:, k % CHUNK_STEPS]

        if record:
            for name, arr in (("b", b), ("y", y), ("x", x), ("s", s),
                              ("theta", theta), ("qv_theta", qv_theta),
                              ("qv_y", qv_y)):
                rec_arrays[name][k] = arr
        if k in snap_nodes:
            for col in snap_nodes[k]:
                y_snap[:, col] = y
                x_snap[:, col] = x

        jump = float(strat.jump_size(k, t))
        if jump != 0.0 and active.any():
            ii = np.flatnonzero(active)
            pen = np.asarray(rule.j(t, x[ii], jump), dtype=float)
            target = _kw_arr(rule, t, x[ii]) + jump + pen
            x_post = _kw_inv_arr(rule, t, target)
            s_post = _h_arr(rule, t, x_post)
            bad = ~(np.isfinite(x_post) & np.isfinite(s_post))
            if bad.any():
                diverged[ii[bad]] = True
                active[ii[bad]] = False
                ii = ii[~bad]
                x_post, s_post = x_post[~bad], s_post[~bad]
            d_s = s_post - s[ii]
            d_x = x_post - x[ii]
            acc["direct"][ii] += theta[ii] * d_s
            acc["hdtheta"][ii] += s[ii] * jump
            acc["covar"][ii] += jump * d_s
            with np.errstate(invalid="ignore", divide="ignore"):
                acc["jump_sum"][ii] += (
                    mc.psi_vec(rule, t, x_post, a[ii])
                    - mc.psi_vec(rule, t, x[ii], a[ii])
                    - (s_post - a[ii]) * jump)
            if record:
                rec_events.append((k, t, ii.copy(), jump, d_x.copy(), d_s.copy()))
            theta[ii] += jump
            y[ii] += jump
            x[ii] = x_post
            s[ii] = s_post
            strat.notify_jump(t, x, active)

        drift, load = strat.decide(k, t, x, y, active)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            x_new, s_new, d_theta, d_y, contribs = _increments(
                rule, t, dt, x, theta, s, drift, load, d_b, a, g_inner)
            gap = strat.boundary_gap(t + dt, x_new)
        finite = (np.isfinite(x_new) & np.isfinite(s_new)
                  & (np.abs(x_new) < DIVERGE_LIMIT))
        breached = np.zeros(n, dtype=bool)
        if gap is not None:
            with np.errstate(invalid="ignore"):
                breached = active & finite & (np.asarray(gap) <= 0.0)
        newly_div = active & ~finite
        ok = active & finite & ~breached

        x[ok] = x_new[ok]
        s[ok] = s_new[ok]
        y[ok] += d_y[ok]
        b[ok] += d_b[ok]
        theta[ok] += d_theta[ok]
        qv_theta[ok] += load[ok] ** 2 * dt
        qv_y[ok] += (1.0 + load[ok]) ** 2 * dt
        for name in acc:
            if name in contribs:
                acc[name][ok] += contribs[name][ok]

        if newly_div.any():
            diverged |= newly_div
            active &= ~newly_div
        for i in np.flatnonzero(breached):
            retried_steps += 1
            if i not in retry_gens:
                retry_gens[i] = _retry_generator(cfg.seed, path_start + i)
            done = _retry_path(cfg, strat, rule, g_inner, retry_gens[i], i, k,
                               t, float(d_b[i]), x, y, b, theta, s, qv_theta,
                               qv_y, acc, a)
            if not done:
                breach_failed[i] = True
                active[i] = False

    if record:
        for name, arr in (("b", b), ("y", y), ("x", x), ("s", s),
                          ("theta", theta), ("qv_theta", qv_theta),
                          ("qv_y", qv_y)):
            rec_arrays[name][n_steps] = arr
    if n_steps in snap_nodes:
        for col in snap_nodes[n_steps]:
            y_snap[:, col] = y
            x_snap[:, col] = x

    direct = acc["direct"] + (a - s) * theta
    ibp = a * theta - theta0 * s_at_start - acc["hdtheta"] - acc["covar"]
    with np.errstate(invalid="ignore", divide="ignore"):
        psi0 = mc.psi_vec(rule, 0.0, np.zeros(n), a)
        psi1 = mc.psi_vec(rule, 1.0, x, a)

    result = BlockResult(
        path_start=path_start, n_paths=n, z=z, f_z=a,
        direct=direct, ibp=ibp, psi0=psi0, psi1=psi1,
        qv_term=acc["qv_term"], c_term=acc["c_term"], g_term=acc["g_term"],
        jump_sum=acc["jump_sum"], endowment=endowment, bmart=acc["bmart"],
        hsq=acc["hsq"],
        diverged=diverged, breach_failed=breach_failed,
        retried_steps=retried_steps, y_snap=y_snap, x_snap=x_snap)
    if not record:
        return result

    records = []
    grid = np.arange(n_steps + 1) * dt
    events_by_path = {}
    for k, t, ii, jump, d_x, d_s in rec_events:
        for pos, i in enumerate(ii):
            events_by_path.setdefault(int(i), []).append(JumpEvent(
                node=k, time=t, d_theta=jump, d_y=jump,
                d_x=float(d_x[pos]), d_s=float(d_s[pos])))
    for i in range(n):
        records.append(PathRecord(
            t=grid,
            b=rec_arrays["b"][:, i].copy(),
            y=rec_arrays["y"][:, i].copy(),
            x=rec_arrays["x"][:, i].copy(),
            s=rec_arrays["s"][:, i].copy(),
            theta=rec_arrays["theta"][:, i].copy(),
            qv_theta_c=rec_arrays["qv_theta"][:, i].copy(),
            qv_y_c=rec_arrays["qv_y"][:, i].copy(),
            jumps=tuple(events_by_path.get(i, [])),
            z=float(z[i]), f_z=float(a[i]), m=float(m[i]),
            path_index=path_start + i))
    return result, records


def _retry_path(cfg, strat: VecStrategy, rule, g_inner, gen, i, k, t, d_b_i,
                x, y, b, theta, s, qv_theta, qv_y, acc, a) -> bool:
    """Redo one breached step for path i on successively finer grids.

    State arrays still hold the pre-step values for path i.  On success the
    arrays and accumulators are committed in place; on failure they are
    restored and False is returned.
    """
    dt = cfg.dt
    snap = (x[i], y[i], b[i], theta[i], s[i], qv_theta[i], qv_y[i])
    mutable = strat.mutable_state()
    strat_snap = [arr[i] for arr in mutable]
    only = np.zeros(x.size, dtype=bool)
    only[i] = True
    a_i = a[i:i + 1]

    for level in range(1, MAX_RETRY_LEVELS + 1):
        x[i], y[i], b[i], theta[i], s[i], qv_theta[i], qv_y[i] = snap
        for arr, sv in zip(mutable, strat_snap):
            arr[i] = sv
        parts = 2 ** level
        h = dt / parts
        incs = _bridge_split(d_b_i, dt, parts, gen)
        deltas = dict.fromkeys(
            ("direct", "hdtheta", "covar", "qv_term", "c_term", "g_term",
             "bmart", "hsq"), 0.0)
        d_qvt = d_qvy = 0.0
        failed = False
        for j in range(parts):
            ts = t + j * h
            drift, load = strat.decide(k, ts, x, y, only)
            dr, ld = drift[i:i + 1], load[i:i + 1]
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                x_new, s_new, d_theta, d_y, contribs = _increments(
                    rule, ts, h, x[i:i + 1], theta[i:i + 1], s[i:i + 1],
                    dr, ld, np.array([incs[j]]), a_i, g_inner)
            if not (np.isfinite(x_new[0]) and np.isfinite(s_new[0])
                    and abs(x_new[0]) < DIVERGE_LIMIT):
                failed = True
                break
            x[i] = x_new[0]
            s[i] = s_new[0]
            y[i] += d_y[0]
            b[i] += incs[j]
            theta[i] += d_theta[0]
            d_qvt += float(ld[0]) ** 2 * h
            d_qvy += (1.0 + float(ld[0])) ** 2 * h
            for name in deltas:
                deltas[name] += float(contribs[name][0])
            gap = strat.boundary_gap(ts + h, x)
            if gap is not None and np.asarray(gap)[i] <= 0.0:
                failed = True
                break
        if not failed:
            qv_theta[i] += d_qvt
            qv_y[i] += d_qvy
            for name, val in deltas.items():
                acc[name][i] += val
            return True
    x[i], y[i], b[i], theta[i], s[i], qv_theta[i], qv_y[i] = snap
    for arr, sv in zip(mutable, strat_snap):
        arr[i] = sv
    return False


def simulate_path(cfg: SimConfig, path_index: int) -> PathRecord:
    """Simulate one path with full recording.

    Raises PathDiverged when the path produced non-finite state or could not
    resolve a barrier breach.
    """
    result, records = simulate_block(cfg, path_index, 1, record=True)
    if bool(result.excluded[0]):
        why = "non-finite state" if result.diverged[0] else "unresolved barrier breach"
        raise PathDiverged(f"path {path_index}: {why}")
    return records[0]


# ---------------------------------------------------------------------------
# Record-based wealth accounting


def _steps(rec: PathRecord):
    """Iterate (k, t_k, x/s/theta entering the continuous step, jump event)."""
    by_node = {ev.node: ev for ev in rec.jumps}
    for k in range(rec.t.size - 1):
        yield k, float(rec.t[k]), by_node.get(k)


def wealth_direct(rec: PathRecord) -> float:
    """Left-point sum of holdings against price moves plus the terminal gap."""
    w = 0.0
    for k, _, ev in _steps(rec):
        th = float(rec.theta[k])
        s_k = float(rec.s[k])
        if ev is not None:
            w += th * ev.d_s
            th += ev.d_theta
            s_k += ev.d_s
        w += th * (float(rec.s[k + 1]) - s_k)
    w += (rec.f_z - float(rec.s[-1])) * float(rec.theta[-1])
    return w


def _loads(rec: PathRecord) -> np.ndarray:
    """Brownian loadings per step, recovered from the declared QV clocks."""
    dt = np.diff(rec.t)
    d_qy = np.diff(rec.qv_y_c)
    d_qt = np.diff(rec.qv_theta_c)
    return (d_qy - d_qt - dt) / (2.0 * dt)


def wealth_ibp(rec: PathRecord, rule: PricingRule) -> float:
    """Integration-by-parts wealth: payoff times holdings minus the price
    paid and the holdings-price covariation."""
    loads = _loads(rec)
    dt = rec.dt
    paid = 0.0
    covar = 0.0
    for k, t, ev in _steps(rec):
        th = float(rec.theta[k])
        x_k = float(rec.x[k])
        s_k = float(rec.s[k])
        if ev is not None:
            paid += s_k * ev.d_theta
            covar += ev.d_theta * ev.d_s
            th += ev.d_theta
            x_k += ev.d_x
            s_k += ev.d_s
        d_theta_c = float(rec.theta[k + 1]) - th
        paid += s_k * d_theta_c
        bk = float(loads[k])
        covar += (bk * (1.0 + bk) * float(rule.H.d_x(t, x_k))
                  * float(rule.w(t, x_k)) * dt)
    theta_init = float(rec.theta[0])
    return (rec.f_z * float(rec.theta[-1]) - theta_init * float(rec.s[0])
            - paid - covar)


def wealth_decomposition(rec: PathRecord, rule: PricingRule,
                         signal: SignalModel) -> WealthBreakdown:
    """Evaluate the value-potential terms along a recorded path."""
    a = rec.f_z
    loads = _loads(rec)
    dt = rec.dt
    qv_term = 0.0
    c_term = 0.0
    g_term = 0.0
    jump_sum = 0.0
    for k, t, ev in _steps(rec):
        x_k = float(rec.x[k])
        s_k = float(rec.s[k])
        if ev is not None:
            x_post = x_k + ev.d_x
            s_post = s_k + ev.d_s
            jump_sum += (mc.psi(rule, t, x_post, a) - mc.psi(rule, t, x_k, a)
                         - (s_post - a) * ev.d_theta)
            x_k, s_k = x_post, s_post
        bk = float(loads[k])
        w_k = float(rule.w(t, x_k))
        qv_term += -0.5 * w_k * float(rule.H.d_x(t, x_k)) * bk * bk * dt
        c_term += (s_k - a) * float(rule.c(t, x_k)) * bk * (2.0 + bk) * dt
        g_term += mc.g_cost(rule, t, x_k, a)[0] * dt
    endowment = float(rec.theta[0]) * (a - float(rule.H(0.0, 0.0)))
    return WealthBreakdown(
        psi0=mc.psi(rule, 0.0, 0.0, a),
        psi1=mc.psi(rule, 1.0, float(rec.x[-1]), a),
        qv_term=qv_term, c_term=c_term, g_term=g_term, jump_sum=jump_sum,
        endowment=endowment)


@dataclass(frozen=True)
class JumpCheck:
    """Both value-jump inequalities evaluated at one block trade."""

    time: float
    lhs: float
    upper: float
    lower: float
    upper_ok: bool
    lower_ok: bool

    @property
    def ok(self) -> bool:
        return self.upper_ok and self.lower_ok


def check_jump_bounds(rec: PathRecord, rule: PricingRule, signal: SignalModel,
                      tol: float = 1e-6) -> list:
    """Verify the two-sided jump inequalities at every recorded block trade."""
    a = rec.f_z
    out = []
    for ev in rec.jumps:
        t = ev.time
        x_pre = float(rec.x[ev.node])
        x_post = x_pre + ev.d_x
        h_pre = float(rule.H(t, x_pre))
        h_post = float(rule.H(t, x_post))
        pen = float(rule.j(t, x_pre, ev.d_y))
        lhs = (mc.psi(rule, t, x_post, a) - mc.psi(rule, t, x_pre, a)
               - (h_post - a) * ev.d_theta)
        upper = (h_post - a) * pen
        lower = (h_pre - a) * pen - (h_post - h_pre) * ev.d_theta
        out.append(JumpCheck(
            time=t, lhs=lhs, upper=upper, lower=lower,
            upper_ok=lhs <= upper + tol, lower_ok=lhs >= lower - tol))
    return out


def write_trace(rec: PathRecord, path: str) -> None:
    """Dump a per-node trace (CSV) and, if any, a jump-event sidecar."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "B", "Y", "X", "S", "theta"])
        for k in range(rec.t.size):
            wr.writerow([f"{v:.12g}" for v in
                         (rec.t[k], rec.b[k], rec.y[k], rec.x[k],
                          rec.s[k], rec.theta[k])])
    if rec.jumps:
        side = path.rsplit(".", 1)[0] + "_jumps.csv"
        with open(side, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "d_theta", "d_y", "d_x", "d_s"])
            for ev in rec.jumps:
                wr.writerow([f"{v:.12g}" for v in
                             (ev.time, ev.d_theta, ev.d_y, ev.d_x, ev.d_s)])
