"""Engine tests: path dynamics, bookkeeping, and the three wealth accounts."""

import math

import numpy as np
import pytest

from kyleback.errors import PathDiverged, SchemaError
from kyleback.market import Law, PricingRule, SignalModel, catalog_rule
from kyleback.mathcore import Func2
from kyleback.strategies import StrategyConfig
from kyleback.engine import (
    JumpEvent, SimConfig, check_jump_bounds, simulate_block, simulate_path,
    wealth_decomposition, wealth_direct, wealth_ibp, write_trace,
)

IDENTITY = catalog_rule("back-identity")
LOGNORMAL = catalog_rule("back-lognormal")

STATIC_ONE = SignalModel(z=1.0, payoff_name="identity")
DRAWN = SignalModel(z0_law=Law("normal", 0.0, 1.0), payoff_name="identity")


def linear_weight_rule(beta: float = 0.25) -> PricingRule:
    """Price map x with weighting 1 + beta x; both rule PDEs hold exactly.

    The weighting depends on the signal level, so the Euler step no longer
    preserves the demand transform on the grid; refinement tests need that
    genuine discretization error.  Domain is x > -1/beta.
    """
    one = lambda t, x: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda t, x: np.zeros_like(np.asarray(x, dtype=float))
    h = Func2(fn=lambda t, x: x + 0.0, fn_x=one, fn_t=zero, fn_xx=zero,
              name="x")
    w = Func2(fn=lambda t, x: 1.0 + beta * x,
              fn_x=lambda t, x: beta + zero(t, x), fn_t=zero, fn_xx=zero,
              name="1+bx")

    def psi_cf(t, x, a):
        gap = ((x - a) / beta
               - (1.0 + beta * a) / beta ** 2
               * np.log((1.0 + beta * x) / (1.0 + beta * a)))
        return gap + 0.5 * (1.0 - t) * (1.0 + beta * a)

    return PricingRule(
        name=f"linear-weight(beta={beta:g})", H=h, w=w,
        c=Func2.const(0.0, "0"), g=Func2.const(0.0, "0"),
        kw_cf=lambda t, x: np.log1p(beta * x) / beta + 0.5 * beta * t,
        kw_inv_cf=lambda t, y: np.expm1(beta * (y - 0.5 * beta * t)) / beta,
        h_inv_cf=lambda t, a: a + 0.0,
        big_g_cf=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        psi_cf=psi_cf,
        g_inner_cf=lambda t, x, a: np.zeros_like(np.asarray(x, dtype=float)),
        g_inner_abs_cf=lambda t, x, a: np.zeros_like(
            np.asarray(x, dtype=float)),
    )


def sim(rule=IDENTITY, signal=STATIC_ONE, dt=0.01, seed=0, **strat):
    return SimConfig(rule=rule, signal=signal,
                     strategy=StrategyConfig(**strat), dt=dt, seed=seed)


class TestSimConfigValidation:
    def test_grid_must_tile_unit_interval(self):
        with pytest.raises(SchemaError):
            sim(dt=0.3, kind="zero")

    def test_dt_positive(self):
        with pytest.raises(SchemaError):
            sim(dt=-0.01, kind="zero")

    def test_seed_range(self):
        with pytest.raises(SchemaError):
            sim(dt=0.01, seed=-1, kind="zero")


class TestZeroStrategy:
    def test_demand_equals_noise_pathwise(self):
        rec = simulate_path(sim(kind="zero", seed=4), 0)
        assert np.array_equal(rec.x, rec.b)
        assert np.array_equal(rec.y, rec.b)
        assert not rec.theta.any()
        assert rec.jumps == ()

    def test_wealth_is_exactly_zero(self):
        rec = simulate_path(sim(kind="zero", seed=4), 0)
        assert wealth_direct(rec) == 0.0
        # Loads recovered from the QV clocks carry cumsum rounding.
        assert wealth_ibp(rec, IDENTITY) == pytest.approx(0.0, abs=1e-12)

    def test_decomposition_reduces_to_potential_difference(self):
        rec = simulate_path(sim(kind="zero", seed=4), 0)
        wb = wealth_decomposition(rec, IDENTITY, STATIC_ONE)
        assert wb.psi0 == pytest.approx(1.0)  # 1^2/2 + 1/2
        for term in (wb.qv_term, wb.c_term, wb.g_term, wb.jump_sum):
            assert abs(term) < 1e-15
        assert wb.total == pytest.approx(wb.psi0 - wb.psi1, abs=1e-15)

    def test_potential_difference_is_mean_zero(self):
        res = simulate_block(sim(kind="zero", seed=11), 0, 512)
        assert not res.excluded.any()
        diff = res.total
        se = diff.std() / math.sqrt(diff.size)
        assert abs(diff.mean()) < 3.0 * se


class TestHoldingsEndowment:
    def test_buy_and_hold_earns_payoff_minus_initial_price(self):
        cfg = sim(kind="scripted", theta0=1.0, seed=3)
        rec = simulate_path(cfg, 0)
        assert np.all(rec.theta == 1.0)
        assert wealth_direct(rec) == pytest.approx(1.0 - 0.0, abs=1e-12)
        assert wealth_ibp(rec, IDENTITY) == pytest.approx(1.0, abs=1e-12)

    def test_buy_and_hold_on_curved_rule(self):
        signal = SignalModel(z=1.0, payoff=np.exp, payoff_name="exp")
        cfg = sim(rule=LOGNORMAL, signal=signal, kind="scripted",
                  theta0=1.0, seed=3)
        rec = simulate_path(cfg, 0)
        expected = math.e - math.exp(0.5)  # f(z) - H(0, 0)
        assert wealth_direct(rec) == pytest.approx(expected, abs=1e-12)
        assert wealth_ibp(rec, LOGNORMAL) == pytest.approx(expected, abs=1e-12)
        res = simulate_block(cfg, 0, 4)
        assert res.direct == pytest.approx(expected, abs=1e-12)
        assert res.ibp == pytest.approx(expected, abs=1e-12)


class TestBookkeeping:
    def test_node_identities(self):
        rule = catalog_rule("g-positive", c0=0.3)
        cfg = SimConfig(rule=rule, signal=DRAWN,
                        strategy=StrategyConfig(kind="bridge"), dt=0.005,
                        seed=21)
        rec = simulate_path(cfg, 2)
        assert np.max(np.abs(rec.y - rec.b - rec.theta)) < 1e-10
        for k in (0, 37, 100, 200):
            assert rec.s[k] == float(rule.H(rec.t[k], rec.x[k]))

    def test_declared_qv_clocks(self):
        cfg = sim(kind="scripted", s_load=0.5, seed=6, dt=0.01)
        rec = simulate_path(cfg, 0)
        assert rec.qv_theta_c[-1] == pytest.approx(0.25)
        assert rec.qv_y_c[-1] == pytest.approx(2.25)


class TestFiniteVariationStrategy:
    def test_only_potential_terms_survive(self):
        # Continuous drift-only trading on a rule with no cost features
        # leaves every cost term of the decomposition at exactly zero.
        cfg = sim(kind="scripted", s_drift=0.7, seed=9)
        rec = simulate_path(cfg, 0)
        wb = wealth_decomposition(rec, IDENTITY, STATIC_ONE)
        for term in (wb.qv_term, wb.c_term, wb.g_term, wb.jump_sum):
            assert abs(term) < 1e-15
        res = simulate_block(cfg, 0, 2)
        assert not res.qv_term.any() and not res.c_term.any()
        assert not res.g_term.any() and not res.jump_sum.any()


class TestDeterminism:
    def test_repeat_simulation_is_bit_identical(self):
        cfg = sim(kind="bridge", signal=DRAWN, dt=0.005, seed=13)
        a = simulate_path(cfg, 5)
        b = simulate_path(cfg, 5)
        for name in ("b", "y", "x", "s", "theta"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        assert a.z == b.z and a.m == b.m

    def test_block_split_matches_whole(self):
        cfg = sim(kind="bridge", signal=DRAWN, dt=0.005, seed=9)
        whole = simulate_block(cfg, 0, 16)
        parts = [simulate_block(cfg, 0, 8), simulate_block(cfg, 8, 8)]
        assert np.array_equal(whole.direct,
                              np.concatenate([p.direct for p in parts]))
        assert np.array_equal(whole.total,
                              np.concatenate([p.total for p in parts]))
        assert np.array_equal(whole.z, np.concatenate([p.z for p in parts]))

    def test_retries_draw_from_their_own_streams(self):
        st = StrategyConfig(kind="tracker", target=0.0, delta=0.35)
        cfg = SimConfig(rule=IDENTITY, signal=STATIC_ONE, strategy=st,
                        dt=1e-3, seed=5)
        a = simulate_block(cfg, 0, 64)
        b = simulate_block(cfg, 0, 64)
        assert a.retried_steps == b.retried_steps > 0
        assert not a.excluded.any()
        assert np.array_equal(a.direct, b.direct)


class TestDivergenceHandling:
    def test_exploding_path_raises_on_single_simulation(self):
        cfg = sim(rule=LOGNORMAL,
                  signal=SignalModel(z=1.0, payoff=np.exp, payoff_name="exp"),
                  kind="scripted", s_drift=1e6, seed=2)
        with pytest.raises(PathDiverged):
            simulate_path(cfg, 0)

    def test_exploding_paths_are_flagged_in_blocks(self):
        cfg = sim(rule=LOGNORMAL,
                  signal=SignalModel(z=1.0, payoff=np.exp, payoff_name="exp"),
                  kind="scripted", s_drift=1e6, seed=2)
        res = simulate_block(cfg, 0, 3)
        assert res.diverged.all()
        assert not res.breach_failed.any()

    def test_leaving_the_weighting_domain_flags_path(self):
        # One coarse step overshoots past x = -4 where the weighting turns
        # nonpositive; the next step must poison and exclude the path.
        rule = linear_weight_rule(0.25)
        cfg = SimConfig(rule=rule, signal=STATIC_ONE,
                        strategy=StrategyConfig(kind="scripted",
                                                s_drift=-1e4),
                        dt=0.01, seed=2)
        res = simulate_block(cfg, 0, 2)
        assert res.diverged.all()


class TestJumps:
    def test_jump_event_fields_follow_demand_transform(self):
        rule = catalog_rule("g-positive", j_lambda=2.0)
        cfg = SimConfig(rule=rule, signal=SignalModel(z=0.0),
                        strategy=StrategyConfig(kind="scripted",
                                                s_jumps=((0.0, 0.3),)),
                        dt=0.01, seed=1)
        rec = simulate_path(cfg, 0)
        assert len(rec.jumps) == 1
        ev = rec.jumps[0]
        assert ev.node == 0 and ev.time == 0.0
        assert ev.d_theta == ev.d_y == 0.3
        # Transform at t=0 is x itself: displaced by trade + penalty 0.6.
        assert ev.d_x == pytest.approx(0.9, abs=1e-9)
        assert ev.d_s == pytest.approx(0.9, abs=1e-9)
        assert rec.x[0] == 0.0 and rec.theta[0] == 0.0  # left limits

    def test_no_jumps_yields_empty_checks(self):
        rec = simulate_path(sim(kind="zero", seed=4), 0)
        assert check_jump_bounds(rec, IDENTITY, STATIC_ONE) == []

    def test_free_jump_slack_is_exact_on_identity(self):
        # With no jump penalty the value change of a block trade kappa is
        # always kappa^2/2 below the upper bound, independent of state.
        kappa = 0.5
        cfg = sim(kind="scripted", s_jumps=((0.5, kappa),), seed=8)
        rec = simulate_path(cfg, 0)
        (chk,) = check_jump_bounds(rec, IDENTITY, STATIC_ONE)
        assert chk.ok
        assert chk.lhs == pytest.approx(-kappa ** 2 / 2.0, abs=1e-10)
        assert chk.upper == 0.0
        assert chk.lower == pytest.approx(-kappa ** 2, abs=1e-10)

    def test_exploit_j_jumps_respect_both_bounds(self):
        rule = catalog_rule("g-positive", j_lambda=0.5)
        st = StrategyConfig(kind="exploit_j", t1=0.25, t2=0.75, x1=-0.5,
                            x2=0.5, n_jumps=4, kappa1=1.0, delta=0.6)
        cfg = SimConfig(rule=rule, signal=SignalModel(z=0.0), strategy=st,
                        dt=0.002, seed=11)
        rec = simulate_path(cfg, 0)
        checks = check_jump_bounds(rec, rule, SignalModel(z=0.0))
        assert len(checks) == 4
        assert all(c.ok for c in checks)


class TestBridge:
    def test_terminal_demand_closes_exactly(self):
        cfg = sim(kind="bridge", signal=DRAWN, dt=0.005, seed=3)
        res, recs = simulate_block(cfg, 0, 16, record=True)
        for rec in recs:
            assert rec.y[-1] == pytest.approx(rec.m, abs=1e-12)
            assert rec.x[-1] == pytest.approx(rec.z, abs=1e-12)

    def test_terminal_price_error_shrinks_with_dt(self):
        rule = linear_weight_rule(0.25)

        def mean_err(dt):
            cfg = SimConfig(rule=rule, signal=STATIC_ONE,
                            strategy=StrategyConfig(kind="bridge"), dt=dt,
                            seed=17)
            res, recs = simulate_block(cfg, 0, 64, record=True)
            assert res.excluded.sum() == 0
            return np.mean([abs(r.s[-1] - 1.0) for r in recs])

        coarse, fine = mean_err(0.01), mean_err(0.0025)
        assert fine < coarse
        assert coarse > 1e-6  # the error being measured is real

    def test_band_choice_leaves_interior_paths_untouched(self):
        def run(band):
            cfg = sim(kind="bridge", band_n=band, signal=DRAWN, dt=0.005,
                      seed=29)
            return simulate_block(cfg, 0, 64, record=True)[1]

        tight, loose = run(2.0), run(4.0)
        interior = [i for i, rec in enumerate(loose)
                    if np.max(np.abs(rec.y)) < 2.0]
        assert len(interior) >= 5
        for i in interior:
            assert np.array_equal(tight[i].y, loose[i].y)
            assert np.array_equal(tight[i].theta, loose[i].theta)


class TestTracker:
    def test_holds_signal_within_barrier(self):
        st = StrategyConfig(kind="tracker", target=0.0, delta=0.1)
        cfg = SimConfig(rule=IDENTITY, signal=STATIC_ONE, strategy=st,
                        dt=1e-4, seed=23)
        res, recs = simulate_block(cfg, 0, 100, record=True)
        assert not res.excluded.any()
        sups = np.array([np.max(np.abs(rec.x)) for rec in recs])
        assert (sups < 0.1).mean() >= 0.99


class TestAccountingAgreement:
    def test_direct_and_ibp_converge_together(self):
        def rms_gap(dt):
            cfg = sim(kind="bridge", signal=DRAWN, dt=dt, seed=31)
            res, recs = simulate_block(cfg, 0, 128, record=True)
            gaps = [wealth_direct(r) - wealth_ibp(r, IDENTITY) for r in recs]
            return float(np.sqrt(np.mean(np.square(gaps))))

        assert rms_gap(0.0025) < rms_gap(0.01)

    def test_decomposition_matches_direct_in_expectation(self):
        cfg = sim(kind="bridge", signal=DRAWN, dt=0.0025, seed=37)
        res = simulate_block(cfg, 0, 256)
        diff = res.direct - res.total
        se = diff.std() / math.sqrt(diff.size)
        assert abs(diff.mean()) < 3.0 * se + 0.05

    def test_block_accumulators_match_record_accounting(self):
        rule = catalog_rule("g-positive", c0=0.3, j_lambda=0.5)
        st = StrategyConfig(kind="scripted", s_drift=0.4, s_load=0.5,
                            theta0=1.0, s_jumps=((0.25, 0.4), (0.5, -0.2)))
        cfg = SimConfig(rule=rule, signal=SignalModel(z=0.5), strategy=st,
                        dt=0.005, seed=41)
        res, recs = simulate_block(cfg, 0, 3, record=True)
        signal = SignalModel(z=0.5)
        for i, rec in enumerate(recs):
            assert wealth_direct(rec) == pytest.approx(res.direct[i], rel=1e-9)
            assert wealth_ibp(rec, rule) == pytest.approx(res.ibp[i], rel=1e-9)
            wb = wealth_decomposition(rec, rule, signal)
            assert wb.qv_term == pytest.approx(res.qv_term[i], rel=1e-9)
            assert wb.c_term == pytest.approx(res.c_term[i], rel=1e-9)
            assert wb.g_term == pytest.approx(res.g_term[i], abs=1e-9)
            assert wb.jump_sum == pytest.approx(res.jump_sum[i], rel=1e-9)
            assert wb.total == pytest.approx(res.total[i], rel=1e-9)


class TestExploitCAccounting:
    def test_stage2_terms_match_their_analytic_ranges(self):
        rule = catalog_rule("back-identity", c0=0.5)
        st = StrategyConfig(kind="exploit_c", t1=0.25, t2=0.75, x1=0.0,
                            x2=1.0, b=2.0)
        cfg = SimConfig(rule=rule, signal=SignalModel(z=-3.0), strategy=st,
                        dt=2e-4, seed=43)
        rec = simulate_path(cfg, 0)
        wb = wealth_decomposition(rec, rule, SignalModel(z=-3.0))
        # Loading 2 over the half-unit window: -(1/2) b^2 (t2-t1) exactly.
        assert wb.qv_term == pytest.approx(-1.0, abs=0.01)
        # Excess QV pays c0 (H - a) with X confined to (0, 1), a = -3.
        lo = 8.0 * 0.5 * 0.5 * (0.0 + 3.0)
        hi = 8.0 * 0.5 * 0.5 * (1.0 + 3.0)
        assert lo - 0.1 <= wb.c_term <= hi + 0.1


class TestSnapshots:
    def test_snapshot_columns_match_record(self):
        cfg = sim(kind="zero", seed=4)
        res, recs = simulate_block(cfg, 0, 5, snapshot_times=(0.25, 1.0),
                                   record=True)
        for i, rec in enumerate(recs):
            assert res.y_snap[i, 0] == rec.y[25]
            assert res.y_snap[i, 1] == rec.y[-1]
            assert res.x_snap[i, 0] == rec.x[25]


class TestTrace:
    def test_trace_file_layout(self, tmp_path):
        cfg = sim(kind="scripted", s_jumps=((0.5, 0.5),), seed=8)
        rec = simulate_path(cfg, 0)
        out = tmp_path / "path.csv"
        write_trace(rec, str(out))
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "t,B,Y,X,S,theta"
        assert len(lines) == rec.t.size + 1
        side = tmp_path / "path_jumps.csv"
        assert side.exists()
        jlines = side.read_text().strip().splitlines()
        assert jlines[0] == "time,d_theta,d_y,d_x,d_s"
        assert len(jlines) == 2
