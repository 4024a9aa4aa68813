"""Harness tests: estimates, sweeps, rationality checks, grid convergence."""

import math
from dataclasses import replace

import numpy as np
import pytest

from kyleback.errors import TooManyDiverged, UsageError
from kyleback.market import Law, SignalModel, catalog_rule
from kyleback.strategies import StrategyConfig
from kyleback.engine import BLOCK_SIZE, SimConfig
from kyleback.experiments import (
    McSummary, convergence_study, mc_estimate, rationality_test, run_blocks,
    sweep, term_means, upper_bound_gap,
)

IDENTITY = catalog_rule("back-identity")
STATIC_ONE = SignalModel(z=1.0)
DRAWN = SignalModel(z0_law=Law("normal", 0.0, 1.0), static=False)


def cfg_of(rule=IDENTITY, signal=STATIC_ONE, dt=0.01, seed=7, **strat):
    strat.setdefault("kind", "zero")
    return SimConfig(rule=rule, signal=signal,
                     strategy=StrategyConfig(**strat), dt=dt, seed=seed)


class TestRunBlocks:
    def test_block_spans_cover_paths_in_order(self):
        blocks = run_blocks(cfg_of(), BLOCK_SIZE + 100)
        assert [b.path_start for b in blocks] == [0, BLOCK_SIZE]
        assert [b.n_paths for b in blocks] == [BLOCK_SIZE, 100]

    def test_worker_count_does_not_change_results(self):
        cfg = cfg_of(kind="scripted", s_drift=0.5, s_load=0.2)
        one = run_blocks(cfg, 2 * BLOCK_SIZE + 7, threads=1)
        many = run_blocks(cfg, 2 * BLOCK_SIZE + 7, threads=8)
        for b1, b8 in zip(one, many):
            assert b1.path_start == b8.path_start
            np.testing.assert_array_equal(b1.direct, b8.direct)
            np.testing.assert_array_equal(b1.ibp, b8.ibp)
            np.testing.assert_array_equal(b1.total, b8.total)

    def test_zero_paths_rejected(self):
        with pytest.raises(UsageError):
            run_blocks(cfg_of(), 0)


class TestMcEstimate:
    def test_zero_strategy_mean_is_zero(self):
        s = mc_estimate(cfg_of(seed=3), 512)
        assert s.n_paths == 512 and s.n_excluded == 0
        assert s.mean == 0.0 and s.stderr == 0.0

    def test_bridge_recovers_initial_potential(self):
        # Value of knowing z=0 up front is half: psi(0,0) for the identity
        # price map.
        cfg = cfg_of(signal=SignalModel(z=0.0), dt=0.002, seed=11,
                     kind="bridge")
        s = mc_estimate(cfg, 2048, threads=2)
        assert s.mean == pytest.approx(0.5, abs=max(4.0 * s.stderr, 0.05))

    def test_constant_holdings_have_zero_stderr(self):
        cfg = cfg_of(seed=5, kind="scripted", theta0=1.0)
        s = mc_estimate(cfg, 128)
        assert s.mean == pytest.approx(1.0)
        assert s.stderr == 0.0
        lo, hi = s.ci95
        assert lo == hi == s.mean

    def test_ci95_matches_mean_and_stderr(self):
        cfg = cfg_of(seed=9, kind="scripted", s_load=0.3)
        s = mc_estimate(cfg, 256)
        assert s.stderr > 0.0
        assert s.ci95 == (s.mean - 1.96 * s.stderr, s.mean + 1.96 * s.stderr)

    def test_single_path_rejected(self):
        with pytest.raises(UsageError):
            mc_estimate(cfg_of(), 1)

    def test_unknown_measure_rejected(self):
        with pytest.raises(UsageError):
            mc_estimate(cfg_of(), 16, measure="alpha")

    def test_thread_count_invariance(self):
        cfg = cfg_of(seed=13, kind="scripted", s_drift=1.0, s_load=0.5)
        assert mc_estimate(cfg, 300, threads=1) == mc_estimate(
            cfg, 300, threads=3)

    def test_mass_divergence_raises(self):
        cfg = cfg_of(rule=catalog_rule("back-lognormal"),
                     signal=SignalModel(z=0.0, payoff=np.exp,
                                        payoff_name="exp"),
                     dt=0.01, seed=1, kind="scripted", s_drift=1e6)
        with pytest.raises(TooManyDiverged):
            mc_estimate(cfg, 64)


class TestTermMeans:
    def test_zero_strategy_breakdown(self):
        blocks = run_blocks(cfg_of(seed=3), 256)
        means = term_means(blocks)
        assert means["n_paths"] == 256 and means["n_excluded"] == 0
        assert means["direct"] == 0.0
        assert means["psi0"] == pytest.approx(1.0)
        for name in ("qv_term", "c_term", "g_term", "jump_sum"):
            assert means[name] == 0.0
        # psi0 - mean psi1 is the mean total; both accounts agree in mean
        # up to Monte Carlo noise.
        assert means["total"] == pytest.approx(
            means["psi0"] - means["psi1"], abs=1e-12)

    def test_upper_bound_gap_for_zero_strategy(self):
        blocks = run_blocks(cfg_of(seed=3), 256)
        gap_mean, gap_se = upper_bound_gap(blocks)
        assert gap_mean == -1.0
        assert gap_se == 0.0


class TestSweep:
    def test_needs_three_sorted_values(self):
        cfg = cfg_of(kind="exploit_c", dt=0.0002)
        with pytest.raises(UsageError):
            sweep(cfg, "b", [0.0, 1.0], 16)
        with pytest.raises(UsageError):
            sweep(cfg, "b", [1.0, 0.0, 2.0], 16)
        with pytest.raises(UsageError):
            sweep(cfg, "b", [0.0, 1.0, 1.0], 16)

    def test_unknown_parameter_rejected(self):
        with pytest.raises(UsageError):
            sweep(cfg_of(), "gamma", [0.0, 1.0, 2.0], 16)

    def test_fractional_jump_count_rejected(self):
        cfg = cfg_of(kind="exploit_j", dt=0.002)
        with pytest.raises(UsageError):
            sweep(cfg, "n_jumps", [2.0, 2.5, 3.0], 16)

    def test_loading_sweep_fits_quadratic(self):
        cfg = cfg_of(rule=catalog_rule("back-identity", c0=0.5),
                     signal=SignalModel(z=-3.0), dt=0.00025, seed=3,
                     kind="exploit_c", t1=0.25, t2=0.75, x1=0.0, x2=1.0)
        res = sweep(cfg, "b", [0.0, 1.0, 2.0], 96)
        assert res.parameter == "b" and res.degree == 2
        assert len(res.poly) == 3 and len(res.summaries) == 3
        assert res.verdict in ("GROWS", "FLAT", "DECREASES")
        # Three points saturate a quadratic, so the fit interpolates.
        assert res.chi2 == pytest.approx(0.0, abs=1e-12)
        assert max(abs(r) for r in res.residuals) < 1e-6

    def test_signal_sweep_detects_growth(self):
        # The bridge recovers psi(0,0) = (z*z + 1) / 2, which increases
        # over positive z, so the linear trend must be significant.
        cfg = cfg_of(dt=0.002, seed=21, kind="bridge")
        res = sweep(cfg, "z", [0.0, 1.0, 2.0], 256, threads=2)
        assert res.degree == 1
        assert res.verdict == "GROWS"
        assert res.coefficient > 0.0
        fitted_means = [s.mean for s in res.summaries]
        assert fitted_means[0] < fitted_means[-1]

    def test_grid_sweep_of_flat_profile(self):
        res = sweep(cfg_of(seed=17), "dt", [0.005, 0.01, 0.02], 64)
        assert res.verdict == "FLAT"
        assert all(s.mean == 0.0 for s in res.summaries)

    def test_sweep_is_deterministic(self):
        cfg = cfg_of(dt=0.002, seed=21, kind="bridge")
        assert sweep(cfg, "z", [0.0, 0.5, 1.0], 64) == sweep(
            cfg, "z", [0.0, 0.5, 1.0], 64, threads=4)


class TestRationality:
    def test_static_signal_rejected(self):
        with pytest.raises(UsageError):
            rationality_test(cfg_of(kind="bridge"), 400)

    def test_times_must_be_interior(self):
        cfg = cfg_of(signal=DRAWN, kind="bridge")
        with pytest.raises(UsageError):
            rationality_test(cfg, 400, times=(0.0, 0.5))

    def test_needs_enough_paths_for_bins(self):
        cfg = cfg_of(signal=DRAWN, kind="bridge")
        with pytest.raises(UsageError):
            rationality_test(cfg, 100, n_bins=20)

    def test_bridge_passes_both_checks(self):
        cfg = cfg_of(signal=DRAWN, dt=0.002, seed=29, kind="bridge")
        rep = rationality_test(cfg, 600, threads=2)
        assert rep.n_paths == 600 and rep.n_excluded == 0
        assert rep.times == (0.25, 0.5, 0.75)
        assert len(rep.ks) == 3 and len(rep.bins) == 60
        assert rep.min_ks_pvalue > 0.01
        assert all(row.n >= 25 for row in rep.bins)
        assert all(row.x_lo <= row.x_hi for row in rep.bins)
        assert rep.max_deviation >= 0.0
        # Quoted prices should track binned payoffs within sampling noise;
        # the worst bin is allowed a mild excursion at this sample size.
        assert rep.max_ratio < 4.0

    def test_demand_pumping_breaks_the_marginal_law(self):
        # Extra Brownian loading in the middle window inflates the demand
        # variance, which the distribution check must flag.
        cfg = cfg_of(rule=catalog_rule("back-identity", c0=0.5),
                     signal=DRAWN, dt=0.00025, seed=31,
                     kind="exploit_c", b=2.0, t1=0.25, t2=0.75,
                     x1=0.0, x2=1.0)
        rep = rationality_test(cfg, 400, n_bins=10)
        mid = [c for c in rep.ks if c.time == 0.5][0]
        assert mid.pvalue < 1e-6

    def test_report_is_thread_invariant(self):
        cfg = cfg_of(signal=DRAWN, dt=0.004, seed=29, kind="bridge")
        assert rationality_test(cfg, 400, threads=1) == rationality_test(
            cfg, 400, threads=4)


class TestConvergence:
    def test_too_few_grid_sizes_rejected(self):
        with pytest.raises(UsageError, match="insufficient"):
            convergence_study(cfg_of(), [0.01, 0.001], 16)

    def test_non_geometric_grid_rejected(self):
        with pytest.raises(UsageError, match="geometric"):
            convergence_study(cfg_of(), [0.01, 0.005, 0.002], 16)

    def test_duplicate_grid_sizes_rejected(self):
        with pytest.raises(UsageError):
            convergence_study(cfg_of(), [0.01, 0.01, 0.0025], 16)

    def test_gaps_shrink_for_noisy_scripted_strategy(self):
        cfg = cfg_of(seed=5, kind="scripted", theta0=0.5, s_drift=1.0,
                     s_load=0.4)
        study = convergence_study(cfg, [0.02, 0.005, 0.00125], 256,
                                  threads=2)
        assert [r.dt for r in study.rows] == [0.02, 0.005, 0.00125]
        assert study.rms_monotone and study.gap_monotone
        assert study.order_rms > 0.3
        assert study.order_gap > 0.3

    def test_bias_column_against_closed_form_target(self):
        cfg = cfg_of(dt=0.01, seed=23, kind="bridge")
        study = convergence_study(cfg, [0.01, 0.0025, 0.000625], 256,
                                  psi_target=1.0)
        assert study.target == 1.0
        for row in study.rows:
            assert row.bias == abs(row.mean - 1.0)
        assert math.isfinite(study.order_bias) or math.isnan(study.order_bias)

    def test_bias_column_absent_without_target(self):
        cfg = cfg_of(seed=5, kind="scripted", s_load=0.3)
        study = convergence_study(cfg, [0.02, 0.005, 0.00125], 64)
        assert all(math.isnan(row.bias) for row in study.rows)
        assert math.isnan(study.order_bias)
