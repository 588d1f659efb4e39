"""Tests for the IV kernel, residual families, and moment machinery.

Per-observation identities are checked against the stored latent shocks
(the simulator retains them for exactly this purpose).  Large-sample
moment checks use the 200k-observation panels from conftest; tolerances
sit at 4-5 sigma of the measured sampling noise.
"""

import numpy as np
import pytest

from conftest import DEFAULTS, make_spec
from dynpan.errors import RankDeficiencyError, ValidationError
from dynpan.model import ParamPoint, forward_map, pseudo_point
from dynpan.simulate import draw_panel
from dynpan.estimate import (
    BENCHMARK_INSTRUMENTS,
    CONCENTRATED_BETA_INSTRUMENTS,
    FIXED_EFFECTS_INSTRUMENTS,
    InstrumentSpec,
    MULTI_INPUT_INSTRUMENTS,
    PREDETERMINED_INSTRUMENTS,
    concentrate_beta,
    concentrate_rho,
    double_diff_residual,
    fit_reduced_form,
    gmm_objective,
    instrument_matrix,
    moment_stats,
    multi_input_residual,
    quasi_diff_residual,
    two_sls,
    write_iv_fit_csv,
    write_moment_report_csv,
)

TRUTH = ParamPoint(alpha=1.0, beta=0.6, rho=0.7)
PSEUDO = pseudo_point(DEFAULTS)  # (1.0, 1.6, 0.5)


class TestTwoSls:
    def test_equals_ols_when_instruments_are_regressors(self):
        rng = np.random.default_rng(1)
        X = np.column_stack([np.ones(500), rng.standard_normal(500)])
        y = X @ np.array([1.0, 2.0]) + rng.standard_normal(500)
        fit = two_sls(y, X, X)
        ols = np.linalg.solve(X.T @ X, X.T @ y)
        assert fit.coefficients == pytest.approx(ols, abs=1e-12)

    def test_consistency_with_endogenous_regressor(self):
        # x is endogenous through e; z shifts x but not e
        rng = np.random.default_rng(2)
        n = 100_000
        z = rng.standard_normal(n)
        e = rng.standard_normal(n)
        x = z + 0.8 * e + 0.5 * rng.standard_normal(n)
        y = 2.0 + 3.0 * x + e
        fit = two_sls(y, np.column_stack([np.ones(n), x]),
                      np.column_stack([np.ones(n), z]))
        assert fit.coefficients == pytest.approx((2.0, 3.0), abs=0.02)

    def test_collinear_instruments_raise(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(100)
        X = np.column_stack([np.ones(100), x])
        Z = np.column_stack([np.ones(100), np.ones(100) * 2.0])
        with pytest.raises(RankDeficiencyError, match="pivot"):
            two_sls(x, X, Z)

    def test_over_identified_shape_rejected(self):
        with pytest.raises(ValidationError):
            two_sls(np.ones(10), np.ones((10, 1)), np.ones((10, 2)))

    def test_residual_orthogonality_in_sample(self, bench200k):
        rf, fit_y, fit_x = fit_reduced_form(bench200k)
        for fit in (fit_y, fit_x):
            y1 = bench200k.y[:, :-2].ravel()
            Z = np.column_stack([np.ones(y1.size), y1,
                                 bench200k.x[:, 1:-1].ravel()])
            scale = np.abs(Z * fit.residuals[:, None]).mean()
            assert np.max(np.abs(Z.T @ fit.residuals)) / fit.n_obs \
                < 1e-8 * scale


class TestResidualIdentities:
    def test_truth_recovers_productivity_innovation(self):
        panel = draw_panel(make_spec(sigma_eta=0.0, n_firms=2000))
        r = quasi_diff_residual(panel, TRUTH)
        assert np.allclose(r, panel.xi[:, 1:], rtol=1e-12, atol=1e-12)

    def test_pseudo_recovers_input_innovation(self):
        panel = draw_panel(make_spec(sigma_eta=0.0, n_firms=2000))
        r = quasi_diff_residual(panel, PSEUDO)
        assert np.allclose(r, -panel.u[:, 1:], rtol=1e-12, atol=1e-12)

    def test_pseudo_with_negative_theta(self):
        s = make_spec(sigma_eta=0.0, n_firms=2000, theta=-1.0, pi=0.3)
        panel = draw_panel(s)
        point = pseudo_point(s.structural)
        r = quasi_diff_residual(panel, point)
        assert np.allclose(r, -panel.u[:, 1:] / -1.0, rtol=1e-12, atol=1e-12)

    def test_zero_noise_residual_vanishes(self):
        panel = draw_panel(make_spec(sigma_xi=0.0, sigma_u=0.0,
                                     sigma_eta=0.0, n_firms=50))
        assert np.allclose(quasi_diff_residual(panel, TRUTH), 0.0,
                           atol=1e-14)

    def test_double_diff_truth_is_innovation_difference(self):
        panel = draw_panel(make_spec("fixed_effects", sigma_eta=0.0,
                                     n_firms=2000))
        r = double_diff_residual(panel, 0.6, 0.7)
        want = panel.xi[:, 2:] - panel.xi[:, 1:-1]
        assert np.allclose(r, want, rtol=1e-12, atol=1e-12)

    def test_multi_input_truth_is_innovation(self):
        panel = draw_panel(make_spec("multi_input", sigma_eta=0.0,
                                     n_firms=2000))
        r = multi_input_residual(panel, 1.0, 0.6, 0.3, 0.7)
        assert np.allclose(r, panel.xi[:, 1:], rtol=1e-12, atol=1e-12)

    def test_multi_input_requires_z(self, bench200k):
        with pytest.raises(ValidationError, match="z"):
            multi_input_residual(bench200k, 1.0, 0.6, 0.3, 0.7)


class TestGmmObjective:
    def test_truth_objective_at_noise_level(self, bench200k):
        rep = gmm_objective(bench200k, "quasi_diff", TRUTH)
        bound = float(rep.std_errors @ rep.std_errors)
        assert rep.objective < 10.0 * bound

    def test_pseudo_objective_equally_small(self, bench200k):
        rep = gmm_objective(bench200k, "quasi_diff", PSEUDO)
        bound = float(rep.std_errors @ rep.std_errors)
        assert rep.objective < 10.0 * bound

    def test_orthogonality_over_seeds(self):
        # truth and pseudo moments stay within 4 se across 20 seeds at the
        # full 200k-observation design
        for seed in range(20):
            panel = draw_panel(make_spec(seed=seed))
            for point in (TRUTH, PSEUDO):
                rep = gmm_objective(panel, "quasi_diff", point)
                assert np.max(np.abs(rep.t_stats)) < 4.0, (seed, point)

    def test_off_solution_moments_are_large(self, bench200k):
        rep = gmm_objective(bench200k, "quasi_diff",
                            ParamPoint(1.0, 1.1, 0.6))
        assert np.max(np.abs(rep.t_stats)) > 10.0

    def test_predetermined_timing_kills_pseudo(self, pred200k):
        rep = gmm_objective(pred200k, "quasi_diff", PSEUDO,
                            instruments=PREDETERMINED_INSTRUMENTS)
        assert np.max(np.abs(rep.t_stats)) > 5.0
        rep = gmm_objective(pred200k, "quasi_diff", TRUTH,
                            instruments=PREDETERMINED_INSTRUMENTS)
        assert np.max(np.abs(rep.t_stats)) < 4.0

    def test_fixed_effects_pseudo_survives_double_difference(self, fe200k):
        for beta, rho in ((0.6, 0.7), (1.6, 0.5)):
            rep = gmm_objective(fe200k, "double_diff", (beta, rho))
            assert np.max(np.abs(rep.t_stats)) < 4.0, (beta, rho)

    def test_multi_input_spurious_points(self, multi200k):
        # linear-combination algebra: eliminating one market factor leaves
        # the other's persistence as a spurious quasi-difference solution
        ext = multi200k.spec.ext
        s = multi200k.spec.structural
        for cx, cz, rho in ((ext.delta_kappa, ext.theta_kappa, ext.rho_z),
                            (ext.delta_wp, ext.theta_wp, s.rho_x)):
            denom = cx * ext.theta_omega - cz * ext.delta_omega
            alpha_s = s.alpha - (cx * s.pi - cz * ext.pi_z) / denom
            beta_s = s.beta + cx / denom
            gamma_s = ext.gamma - cz / denom
            rep = gmm_objective(multi200k, "multi_input",
                                (alpha_s, beta_s, gamma_s, rho))
            assert np.max(np.abs(rep.t_stats)) < 4.0, rho
        rep = gmm_objective(multi200k, "multi_input", (1.0, 0.6, 0.3, 0.7))
        assert np.max(np.abs(rep.t_stats)) < 4.0

    def test_two_step_scaling_invariance(self, bench200k):
        r = quasi_diff_residual(bench200k, TRUTH)[:, 1:].ravel()
        Z = instrument_matrix(bench200k, BENCHMARK_INSTRUMENTS, 2)
        _, obj, _ = moment_stats(Z, r, "two_step")
        scaled = Z * np.array([1.0, 50.0, 1.0, 0.02])
        _, obj2, _ = moment_stats(scaled, r, "two_step")
        assert obj2 == pytest.approx(obj, rel=1e-8)
        # identity weighting is not scale invariant; sanity-check contrast
        _, obj_id, _ = moment_stats(Z, r, "identity")
        _, obj_id2, _ = moment_stats(scaled, r, "identity")
        assert obj_id2 != pytest.approx(obj_id, rel=1e-3)

    def test_insufficient_periods(self):
        panel = draw_panel(make_spec(n_firms=100, n_periods=4))
        with pytest.raises(ValidationError, match="periods"):
            gmm_objective(panel, "quasi_diff", TRUTH,
                          instruments=InstrumentSpec(("const", "x_lag4")))

    def test_bad_weighting_rejected(self, bench200k):
        with pytest.raises(ValidationError, match="weighting"):
            gmm_objective(bench200k, "quasi_diff", TRUTH, weighting="ridge")


class TestFitReducedForm:
    def test_consistent_for_forward_map(self, bench200k):
        rf, _, _ = fit_reduced_form(bench200k)
        truth = forward_map(DEFAULTS)
        devs = np.array(rf.as_tuple()) - np.array(truth.as_tuple())
        assert np.max(np.abs(devs)) < 0.08

    def test_zero_noise_is_rank_deficient(self):
        panel = draw_panel(make_spec(sigma_xi=0.0, sigma_u=0.0,
                                     sigma_eta=0.0, n_firms=100))
        with pytest.raises(RankDeficiencyError):
            fit_reduced_form(panel)

    def test_no_measurement_error_makes_ols_match_iv(self, bench200k_eta0):
        rf, _, _ = fit_reduced_form(bench200k_eta0)
        y, x = bench200k_eta0.y, bench200k_eta0.x
        n = y.shape[0] * (y.shape[1] - 2)
        R = np.column_stack([np.ones(n), y[:, 1:-1].ravel(),
                             x[:, 1:-1].ravel()])
        ols_y = two_sls(y[:, 2:].ravel(), R, R).coefficients
        ols_x = two_sls(x[:, 2:].ravel(), R, R).coefficients
        iv = np.array(rf.as_tuple())
        ols = np.array([ols_y[0], ols_y[1], ols_y[2],
                        ols_x[0], ols_x[1], ols_x[2]])
        assert np.max(np.abs(iv - ols)) < 0.03

    def test_root_n_convergence_rate(self):
        sizes = (2000, 8000, 32000)
        truth = np.array(forward_map(DEFAULTS).as_tuple())
        rmse = []
        for n_firms in sizes:
            sq = np.zeros(6)
            n_seeds = 24
            for seed in range(n_seeds):
                panel = draw_panel(make_spec(n_firms=n_firms, seed=100 + seed))
                rf, _, _ = fit_reduced_form(panel)
                sq += (np.array(rf.as_tuple()) - truth) ** 2
            rmse.append(np.sqrt(sq.mean() / n_seeds))
        slope = np.polyfit(np.log([s * 5 for s in sizes]), np.log(rmse), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.15)


class TestConcentrateBeta:
    def test_truth_slope_recovers_output_persistence(self, bench200k):
        cb = concentrate_beta(bench200k, 0.6)
        assert cb.rho == pytest.approx(0.7, abs=0.02)
        assert abs(cb.moment) < 5.0 * cb.moment_se

    def test_pseudo_slope_recovers_input_persistence(self, bench200k):
        cb = concentrate_beta(bench200k, 1.6)
        assert cb.rho == pytest.approx(0.5, abs=0.02)
        assert abs(cb.moment) < 5.0 * cb.moment_se

    def test_zero_noise_rank_error(self):
        panel = draw_panel(make_spec(sigma_xi=0.0, sigma_u=0.0,
                                     sigma_eta=0.0, n_firms=100))
        with pytest.raises(RankDeficiencyError):
            concentrate_beta(panel, 0.6)


class TestConcentrateRho:
    def test_true_persistence_recovers_true_slope(self, bench200k):
        cr = concentrate_rho(bench200k, 0.7)
        assert cr.coefficients["beta"] == pytest.approx(0.6, abs=0.05)
        assert np.max(np.abs(cr.moments / cr.moment_ses)) < 4.0

    def test_input_persistence_recovers_pseudo_slope(self, bench200k):
        cr = concentrate_rho(bench200k, 0.5)
        assert cr.coefficients["beta"] == pytest.approx(1.6, abs=0.05)
        assert np.max(np.abs(cr.moments / cr.moment_ses)) < 4.0

    def test_other_persistence_fails_overidentification(self, bench200k):
        cr = concentrate_rho(bench200k, 0.0)
        assert np.max(np.abs(cr.moments / cr.moment_ses)) > 5.0

    def test_multi_input_three_valid_persistences(self, multi200k):
        for rho in (0.7, 0.5, 0.3):
            cr = concentrate_rho(multi200k, rho, family="multi_input")
            assert np.max(np.abs(cr.moments / cr.moment_ses)) < 4.0, rho
        cr = concentrate_rho(multi200k, 0.0, family="multi_input")
        assert np.max(np.abs(cr.moments / cr.moment_ses)) > 5.0

    def test_multi_input_spurious_coefficients_match_algebra(self, multi200k):
        cr = concentrate_rho(multi200k, 0.5, family="multi_input")
        assert cr.coefficients["beta"] == pytest.approx(2.6, abs=0.08)
        assert cr.coefficients["gamma"] == pytest.approx(-0.7, abs=0.08)
        cr = concentrate_rho(multi200k, 0.3, family="multi_input")
        assert cr.coefficients["beta"] == pytest.approx(-0.4, abs=0.08)
        assert cr.coefficients["gamma"] == pytest.approx(2.3, abs=0.08)

    def test_unknown_family_rejected(self, bench200k):
        with pytest.raises(ValidationError, match="family"):
            concentrate_rho(bench200k, 0.5, family="double_diff")


class TestCsvExports:
    def test_moment_report_rows(self, bench200k, tmp_path):
        rep = gmm_objective(bench200k, "quasi_diff", TRUTH)
        out = tmp_path / "mom.csv"
        write_moment_report_csv(rep, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "name,value"
        assert lines[1].startswith("moment[const],")
        assert any(line.startswith("objective,") for line in lines)

    def test_iv_fit_rows(self, bench200k, tmp_path):
        _, fit_y, _ = fit_reduced_form(bench200k)
        out = tmp_path / "fit.csv"
        write_iv_fit_csv(fit_y, out)
        lines = out.read_text().splitlines()
        assert lines[1].startswith("coef[const],")
        assert any(line.startswith("se[y_lag1],") for line in lines)


class TestInstrumentSpec:
    def test_named_families(self):
        assert BENCHMARK_INSTRUMENTS.names == ("const", "x_lag1", "x_lag2",
                                               "y_lag2")
        assert set(PREDETERMINED_INSTRUMENTS.names) == \
            set(BENCHMARK_INSTRUMENTS.names) | {"x_lag0"}
        assert CONCENTRATED_BETA_INSTRUMENTS.names == ("x_lag1",)

    def test_max_lag(self):
        assert BENCHMARK_INSTRUMENTS.max_lag == 2
        assert FIXED_EFFECTS_INSTRUMENTS.max_lag == 3
        assert PREDETERMINED_INSTRUMENTS.max_lag == 2
        assert MULTI_INPUT_INSTRUMENTS.needs_z()

    def test_bad_names_rejected(self):
        with pytest.raises(ValidationError):
            InstrumentSpec(("w_lag1",))
        with pytest.raises(ValidationError):
            InstrumentSpec(("x_lagX",))
