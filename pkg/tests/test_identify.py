"""Tests for curve scanning, zero refinement, and branch selection.

Structural checks (zero counts, orderings, selection symmetry) run on
moderate panels; the strict location tolerances live in the acceptance
suite.
"""

import numpy as np
import pytest

from conftest import make_spec
from dynpan.errors import InternalConsistencyError, ValidationError
from dynpan.model import (
    StructuralParams,
    forward_map,
    invert_reduced_form,
)
from dynpan.simulate import draw_panel
from dynpan.identify import (
    ObjectiveCurve,
    find_local_minima,
    find_zeros,
    scan_curve,
    select_by_sign,
    two_step_estimator,
    warm_start_pipeline,
    write_curve_csv,
    write_estimate_csv,
)

BETA_GRID = np.round(np.arange(0.0, 2.0001, 0.01), 10)


def synthetic_curve(fn, grid):
    m = np.array([fn(g) for g in grid])
    return ObjectiveCurve(axis="beta", grid=np.asarray(grid, float), m=m,
                          msq=m * m, ses=np.full(len(grid), 0.01),
                          evaluator=fn)


class TestScanCurve:
    def test_benchmark_zero_pair_structure(self, bench200k):
        curve = scan_curve(bench200k, "beta", BETA_GRID)
        zeros = [z for z in find_zeros(curve) if z.converged]
        assert len(zeros) == 2
        lo, hi = zeros[0].location, zeros[1].location
        assert 0.4 < lo < 0.8
        assert 1.4 < hi < 1.8

    def test_grid_validation(self, bench200k):
        with pytest.raises(ValidationError, match="grid"):
            scan_curve(bench200k, "beta", [])
        with pytest.raises(ValidationError, match="grid"):
            scan_curve(bench200k, "beta", [0.5, 0.4])
        with pytest.raises(ValidationError, match="grid"):
            scan_curve(bench200k, "beta", [-2.0, 0.0, 1.0])
        with pytest.raises(ValidationError, match="axis"):
            scan_curve(bench200k, "gamma", [0.0, 1.0])

    def test_rho_scan_locates_three_persistences(self, multi200k):
        grid = np.round(np.arange(-0.895, 0.8951, 0.01), 10)
        curve = scan_curve(multi200k, "rho", grid, family="multi_input")
        zeros = [z for z in find_zeros(curve) if z.converged]
        locs = sorted(z.location for z in zeros)
        assert len(locs) == 3
        assert abs(locs[0] - 0.3) < 0.05
        assert abs(locs[1] - 0.5) < 0.05
        assert abs(locs[2] - 0.7) < 0.05

    def test_rho_scan_poles_are_flagged_unconverged(self, multi200k):
        grid = np.round(np.arange(-0.895, 0.8951, 0.01), 10)
        curve = scan_curve(multi200k, "rho", grid, family="multi_input")
        bad = [z for z in find_zeros(curve) if not z.converged]
        # the concentration denominator vanishes between the true roots
        assert bad, "expected pole crossings to be reported as unconverged"


class TestFindZeros:
    def test_synthetic_linear_root(self):
        curve = synthetic_curve(lambda b: b - 1.0,
                                np.arange(0.0, 2.0001, 0.13))
        roots = find_zeros(curve)
        assert len(roots) == 1
        assert roots[0].location == pytest.approx(1.0, abs=1e-5)
        assert roots[0].converged

    def test_strictly_positive_curve_has_no_roots(self):
        curve = synthetic_curve(lambda b: 1.0 + b * b,
                                np.arange(0.0, 2.0001, 0.1))
        assert find_zeros(curve) == []

    def test_exact_grid_zero_is_reported(self):
        grid = np.array([0.0, 0.5, 1.0])
        m = np.array([1.0, 0.0, 1.0])
        curve = ObjectiveCurve(axis="beta", grid=grid, m=m, msq=m * m,
                               ses=np.ones(3))
        roots = find_zeros(curve)
        assert [r.location for r in roots] == [0.5]

    def test_nan_points_are_skipped(self):
        grid = np.array([0.0, 0.5, 1.0, 1.5])
        m = np.array([1.0, np.nan, -1.0, -2.0])
        curve = ObjectiveCurve(axis="beta", grid=grid, m=m, msq=m * m,
                               ses=np.ones(4))
        assert find_zeros(curve) == []

    def test_bracket_width_invariant(self, bench200k):
        curve = scan_curve(bench200k, "beta", BETA_GRID)
        span = BETA_GRID[-1] - BETA_GRID[0]
        for root in find_zeros(curve):
            if root.converged:
                lo, hi = root.bracket
                assert hi - lo < 1e-6 * span


class TestFindLocalMinima:
    def test_benchmark_minima_coincide_with_zeros(self, bench200k):
        curve = scan_curve(bench200k, "beta", BETA_GRID)
        zeros = [z.location for z in find_zeros(curve) if z.converged]
        minima = find_local_minima(curve)
        for z in zeros:
            assert min(abs(mn.location - z) for mn in minima) < 0.02

    def test_monotone_square_has_no_interior_minimum(self):
        curve = synthetic_curve(lambda b: b + 1.0,
                                np.arange(0.0, 1.0001, 0.1))
        assert find_local_minima(curve) == []

    def test_parabolic_refinement_beats_grid(self):
        # vertex of (b - 0.63)^2 is recovered despite the 0.1 grid
        curve = synthetic_curve(lambda b: b - 0.63,
                                np.arange(0.0, 1.2001, 0.1))
        minima = find_local_minima(curve)
        assert len(minima) == 1
        assert minima[0].location == pytest.approx(0.63, abs=0.01)


class TestTwoStepEstimator:
    def test_sign_restriction_selects_truth(self, bench200k):
        result = two_step_estimator(bench200k, "theta_positive")
        assert not result.degenerate
        assert result.chosen.params.theta > 0
        assert result.chosen.params.beta == pytest.approx(0.6, abs=0.15)
        assert result.rejected.params.beta == pytest.approx(1.6, abs=0.1)

    def test_negative_sign_swaps_branches(self, bench200k):
        pos = two_step_estimator(bench200k, "theta_positive")
        neg = two_step_estimator(bench200k, "theta_negative")
        assert pos.chosen.params == neg.rejected.params
        assert pos.rejected.params == neg.chosen.params

    def test_equal_persistence_reports_degenerate(self, equal_rho_200k):
        result = two_step_estimator(equal_rho_200k)
        assert result.degenerate
        assert result.chosen is None
        assert "degenerate" in result.diagnosis

    def test_pseudo_parameter_panel_gives_same_branch_pair(self):
        # observational equivalence: simulating at the other branch's
        # parameters produces the same reduced form, hence the same pair
        panel = draw_panel(make_spec(beta=1.6, theta=-1.0, rho_omega=0.5,
                                     rho_x=0.7))
        result = two_step_estimator(panel, "theta_positive")
        assert result.chosen.params.beta == pytest.approx(0.6, abs=0.15)
        assert result.rejected.params.beta == pytest.approx(1.6, abs=0.1)


class TestSelectBySign:
    def test_partition(self):
        s = StructuralParams(beta=0.6, theta=1.0, rho_omega=0.7, rho_x=0.5,
                             alpha=1.0, pi=0.0)
        branches = invert_reduced_form(forward_map(s))
        pos = select_by_sign(branches, "theta_positive")
        neg = select_by_sign(branches, "theta_negative")
        assert {pos.branch_sign, neg.branch_sign} == {"plus", "minus"}
        assert pos.params.beta < neg.params.beta  # gap is 1/theta > 0

    def test_same_sign_guard(self):
        s = StructuralParams(beta=0.6, theta=1.0, rho_omega=0.7, rho_x=0.5)
        plus, _ = invert_reduced_form(forward_map(s))
        with pytest.raises(InternalConsistencyError):
            select_by_sign((plus, plus), "theta_positive")

    def test_bad_sign_label(self):
        s = StructuralParams(beta=0.6, theta=1.0, rho_omega=0.7, rho_x=0.5)
        branches = invert_reduced_form(forward_map(s))
        with pytest.raises(ValidationError):
            select_by_sign(branches, "positive")


class TestZeroPairOrdering:
    def test_negative_theta_reverses_order(self):
        panel = draw_panel(make_spec(theta=-1.0, n_firms=20000, seed=5))
        grid = np.round(np.arange(-1.0, 1.5001, 0.01), 10)
        curve = scan_curve(panel, "beta", grid)
        zeros = [z.location for z in find_zeros(curve) if z.converged]
        assert len(zeros) == 2
        # pseudo = beta + 1/theta = -0.4 now sits below the truth
        assert -0.7 < zeros[0] < -0.1
        assert 0.35 < zeros[1] < 0.85


class TestWarmStart:
    def test_reduced_form_start(self, bench200k):
        ws = warm_start_pipeline(bench200k, "reduced_form_start",
                                 "theta_positive")
        assert ws.point.alpha == pytest.approx(1.0, abs=0.15)
        assert ws.point.beta == pytest.approx(0.6, abs=0.15)
        assert ws.point.rho == pytest.approx(0.7, abs=0.1)
        assert not ws.flagged

    def test_predetermined_start_on_predetermined_panel(self, pred200k):
        ws = warm_start_pipeline(pred200k, "predetermined_start")
        assert not ws.flagged
        assert ws.point.beta == pytest.approx(0.6, abs=0.1)
        assert ws.point.rho == pytest.approx(0.7, abs=0.1)
        assert ws.point.alpha == pytest.approx(1.0, abs=0.15)

    def test_strategy_mismatch_is_flagged(self, bench200k):
        ws = warm_start_pipeline(bench200k, "predetermined_start")
        assert ws.flagged
        assert "biased" in ws.note

    def test_unknown_strategy(self, bench200k):
        with pytest.raises(ValidationError):
            warm_start_pipeline(bench200k, "cold_start")


class TestCsvOutputs:
    def test_curve_csv_format(self, tmp_path):
        curve = synthetic_curve(lambda b: b - 1.0,
                                np.arange(0.0, 2.0001, 0.25))
        find_zeros(curve)
        find_local_minima(curve)
        out = tmp_path / "curve.csv"
        write_curve_csv(curve, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "axis_value,m,objective"
        assert sum(1 for ln in lines if not ln.startswith("#")) == 1 + 9
        assert any(ln.startswith("# zero,") for ln in lines)

    def test_estimate_csv_has_both_branches(self, bench200k, tmp_path):
        result = two_step_estimator(bench200k)
        out = tmp_path / "est.csv"
        write_estimate_csv(result, out)
        lines = out.read_text().splitlines()
        assert lines[0].startswith("branch,selected")
        body = [ln for ln in lines if not ln.startswith("#")]
        assert len(body) == 3
        assert any(ln.startswith("plus,1,") or ln.startswith("minus,1,")
                   for ln in body)

    def test_degenerate_estimate_csv(self, equal_rho_200k, tmp_path):
        result = two_step_estimator(equal_rho_200k)
        out = tmp_path / "deg.csv"
        write_estimate_csv(result, out)
        text = out.read_text()
        assert "# degenerate," in text
