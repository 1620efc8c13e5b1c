"""Closed-form layer: independent oracles, published-table values, properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracesim.analytics import (
    AdoptionBounds,
    DiseaseParams,
    ExtinctionResult,
    OffspringDistribution,
    ROOT_RESIDUAL_TOL,
    adoption_bounds,
    analytic_px0_bracket,
    bounds_table,
    bounds_table_csv,
    effective_r,
    extinction_table_csv,
    finite_cluster_trace_ratio,
    lower_bound,
    mu_k,
    solve_extinction,
    sweep_csv,
    sweep_upper_bound,
    upper_bound,
)

# Published reference values: extinction split per r0 and the adoption-rate
# bound table over (nu, r0), both printed to five decimals.
PI0_TABLE = {3.0: 0.0595, 4.0: 0.0198, 5.0: 0.0070, 6.0: 0.0025}
BOUNDS_TABLE = {
    (0.10, 3.0): (0.94865, 0.95238),
    (0.10, 4.0): (0.96701, 0.96774),
    (0.10, 5.0): (0.97543, 0.97561),
    (0.10, 6.0): (0.98034, 0.98039),
    (0.05, 3.0): (0.97347, 0.97561),
    (0.05, 4.0): (0.98320, 0.98361),
    (0.05, 5.0): (0.98755, 0.98765),
    (0.05, 6.0): (0.99007, 0.99010),
    (0.02, 3.0): (0.98917, 0.99010),
    (0.02, 4.0): (0.99320, 0.99338),
    (0.02, 5.0): (0.99498, 0.99502),
    (0.02, 6.0): (0.99600, 0.99602),
}
TABLE_TOL = 5e-5


def fixed_point_pi0(r0: float, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Independent extinction oracle: iterate x <- exp(r0*(x-1)) from 0.5."""
    x = 0.5
    for _ in range(max_iter):
        nxt = math.exp(r0 * (x - 1.0))
        if abs(nxt - x) < tol:
            return nxt
        x = nxt
    raise AssertionError("fixed-point oracle failed to converge")


def grid_scan_lower_bound(r0: float, nu: float, pi0: float, step: float = 1e-6) -> float:
    """Independent bound oracle: scan p for the quadratic's first sign change."""
    eps = 1.0 / r0
    pi1 = 1.0 - pi0

    def quadratic(p: float) -> float:
        return (
            pi0 * (1.0 - nu) * p * p
            - (pi0 + pi1 * nu + (1.0 - eps) * (1.0 - nu)) * p
            + (1.0 - eps)
        )

    p = step
    prev = quadratic(p)
    while p < 1.0:
        nxt = quadratic(p + step)
        if (prev > 0.0) != (nxt > 0.0):
            return p + step / 2.0
        p += step
        prev = nxt
    raise AssertionError("no sign change found below 1")


class TestDiseaseParams:
    def test_epsilon_is_always_reciprocal(self):
        params = DiseaseParams(r0=3.0, nu=0.1)
        assert params.epsilon == 1.0 / 3.0

    @pytest.mark.parametrize("r0", [1.0, 0.5, -2.0])
    def test_subcritical_rejected(self, r0):
        with pytest.raises(ValueError, match="supercritical"):
            DiseaseParams(r0=r0, nu=0.1)

    @pytest.mark.parametrize("nu", [0.0, 1.0, -0.1, 1.5])
    def test_nu_boundaries_rejected(self, nu):
        with pytest.raises(ValueError):
            DiseaseParams(r0=3.0, nu=nu)


class TestOffspringDistribution:
    def test_poisson_requires_positive_mean(self):
        with pytest.raises(ValueError):
            OffspringDistribution.poisson(0.0)

    def test_deterministic_requires_nonnegative_count(self):
        with pytest.raises(ValueError):
            OffspringDistribution.deterministic(-1)

    def test_deterministic_sampling_consumes_no_randomness(self):
        rng = np.random.default_rng(0)
        before = rng.bit_generator.state
        counts = OffspringDistribution.deterministic(2).sample(rng, 5)
        assert counts.tolist() == [2, 2, 2, 2, 2]
        assert rng.bit_generator.state == before


class TestSolveExtinction:
    @pytest.mark.parametrize("r0,expected", sorted(PI0_TABLE.items()))
    def test_published_table(self, r0, expected):
        ext = solve_extinction(OffspringDistribution.poisson(r0))
        assert ext.pi0 == pytest.approx(expected, abs=TABLE_TOL)
        assert ext.pi1 == pytest.approx(1.0 - expected, abs=TABLE_TOL)

    def test_against_fixed_point_oracle_r0_2(self):
        ext = solve_extinction(OffspringDistribution.poisson(2.0))
        assert ext.pi0 == pytest.approx(fixed_point_pi0(2.0), abs=1e-9)

    def test_residual_and_pair_sum(self):
        ext = solve_extinction(OffspringDistribution.poisson(3.0))
        assert abs(math.log(ext.pi0) - 3.0 * (ext.pi0 - 1.0)) <= 1e-10
        assert abs(ext.pi0 + ext.pi1 - 1.0) <= 1e-12

    def test_subcritical_rejected(self):
        with pytest.raises(ValueError, match="supercritical"):
            solve_extinction(OffspringDistribution.poisson(1.0))

    def test_deterministic_kind_rejected(self):
        with pytest.raises(ValueError, match="poisson"):
            solve_extinction(OffspringDistribution.deterministic(2))

    @settings(max_examples=300, deadline=None)
    @given(st.floats(min_value=1.01, max_value=20.0))
    def test_root_residual_and_below_epsilon(self, r0):
        ext = solve_extinction(OffspringDistribution.poisson(r0))
        assert abs(math.log(ext.pi0) - r0 * (ext.pi0 - 1.0)) <= ROOT_RESIDUAL_TOL
        # Poisson offspring keeps the extinction probability under 1/r0.
        assert ext.pi0 < 1.0 / r0


class TestMuK:
    def test_single_member_equals_nu(self):
        assert mu_k(0.3, 1) == pytest.approx(0.3, abs=1e-15)

    def test_repeated_multiplication_oracle(self):
        survive = 1.0
        for _ in range(20):
            survive *= 0.95
        assert mu_k(0.05, 20) == pytest.approx(1.0 - survive, abs=1e-15)

    def test_two_members_half(self):
        assert mu_k(0.5, 2) == pytest.approx(0.75, abs=1e-15)

    def test_zero_size_rejected(self):
        with pytest.raises(ValueError, match="root"):
            mu_k(0.3, 0)

    def test_strictly_increasing_to_one(self):
        values = [mu_k(0.07, k) for k in range(1, 200)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert mu_k(0.07, 5000) == pytest.approx(1.0, abs=1e-12)


class TestUpperBound:
    @pytest.mark.parametrize(
        "nu,r0",
        [(nu, r0) for (nu, r0) in BOUNDS_TABLE],
    )
    def test_published_table(self, nu, r0):
        params = DiseaseParams(r0=r0, nu=nu)
        assert upper_bound(params) == pytest.approx(
            BOUNDS_TABLE[(nu, r0)][1], abs=TABLE_TOL
        )

    def test_nu_one_boundary_collapses_to_one_minus_eps(self):
        params = DiseaseParams(r0=2.0, nu=0.5)
        assert upper_bound(params, nu=1.0) == pytest.approx(0.5, abs=1e-15)

    def test_monotone_decreasing_in_nu_increasing_in_r0(self):
        grid = [0.02, 0.05, 0.1, 0.2, 0.4]
        for r0 in (3.0, 6.0):
            params = DiseaseParams(r0=r0, nu=0.1)
            vals = [upper_bound(params, nu=nu) for nu in grid]
            assert all(b < a for a, b in zip(vals, vals[1:]))
        low_r0 = upper_bound(DiseaseParams(r0=3.0, nu=0.1))
        high_r0 = upper_bound(DiseaseParams(r0=6.0, nu=0.1))
        assert high_r0 > low_r0


class TestLowerBound:
    @pytest.mark.parametrize(
        "nu,r0",
        [(nu, r0) for (nu, r0) in BOUNDS_TABLE],
    )
    def test_published_table(self, nu, r0):
        params = DiseaseParams(r0=r0, nu=nu)
        ext = solve_extinction(OffspringDistribution.poisson(r0))
        assert lower_bound(params, ext) == pytest.approx(
            BOUNDS_TABLE[(nu, r0)][0], abs=TABLE_TOL
        )

    def test_grid_scan_oracle(self):
        params = DiseaseParams(r0=3.0, nu=0.1)
        ext = solve_extinction(OffspringDistribution.poisson(3.0))
        scanned = grid_scan_lower_bound(3.0, 0.1, ext.pi0)
        assert lower_bound(params, ext) == pytest.approx(scanned, abs=2e-6)

    def test_mismatched_extinction_rejected(self):
        params = DiseaseParams(r0=3.0, nu=0.1)
        ext = solve_extinction(OffspringDistribution.poisson(4.0))
        with pytest.raises(ValueError, match="r0"):
            lower_bound(params, ext)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(min_value=1.05, max_value=15.0),
        st.floats(min_value=0.01, max_value=0.99),
    )
    def test_bracket_consistency(self, r0, nu):
        params = DiseaseParams(r0=r0, nu=nu)
        bounds = adoption_bounds(params)
        assert bounds.p_lower <= bounds.p_upper
        assert bounds.p_upper < 1.0


class TestEffectiveR:
    def test_full_tracing_kills_spread(self):
        assert effective_r(DiseaseParams(r0=4.0, nu=0.1), 1.0) == 0.0

    def test_no_tracing_recovers_r0(self):
        assert effective_r(DiseaseParams(r0=4.0, nu=0.1), 0.0) == 4.0

    def test_linear_formula(self):
        assert effective_r(DiseaseParams(r0=3.0, nu=0.1), 0.7) == pytest.approx(0.9)

    def test_probability_validated(self):
        with pytest.raises(ValueError):
            effective_r(DiseaseParams(r0=3.0, nu=0.1), 1.5)


class TestPx0Bracket:
    def setup_method(self):
        self.params = DiseaseParams(r0=3.0, nu=0.1)
        self.ext = solve_extinction(OffspringDistribution.poisson(3.0))

    def test_low_saturates_at_full_adoption(self):
        low, high = analytic_px0_bracket(self.params, self.ext, 1.0)
        assert low == pytest.approx(1.0, abs=1e-12)
        assert high == pytest.approx(1.0, abs=1e-12)

    def test_arithmetic_oracle_low(self):
        low, _ = analytic_px0_bracket(self.params, self.ext, 0.95)
        assert low == pytest.approx(0.1 * 0.95 / (1.0 - 0.95 * 0.9), abs=1e-12)
        assert low == pytest.approx(0.655172, abs=1e-6)

    def test_arithmetic_oracle_high(self):
        # Same arithmetic with the five-decimal published extinction values;
        # the function uses the full-precision root, hence the 1e-4 slack.
        low_oracle = 0.1 * 0.95 / (1.0 - 0.95 * 0.9)
        high_oracle = 0.95 * 0.0595 + 0.9405 * low_oracle
        assert high_oracle == pytest.approx(0.672715, abs=1e-6)
        _, high = analytic_px0_bracket(self.params, self.ext, 0.95)
        assert high == pytest.approx(high_oracle, abs=1e-4)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=1e-6, max_value=1.0, exclude_min=True))
    def test_low_below_high_and_in_unit_interval(self, p):
        low, high = analytic_px0_bracket(self.params, self.ext, p)
        assert 0.0 <= low <= high <= 1.0

    def test_both_ends_monotone_in_p(self):
        grid = np.linspace(0.05, 1.0, 40)
        lows, highs = zip(
            *(analytic_px0_bracket(self.params, self.ext, p) for p in grid)
        )
        assert all(b >= a for a, b in zip(lows, lows[1:]))
        assert all(b >= a for a, b in zip(highs, highs[1:]))


class TestFiniteClusterTraceRatio:
    def test_k1_closed_form(self):
        p, nu = 0.8, 0.3
        assert finite_cluster_trace_ratio(p, nu, 1) == pytest.approx(
            (1.0 - p * (1.0 - nu)) / nu, abs=1e-12
        )

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(min_value=0.01, max_value=0.99),
        st.floats(min_value=0.01, max_value=0.99),
    )
    def test_decreasing_in_k(self, p, nu):
        ks = np.arange(1, 1001)
        ratios = finite_cluster_trace_ratio(p, nu, ks)
        diffs = np.diff(ratios)
        # Strict decrease until both powers underflow and the ratio pins to 1;
        # past that point only float noise of a few ulp remains.
        assert np.all((diffs < 0) | (ratios[1:] <= 1.0 + 1e-9))
        assert np.all(diffs <= 1e-12)
        assert ratios[-1] >= 1.0 - 1e-12
        assert ratios[0] == pytest.approx((1.0 - p * (1.0 - nu)) / nu, rel=1e-12)


class TestSweep:
    def test_rows_match_direct_calls_and_ordering(self):
        rows = sweep_upper_bound([4.0, 3.0], [0.1, 0.05])
        assert [(r, n) for r, n, _ in rows] == [
            (3.0, 0.05),
            (3.0, 0.1),
            (4.0, 0.05),
            (4.0, 0.1),
        ]
        for r0, nu, value in rows:
            assert value == upper_bound(DiseaseParams(r0=r0, nu=nu))

    def test_curves_stack_by_r0_and_decrease_in_nu(self):
        nu_grid = [round(0.02 + 0.01 * i, 4) for i in range(19)]
        rows = sweep_upper_bound([3.0, 4.0, 5.0, 6.0], nu_grid)
        by_r0 = {}
        for r0, nu, val in rows:
            by_r0.setdefault(r0, []).append(val)
        for values in by_r0.values():
            assert all(b < a for a, b in zip(values, values[1:]))
        for i in range(len(nu_grid)):
            column = [by_r0[r0][i] for r0 in (3.0, 4.0, 5.0, 6.0)]
            assert all(b > a for a, b in zip(column, column[1:]))

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            sweep_upper_bound([], [0.1])
        with pytest.raises(ValueError):
            sweep_upper_bound([3.0], [])

    def test_invalid_nu_rejected(self):
        with pytest.raises(ValueError):
            sweep_upper_bound([3.0], [0.1, 1.0])


class TestResultTypes:
    def test_extinction_result_validates_pair(self):
        with pytest.raises(ValueError):
            ExtinctionResult(pi0=0.1, pi1=0.8, r0=3.0)

    def test_adoption_bounds_validates_order(self):
        with pytest.raises(ValueError):
            AdoptionBounds(p_lower=0.99, p_upper=0.95)

    def test_quadratic_at_one_sanity(self):
        # lower_bound checks the p=1 value internally; a healthy call passes.
        params = DiseaseParams(r0=5.0, nu=0.05)
        ext = solve_extinction(OffspringDistribution.poisson(5.0))
        assert 0.0 < lower_bound(params, ext) < 1.0


class TestCsvEmission:
    def test_bounds_csv_header_and_rounding(self):
        text = bounds_table_csv(bounds_table([3.0], [0.1]))
        lines = text.strip().split("\n")
        assert lines[0] == "r0,nu,p_lower,p_upper"
        assert lines[1] == "3.00000,0.10000,0.94865,0.95238"

    def test_sweep_csv_header(self):
        text = sweep_csv(sweep_upper_bound([3.0], [0.1]))
        assert text.startswith("r0,nu,p_upper\n")
        assert "0.95238" in text

    def test_extinction_csv(self):
        text = extinction_table_csv([3.0, 4.0])
        lines = text.strip().split("\n")
        assert lines[0] == "r0,pi0,pi1,one_minus_eps"
        assert lines[1] == "3.00000,0.05952,0.94048,0.66667"
