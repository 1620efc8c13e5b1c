"""Cluster simulation: oracle checks, determinism, coupling, sandwiches."""

import math

import numpy as np
import pytest

from tracesim.analytics import (
    DiseaseParams,
    OffspringDistribution,
    analytic_px0_bracket,
    solve_extinction,
)
from tracesim.montecarlo import (
    REALIZED,
    SURVEILLED,
    MCEstimate,
    estimate_pstar,
    estimate_px0,
    estimates_csv,
    simulate_cluster,
    trial_seed,
    wilson_interval,
)

PARAMS = DiseaseParams(r0=3.0, nu=0.1)
POISSON3 = OffspringDistribution.poisson(3.0)


class TestWilsonInterval:
    def test_brackets_proportion(self):
        low, high = wilson_interval(80, 100)
        assert low < 0.8 < high

    def test_degenerate_extremes(self):
        low, high = wilson_interval(0, 10)
        assert low == 0.0 and high > 0.0
        low, high = wilson_interval(10, 10)
        assert low < 1.0 and high == 1.0

    def test_known_value(self):
        # Nominal 95% interval for 5/10 is roughly (0.237, 0.763).
        low, high = wilson_interval(5, 10)
        assert low == pytest.approx(0.2366, abs=2e-3)
        assert high == pytest.approx(0.7634, abs=2e-3)

    def test_needs_trials(self):
        with pytest.raises(ValueError):
            wilson_interval(0, 0)


class TestSimulateCluster:
    def test_identical_seed_identical_outcome(self):
        a = simulate_cluster(PARAMS, POISSON3, 0.9, 500, 1234, keep_nodes=True)
        b = simulate_cluster(PARAMS, POISSON3, 0.9, 500, 1234, keep_nodes=True)
        assert a == b

    def test_node_ids_contiguous_parents_earlier(self):
        out = simulate_cluster(PARAMS, POISSON3, 0.9, 200, 99, keep_nodes=True)
        assert [n.id for n in out.nodes] == list(range(out.size))
        assert out.nodes[0].parent is None
        assert all(n.parent < n.id for n in out.nodes[1:])

    def test_universal_adoption_traces_growing_clusters(self):
        # A deterministic one-child chain never goes extinct; with everyone
        # adopting, tracing succeeds as soon as any member turns severe.
        chain = OffspringDistribution.deterministic(1)
        for seed in range(30):
            out = simulate_cluster(PARAMS, chain, 1.0, 2000, seed)
            assert out.traced, f"seed {seed} missed a fully-adopting chain"

    def test_zero_adoption_never_traces(self):
        for seed in range(30):
            out = simulate_cluster(PARAMS, POISSON3, 0.0, 500, seed)
            assert not out.traced
            out = simulate_cluster(PARAMS, POISSON3, 0.0, 500, seed, detection=SURVEILLED)
            assert not out.traced

    def test_singleton_traced_frequency_matches_severity(self):
        # Singleton clusters under full adoption are traced exactly when the
        # root is severe, so the traced frequency estimates nu.
        singleton = OffspringDistribution.deterministic(0)
        n = 100_000
        traced = sum(
            simulate_cluster(PARAMS, singleton, 1.0, 10, trial_seed(77, i)).traced
            for i in range(n)
        )
        low, high = wilson_interval(traced, n)
        assert low <= PARAMS.nu <= high

    def test_singleton_surveilled_always_detected(self):
        singleton = OffspringDistribution.deterministic(0)
        out = simulate_cluster(PARAMS, singleton, 1.0, 10, 5, detection=SURVEILLED)
        assert out.detection_index == 1
        assert out.traced

    def test_truncated_no_severe_is_untraced_both_models(self):
        # nu tiny enough that a 50-node cap is reached without any severe
        # member; the truncated outcome must stay untraced conservatively.
        params = DiseaseParams(r0=3.0, nu=1e-9)
        chain = OffspringDistribution.deterministic(2)
        for mode in (REALIZED, SURVEILLED):
            out = simulate_cluster(params, chain, 1.0, 50, 3, detection=mode)
            assert out.truncated and out.size == 50
            assert out.detection_index is None
            assert not out.traced

    def test_detection_index_is_first_severe_in_infection_order(self):
        out = simulate_cluster(PARAMS, POISSON3, 0.9, 500, 2024, keep_nodes=True)
        severe_ids = [n.id for n in out.nodes if n.severe]
        if out.truncated and not severe_ids:
            assert out.detection_index is None
        elif severe_ids:
            assert out.detection_index == severe_ids[0] + 1

    def test_traced_requires_adopter_prefix(self):
        for seed in range(200):
            out = simulate_cluster(PARAMS, POISSON3, 0.7, 300, seed, keep_nodes=True)
            if out.detection_index is None:
                assert not out.traced
            else:
                prefix = out.nodes[: out.detection_index]
                assert out.traced == all(n.adopter for n in prefix)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            simulate_cluster(PARAMS, POISSON3, 1.2, 100, 0)
        with pytest.raises(ValueError):
            simulate_cluster(PARAMS, POISSON3, 0.5, 0, 0)
        with pytest.raises(ValueError):
            simulate_cluster(PARAMS, POISSON3, 0.5, 100, 0, detection="psychic")


class TestEstimatePx0:
    def test_single_trial_degenerate(self):
        est = estimate_px0(PARAMS, POISSON3, 0.9, 100, 1, 42)
        assert est.p_hat in (0.0, 1.0)
        assert est.ci_low <= est.p_hat <= est.ci_high

    def test_full_adoption_exceeds_growth_probability(self):
        # Every growing cluster is traced under universal adoption, so the
        # estimate cannot fall below pi1 by more than the interval width.
        ext = solve_extinction(POISSON3)
        est = estimate_px0(PARAMS, POISSON3, 1.0, 2000, 20_000, 11, detection=REALIZED)
        assert est.p_hat >= ext.pi1 - (est.ci_high - est.ci_low)
        est_s = estimate_px0(PARAMS, POISSON3, 1.0, 2000, 5_000, 11, detection=SURVEILLED)
        assert est_s.p_hat == 1.0

    def test_surveilled_sandwich_spot_check(self):
        ext = solve_extinction(POISSON3)
        est = estimate_px0(PARAMS, POISSON3, 0.95, 2000, 20_000, 4711)
        low, high = analytic_px0_bracket(PARAMS, ext, 0.95)
        ciw = est.ci_half_width
        assert low - ciw <= est.p_hat <= high + ciw

    def test_realized_obeys_growth_path_bound(self):
        # The first-severe event without conditioning satisfies the weaker
        # one-sided bound pi1 * low <= P(X=0) <= high.
        ext = solve_extinction(POISSON3)
        est = estimate_px0(PARAMS, POISSON3, 0.95, 2000, 20_000, 4711, detection=REALIZED)
        low, high = analytic_px0_bracket(PARAMS, ext, 0.95)
        ciw = est.ci_half_width
        assert ext.pi1 * low - ciw <= est.p_hat <= high + ciw

    def test_monotone_in_p_with_common_seeds(self):
        # Common random numbers couple the per-node adoption uniforms, so the
        # estimate is nondecreasing in p exactly, not just in expectation.
        estimates = [
            estimate_px0(PARAMS, POISSON3, p, 500, 2_000, 314).p_hat
            for p in (0.3, 0.6, 0.9, 0.99)
        ]
        assert all(b >= a for a, b in zip(estimates, estimates[1:]))

    def test_truncation_soundness(self):
        small = estimate_px0(PARAMS, POISSON3, 0.95, 1_000, 5_000, 2718)
        large = estimate_px0(PARAMS, POISSON3, 0.95, 10_000, 5_000, 2718)
        ciw = small.ci_half_width + large.ci_half_width
        assert abs(small.p_hat - large.p_hat) <= 2.0 * 0.9**1000 + ciw

    def test_worker_count_invariance(self):
        kwargs = dict(p=0.9, cap=300, n_trials=600, master_seed=5)
        one = estimate_px0(PARAMS, POISSON3, **kwargs, workers=1)
        two = estimate_px0(PARAMS, POISSON3, **kwargs, workers=2)
        five = estimate_px0(PARAMS, POISSON3, **kwargs, workers=5)
        assert one == two == five

    def test_r_e_hat_matches_formula(self):
        est = estimate_px0(PARAMS, POISSON3, 0.9, 200, 500, 9)
        assert est.r_e_hat == pytest.approx(3.0 * (1.0 - est.p_hat), abs=1e-12)


class TestEstimatePstar:
    def test_hopeless_grid_returns_none_with_curve(self):
        params = DiseaseParams(r0=4.0, nu=0.1)
        dist = OffspringDistribution.poisson(4.0)
        result = estimate_pstar(
            params, dist, cap=300, n_trials_per_point=800,
            p_grid=[0.1, 0.3, 0.45], master_seed=21,
        )
        assert result.p_star is None
        assert len(result.curve) == 3
        assert all(pt.re_ci_high >= 1.0 for pt in result.curve)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            estimate_pstar(PARAMS, POISSON3, 100, 10, [], 0)
        with pytest.raises(ValueError):
            estimate_pstar(PARAMS, POISSON3, 100, 10, [0.9, 0.5], 0)
        with pytest.raises(ValueError):
            estimate_pstar(PARAMS, POISSON3, 100, 10, [0.5, 1.0], 0)

    def test_curve_is_monotone_under_common_seeds(self):
        result = estimate_pstar(
            PARAMS, POISSON3, cap=500, n_trials_per_point=1_500,
            p_grid=[0.5, 0.7, 0.9, 0.97], master_seed=77,
        )
        p_hats = [pt.estimate.p_hat for pt in result.curve]
        assert all(b >= a for a, b in zip(p_hats, p_hats[1:]))
        re_hats = [pt.estimate.r_e_hat for pt in result.curve]
        assert all(b <= a for a, b in zip(re_hats, re_hats[1:]))

    def test_csv_shape(self):
        result = estimate_pstar(
            PARAMS, POISSON3, cap=200, n_trials_per_point=200,
            p_grid=[0.5, 0.9], master_seed=3,
        )
        text = estimates_csv(result.curve)
        lines = text.strip().split("\n")
        assert lines[0] == "p,p_hat,ci_low,ci_high,re_hat"
        assert len(lines) == 3


class TestTrialSeeds:
    def test_distinct_and_stable(self):
        a = trial_seed(1, 0)
        b = trial_seed(1, 1)
        assert np.random.default_rng(a).random() != np.random.default_rng(b).random()
        again = trial_seed(1, 0)
        assert (
            np.random.default_rng(a).random() == np.random.default_rng(again).random()
        )
