import math

import numpy as np
import pytest
from scipy import integrate, stats

from crowdfuse.gaps import (
    GapKind,
    SampleVariance,
    SingularGapError,
    draw_sample_variance,
    draw_sample_variances,
    expected_gap_analytic,
    figure_grid,
    gaussian_limit_check,
    ks_distance,
    monte_carlo_gap,
    realized_gap,
    reliability_variance,
    write_convergence_csv,
    write_grid_csv,
)
from crowdfuse.quincunx import Judge


def quadrature_expected_gap(kind, a, b):
    """Independent oracle for the n = 2 expected gaps.

    With two observations, each sample variance is (sigma^2 / 2) * Z^2 for a
    standard normal Z, and the fused-MSE ratio depends only on the polar
    angle of (Z1, Z2). That reduces the expectation to a one-dimensional
    integral, evaluated here by adaptive quadrature.
    """
    def fused_mse(theta):
        c2, s2 = math.cos(theta) ** 2, math.sin(theta) ** 2
        num = a * (b * s2) ** 2 + b * (a * c2) ** 2
        return num / (a * c2 + b * s2) ** 2

    value, _ = integrate.quad(fused_mse, 0.0, math.pi / 2, limit=200)
    e_kfu = value / (math.pi / 2)
    if kind is GapKind.KFU_VS_KFC:
        return e_kfu - a * b / (a + b)
    if kind is GapKind.EW_VS_KFU:
        return (a + b) / 4.0 - e_kfu
    return a - e_kfu


class TestSampleVarianceDraws:
    def test_mean_matches_cochran(self):
        rng = np.random.default_rng(21)
        for sigma2, expected in [(1.0, 0.5), (4.0, 2.0)]:
            draws = draw_sample_variances(sigma2, 2, 1_000_000, rng)
            stderr = draws.std() / math.sqrt(draws.size)
            assert abs(draws.mean() - expected) < 4 * stderr

    def test_distribution_against_gamma_cdf(self):
        rng = np.random.default_rng(22)
        sigma2 = 1.7
        draws = draw_sample_variances(sigma2, 2, 100_000, rng)
        dist = stats.gamma(a=0.5, scale=2 * sigma2 / 2)
        assert ks_distance(draws, dist.cdf) < 0.005

    def test_downward_bias_is_sigma2_over_n(self):
        # the sample variance underestimates by sigma^2 / n on average
        rng = np.random.default_rng(23)
        for p in (0.6, 0.75, 0.9):
            sigma2 = reliability_variance(p)
            for n in (2, 5):
                draws = draw_sample_variances(sigma2, n, 400_000, rng)
                gap = sigma2 - draws.mean()
                stderr = draws.std() / math.sqrt(draws.size)
                assert abs(gap - sigma2 / n) < 4 * stderr

    def test_scalar_wrapper(self):
        rng = np.random.default_rng(24)
        sv = draw_sample_variance(2.0, 3, rng)
        assert sv.n == 3 and sv.s2 >= 0.0
        with pytest.raises(ValueError):
            draw_sample_variance(0.0, 2, rng)
        with pytest.raises(ValueError):
            draw_sample_variance(1.0, 1, rng)
        with pytest.raises(ValueError):
            SampleVariance(-0.1, 2)


class TestRealizedGap:
    def test_exact_sample_variances_close_no_gap(self):
        gap = realized_gap(
            GapKind.KFU_VS_KFC, 1.0, 3.0, SampleVariance(1.0, 2), SampleVariance(3.0, 2)
        )
        assert gap == pytest.approx(0.0, abs=1e-15)

    def test_estimated_weights_never_beat_true_weights(self):
        rng = np.random.default_rng(25)
        for _ in range(200):
            a, b = rng.uniform(0.1, 2.0, 2)
            s1 = draw_sample_variance(a, 2, rng)
            s2 = draw_sample_variance(b, 2, rng)
            assert realized_gap(GapKind.KFU_VS_KFC, a, b, s1, s2) >= -1e-15

    def test_equal_everything_equal_weights(self):
        gap = realized_gap(
            GapKind.EW_VS_KFU, 2.0, 2.0, SampleVariance(1.3, 2), SampleVariance(1.3, 2)
        )
        assert gap == pytest.approx(0.0, abs=1e-15)

    def test_zero_draws_fall_back_to_true_weights(self):
        gap = realized_gap(
            GapKind.KFU_VS_KFC, 1.0, 3.0, SampleVariance(0.0, 2), SampleVariance(0.0, 2)
        )
        assert gap == 0.0


class TestAnalyticForms:
    def test_matches_quadrature_oracle(self):
        rng = np.random.default_rng(26)
        for _ in range(25):
            p1, p2 = rng.uniform(0.51, 0.99, 2)
            a, b = reliability_variance(p1), reliability_variance(p2)
            if abs(a - b) < 1e-6:
                continue
            for kind in GapKind:
                assert expected_gap_analytic(kind, a, b) == pytest.approx(
                    quadrature_expected_gap(kind, a, b), abs=1e-9
                )

    def test_pinned_values(self):
        assert expected_gap_analytic(GapKind.KFU_VS_KFC, 0.64, 0.36) == pytest.approx(
            0.1271510204081637, abs=1e-13
        )
        ew = expected_gap_analytic(
            GapKind.EW_VS_KFU, reliability_variance(0.99), reliability_variance(0.7)
        )
        assert ew == pytest.approx(0.10197626200771921, abs=1e-13)
        assert ew > 0.0
        sr = expected_gap_analytic(
            GapKind.SR_VS_KFU, reliability_variance(0.95), reliability_variance(0.6)
        )
        assert sr == pytest.approx(-0.11455197851061963, abs=1e-13)
        assert sr < 0.0

    def test_singular_diagonal(self):
        with pytest.raises(SingularGapError):
            expected_gap_analytic(GapKind.KFU_VS_KFC, 1.0, 1.0)
        with pytest.raises(SingularGapError):
            expected_gap_analytic(GapKind.EW_VS_KFU, 0.7, 0.7 + 1e-12)
        # the subset comparison is regular on the diagonal: value a / 4
        assert expected_gap_analytic(GapKind.SR_VS_KFU, 0.8, 0.8) == pytest.approx(0.2)


class TestMonteCarloGap:
    def test_agrees_with_analytic(self):
        rng = np.random.default_rng(27)
        for kind in GapKind:
            est = monte_carlo_gap(kind, 0.9, 0.4, 2, 2_000_000, rng)
            assert abs(est.analytic - est.monte_carlo_mean) < 4 * est.monte_carlo_stderr

    def test_equal_variances_equal_weighting_wins(self):
        rng = np.random.default_rng(28)
        est = monte_carlo_gap(GapKind.EW_VS_KFU, 1.0, 1.0, 2, 500_000, rng)
        assert math.isnan(est.analytic)
        assert est.monte_carlo_mean < 0.0
        # known value -sigma^2 / 4 on the diagonal
        assert abs(est.monte_carlo_mean + 0.25) < 4 * est.monte_carlo_stderr

    def test_nonnegative_expectation(self):
        rng = np.random.default_rng(29)
        est = monte_carlo_gap(GapKind.KFU_VS_KFC, 0.3, 1.4, 2, 200_000, rng)
        assert est.monte_carlo_mean >= -3 * est.monte_carlo_stderr

    def test_swap_symmetry(self):
        rng = np.random.default_rng(30)
        for kind in (GapKind.KFU_VS_KFC, GapKind.EW_VS_KFU):
            fwd = monte_carlo_gap(kind, 0.9, 0.3, 2, 500_000, rng)
            rev = monte_carlo_gap(kind, 0.3, 0.9, 2, 500_000, rng)
            spread = math.hypot(fwd.monte_carlo_stderr, rev.monte_carlo_stderr)
            assert abs(fwd.monte_carlo_mean - rev.monte_carlo_mean) < 3 * spread
        sr_fwd = expected_gap_analytic(GapKind.SR_VS_KFU, 0.9, 0.3)
        sr_rev = expected_gap_analytic(GapKind.SR_VS_KFU, 0.3, 0.9)
        assert abs(sr_fwd - sr_rev) > 0.1

    def test_trial_floor(self):
        rng = np.random.default_rng(31)
        with pytest.raises(ValueError):
            monte_carlo_gap(GapKind.KFU_VS_KFC, 1.0, 2.0, 2, 9_999, rng)

    def test_jobs_do_not_change_results(self):
        one = monte_carlo_gap(
            GapKind.EW_VS_KFU, 0.8, 0.5, 2, 2_000_000, np.random.default_rng(32), jobs=1
        )
        four = monte_carlo_gap(
            GapKind.EW_VS_KFU, 0.8, 0.5, 2, 2_000_000, np.random.default_rng(32), jobs=4
        )
        assert one == four


class TestFigureGrid:
    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            figure_grid(GapKind.KFU_VS_KFC, 9)

    def test_uncertainty_cost_surface(self):
        cells = figure_grid(GapKind.KFU_VS_KFC, 10, fallback_trials=50_000, seed=1)
        assert len(cells) == 100
        assert all(c.value >= 0.0 for c in cells)
        diag = [c for c in cells if c.p1 == c.p2]
        assert len(diag) == 10
        assert all(c.trials == 50_000 and math.isnan(c.analytic) for c in diag)

    def test_equal_weight_surface_signs(self):
        cells = figure_grid(GapKind.EW_VS_KFU, 10, fallback_trials=50_000, seed=2)
        for c in cells:
            if max(c.p1, c.p2) <= 0.951:
                assert c.value < 0.0
            if max(c.p1, c.p2) >= 0.99 and min(c.p1, c.p2) <= 0.9:
                assert c.value > 0.0

    def test_subset_surface_signs(self):
        cells = figure_grid(GapKind.SR_VS_KFU, 10, seed=3)
        assert all(c.trials == 0 for c in cells)  # regular everywhere
        negatives = [c for c in cells if c.value < 0.0]
        assert negatives, "the subset rule should win somewhere"
        assert all(c.p1 >= 0.8 and c.p2 < c.p1 for c in negatives)
        assert all(c.value > 0.0 for c in cells if c.p1 == c.p2)


class TestGaussianLimit:
    def test_ks_distance_matches_scipy(self):
        rng = np.random.default_rng(33)
        x = rng.normal(size=2_000)
        ours = ks_distance(x, stats.norm.cdf)
        assert ours == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)

    def test_perfect_judge_skipped(self):
        rng = np.random.default_rng(34)
        with pytest.warns(UserWarning):
            out = gaussian_limit_check(Judge(1.0), [4, 16], 1_000, rng)
        assert out == []

    def test_odd_count_rejected(self):
        rng = np.random.default_rng(35)
        with pytest.raises(ValueError):
            gaussian_limit_check(Judge(0.75), [5], 1_000, rng)

    def test_monotone_decrease_and_floor(self):
        # The lattice spacing keeps the distance near phi(0) / sqrt(4C(1-p)p);
        # at C = 256, p = 0.75 that floor is ~0.029 (oracle-derived), so the
        # frozen bound is 0.035 rather than anything tighter.
        rng = np.random.default_rng(36)
        out = gaussian_limit_check(Judge(0.75), [4, 16, 64, 256], 100_000, rng)
        values = [d for _, d in out]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[-1] < 0.035

    def test_csv_writers(self, tmp_path):
        grid_path = tmp_path / "grid.csv"
        cells = figure_grid(GapKind.SR_VS_KFU, 10, seed=4)
        write_grid_csv(cells, str(grid_path))
        lines = grid_path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "p1,p2,analytic,mc_mean,mc_stderr,trials"
        assert len(lines) == 101
        conv_path = tmp_path / "conv.csv"
        write_convergence_csv([(4, 0.2), (16, 0.1)], str(conv_path))
        assert conv_path.read_text(encoding="utf-8").splitlines()[0] == "C,ks_distance"
