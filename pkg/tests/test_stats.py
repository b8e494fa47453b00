import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from epitesting.stats import kruskal_wallis, median_ci, wilcoxon_signed_rank


def brute_force_wilcoxon(d, alternative="two_sided"):
    """Exhaustive 2^n sign-flip null distribution of W+ (zeros dropped)."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    ranks = sps.rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    sums = np.array([sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product((0, 1), repeat=len(d))])
    p_le = np.mean(sums <= w + 1e-9)
    p_ge = np.mean(sums >= w - 1e-9)
    if alternative == "two_sided":
        return min(1.0, 2 * min(p_le, p_ge))
    return p_ge if alternative == "greater" else p_le


class TestWilcoxon:
    def test_all_positive_six(self):
        res = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6])
        assert res.p_value == pytest.approx(2 / 64)
        assert res.method == "exact" and res.statistic == 21

    def test_symmetric_pair(self):
        assert wilcoxon_signed_rank([1, -1]).p_value == 1.0

    def test_paired_form(self):
        x, y = [3.0, 5, 7, 2], [1.0, 1, 1, 1]
        assert wilcoxon_signed_rank(x, y) == wilcoxon_signed_rank(np.subtract(x, y))

    def test_zero_differences_dropped(self):
        res = wilcoxon_signed_rank([0, 0, 1, 2, 3])
        assert res.n_effective == 3

    def test_errors(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([0, 0, 0])
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([1])
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([1, 2], alternative="up")

    @pytest.mark.parametrize("alternative", ["two_sided", "less", "greater"])
    def test_brute_force(self, alternative):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(2, 11))
            d = np.round(rng.normal(0.3, 1, n), 1)  # rounding creates ties and zeros
            if not np.any(d):
                continue
            p = wilcoxon_signed_rank(d, alternative=alternative).p_value
            assert p == pytest.approx(brute_force_wilcoxon(d, alternative), abs=1e-12)

    def test_matches_scipy_exact_without_ties(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            d = rng.normal(0.2, 1, 15)
            ours = wilcoxon_signed_rank(d).p_value
            ref = sps.wilcoxon(d, method="exact").pvalue
            assert ours == pytest.approx(ref, rel=1e-9)

    def test_normal_approx_beyond_25(self):
        d = np.arange(1, 31) * np.where(np.arange(30) % 3 == 0, -1, 1)
        res = wilcoxon_signed_rank(d)
        assert res.method == "normal_approx"
        ref = sps.wilcoxon(d, method="approx", correction=True).pvalue
        assert res.p_value == pytest.approx(ref, rel=1e-6)

    def test_exact_and_normal_agree_at_25(self):
        from epitesting import stats

        rng = np.random.default_rng(11)
        for _ in range(100):
            d = rng.normal(0.1, 1, 25)
            exact = wilcoxon_signed_rank(d).p_value
            old = stats.EXACT_MAX_N
            stats.EXACT_MAX_N = 0
            try:
                approx = wilcoxon_signed_rank(d).p_value
            finally:
                stats.EXACT_MAX_N = old
            assert abs(exact - approx) < 0.01

    @given(st.lists(st.integers(-100, 100), min_size=2, max_size=12),
           st.sampled_from([0.25, 0.5, 2.0, 8.0]), st.integers(-50, 50))
    @settings(max_examples=100, deadline=None)
    def test_affine_invariance(self, x, a, b):
        # exactly representable maps, so ties and zeros survive the transform
        x = np.array(x, dtype=float)
        y = x[::-1] + 1.0
        if not np.any(x - y):
            return
        r1 = wilcoxon_signed_rank(x, y)
        r2 = wilcoxon_signed_rank(a * x + b, a * y + b)
        assert r1.p_value == pytest.approx(r2.p_value, abs=1e-12)

    @given(st.lists(st.integers(-20, 20), min_size=2, max_size=20))
    def test_p_in_unit_interval(self, d):
        if not any(d):
            return
        assert 0 <= wilcoxon_signed_rank(d).p_value <= 1


class TestKruskalWallis:
    def test_identical_groups(self):
        res = kruskal_wallis([[1, 2, 3], [1, 2, 3]])
        assert res.statistic == pytest.approx(0, abs=1e-12) and res.p_value == pytest.approx(1.0)

    def test_hand_example(self):
        res = kruskal_wallis([[1, 2, 3], [10, 11, 12]])
        assert res.statistic == pytest.approx(27 / 7)
        assert res.p_value == pytest.approx(0.0495, abs=1e-4)

    def test_degenerate(self):
        res = kruskal_wallis([[5, 5], [5, 5, 5]])
        assert res.degenerate and res.p_value == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            kruskal_wallis([[1, 2]])
        with pytest.raises(ValueError):
            kruskal_wallis([[1, 2], []])

    def test_matches_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            groups = [np.round(rng.normal(i * 0.3, 1, rng.integers(3, 12)), 1) for i in range(3)]
            ours = kruskal_wallis(groups)
            ref = sps.kruskal(*groups)
            assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
            assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8)

    def test_label_permutation_invariance(self, rng):
        groups = [rng.normal(size=5), rng.normal(size=7), rng.normal(size=4)]
        base = kruskal_wallis(groups).statistic
        for order in ([2, 0, 1], [1, 2, 0]):
            assert kruskal_wallis([groups[i] for i in order]).statistic == pytest.approx(base, rel=1e-12)

    def test_two_groups_tracks_mann_whitney(self, rng):
        # with two groups, H is a function of the rank sum of the first group
        for _ in range(10):
            x, y = rng.normal(size=6), rng.normal(0.5, 1, size=7)
            u = sps.mannwhitneyu(x, y).statistic
            n1, n2 = 6, 7
            n = n1 + n2
            r1 = u + n1 * (n1 + 1) / 2
            h = 12 / (n * (n + 1)) * (r1**2 / n1 + (n * (n + 1) / 2 - r1) ** 2 / n2) - 3 * (n + 1)
            assert kruskal_wallis([x, y]).statistic == pytest.approx(h)


class TestMedianCI:
    def test_one_to_nine(self):
        assert median_ci(range(1, 10)) == (5.0, 2.0, 8.0)

    def test_constant(self):
        assert median_ci([4.2] * 10) == (4.2, 4.2, 4.2)

    def test_too_few(self):
        with pytest.raises(ValueError):
            median_ci([1, 2, 3, 4, 5])

    def test_coverage_by_binomial_oracle(self):
        for n in range(6, 40):
            x = np.arange(n, dtype=float)
            _, lo, hi = median_ci(x)
            k = int(lo) + 1
            cover = sps.binom.cdf(n - k, n, 0.5) - sps.binom.cdf(k - 1, n, 0.5)
            assert cover >= 0.95
            if k < n // 2:
                assert sps.binom.cdf(n - k - 1, n, 0.5) - sps.binom.cdf(k, n, 0.5) < 0.95

    @given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=60))
    def test_brackets_median(self, values):
        m, lo, hi = median_ci(values)
        assert lo <= m <= hi
