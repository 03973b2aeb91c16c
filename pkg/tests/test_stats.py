import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from neuroauth.errors import DataError
from neuroauth.stats import (
    hypothesis_block,
    kolmogorov_sf,
    ks_normality_test,
    regularized_incomplete_beta,
    student_t_cdf,
    t_test_independent,
)

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=15)


def pooled_t(a, b):
    """Hand computation of Student's pooled-variance t statistic."""
    na, nb = len(a), len(b)
    va, vb = statistics.variance(a), statistics.variance(b)
    sp = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    return (statistics.fmean(a) - statistics.fmean(b)) / math.sqrt(sp * (1 / na + 1 / nb))


class TestTTest:
    def test_worked_example(self):
        r = t_test_independent([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
        assert r.statistic == pytest.approx(-1.0, abs=1e-12)
        assert r.df == 8
        assert r.p_value == pytest.approx(0.3466, abs=1e-3)
        assert r.p_value == pytest.approx(2 * sps.t.cdf(-1.0, 8), abs=1e-12)
        assert not r.reject_null

    def test_identical_samples(self):
        r = t_test_independent([0.8, 0.9, 0.7], [0.8, 0.9, 0.7])
        assert r.statistic == 0.0 and r.p_value == 1.0

    def test_constant_equal_samples(self):
        r = t_test_independent([2.0, 2.0], [2.0, 2.0, 2.0])
        assert (r.statistic, r.p_value) == (0.0, 1.0) and r.notes

    def test_constant_different_samples(self):
        r = t_test_independent([1.0, 1.0], [2.0, 2.0])
        assert r.statistic == -math.inf and r.p_value == 0.0

    def test_matches_reference(self, rng):
        for _ in range(50):
            a = rng.normal(0.85, 0.05, int(rng.integers(2, 20)))
            b = rng.normal(0.87, 0.04, int(rng.integers(2, 20)))
            for equal_var in (True, False):
                ours = t_test_independent(a, b, equal_var=equal_var)
                ref = sps.ttest_ind(a, b, equal_var=equal_var)
                assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
                assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)
            assert t_test_independent(a, b).statistic == pytest.approx(pooled_t(list(a), list(b)),
                                                                       rel=1e-10)

    @settings(max_examples=300)
    @given(samples, samples)
    def test_antisymmetric(self, a, b):
        try:
            ab = t_test_independent(a, b)
        except DataError:
            return
        ba = t_test_independent(b, a)
        assert ab.statistic == -ba.statistic
        assert ab.p_value == ba.p_value
        assert 0.0 <= ab.p_value <= 1.0

    @settings(max_examples=300)
    @given(st.lists(st.floats(0, 1), min_size=3, max_size=12),
           st.lists(st.floats(0, 1), min_size=3, max_size=12),
           st.floats(-10, 10))
    def test_shift_invariant(self, a, b, c):
        base = t_test_independent(a, b)
        if not math.isfinite(base.statistic) or statistics.pstdev(a + b) < 1e-3:
            return
        moved = t_test_independent([x + c for x in a], [x + c for x in b])
        assert moved.statistic == pytest.approx(base.statistic, rel=1e-9, abs=1e-9)
        assert moved.p_value == pytest.approx(base.p_value, abs=1e-9)

    def test_too_small(self):
        with pytest.raises(DataError):
            t_test_independent([1.0], [1.0, 2.0])


class TestDistributions:
    def test_t8_critical_value(self):
        assert student_t_cdf(2.306, 8) == pytest.approx(0.975, abs=1e-4)

    @pytest.mark.parametrize("df", [1, 2, 5, 11, 22, 100, 1000])
    def test_t_cdf_reference(self, df):
        for t in (-40.0, -3.0, -0.5, 0.0, 0.7, 2.0, 9.0):
            assert student_t_cdf(t, df) == pytest.approx(sps.t.cdf(t, df), abs=1e-12)

    def test_incomplete_beta_reference(self):
        from scipy.special import betainc

        for a, b in [(0.5, 0.5), (1, 1), (4, 0.5), (11, 0.5), (30, 7)]:
            for x in (0.0, 1e-6, 0.2, 0.5, 0.93, 1.0):
                assert regularized_incomplete_beta(a, b, x) == pytest.approx(
                    betainc(a, b, x), abs=1e-13)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1, 1, 1.5)

    def test_kolmogorov_sf_reference(self):
        for lam in (0.1, 0.5, 0.8, 1.0, 1.17, 1.19, 1.36, 2.0, 3.0):
            assert kolmogorov_sf(lam) == pytest.approx(sps.kstwobign.sf(lam), abs=1e-12)
        assert kolmogorov_sf(0.0) == 1.0


class TestKs:
    def test_exact_quantiles(self):
        n = 100
        q = sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
        r = ks_normality_test(q)
        assert r.statistic < 0.01
        assert r.p_value > 0.99
        assert r.notes

    def test_matches_reference_distance(self, rng):
        x = rng.gamma(2.0, size=30)
        r = ks_normality_test(x)
        ref = sps.kstest(x, "norm", args=(x.mean(), x.std(ddof=1)))
        assert r.statistic == pytest.approx(ref.statistic, abs=1e-12)

    def test_non_normal_rejected(self, rng):
        assert ks_normality_test(rng.exponential(size=400)).reject_null

    @settings(max_examples=200)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40))
    def test_statistic_range_and_mean_point(self, xs):
        try:
            base = ks_normality_test(xs)
        except DataError:
            return
        assert 0.0 <= base.statistic <= 1.0
        assert 0.0 <= base.p_value <= 1.0
        more = ks_normality_test(xs + [statistics.fmean(xs)])
        assert more.statistic <= base.statistic + 1.0 / len(xs) + 1e-12

    def test_errors(self):
        with pytest.raises(DataError):
            ks_normality_test([1.0, 2.0])
        with pytest.raises(DataError):
            ks_normality_test([3.0, 3.0, 3.0])


def test_hypothesis_block_layout():
    per_family = {
        "lsvm": {"test_accuracy": [0.8, 0.85, 0.9, 0.82], "test_f1": [0.8, 0.84, 0.91, 0.8]},
        "nlsvm": {"test_accuracy": [0.83, 0.88, 0.9, 0.86], "test_f1": [0.82, 0.9, 0.9, 0.85]},
    }
    block = hypothesis_block(per_family)
    assert len(block["ks"]) == 4 and len(block["t_tests"]) == 2
    assert {e["metric"] for e in block["t_tests"]} == {"test_accuracy", "test_f1"}
    assert all("p_value" in e for e in block["ks"] + block["t_tests"])
    short = hypothesis_block({"lsvm": {"test_accuracy": [0.5, 0.6], "test_f1": [0.5, 0.6]}})
    assert all("error" in e for e in short["ks"]) and short["t_tests"] == []
