import math

import numpy as np
import pytest
import scipy.stats

from margindyn import DataError, kendall_tau, rank_correlations, spearman_rho

from oracles import naive_kendall, naive_spearman


def random_series(rng, tied=False):
    n = int(rng.integers(3, 40))
    if tied:
        x = np.round(rng.standard_normal(n), 1)
        y = np.round(rng.standard_normal(n), 1)
    else:
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
    return x, y


class TestSpearman:
    def test_comonotone(self):
        assert spearman_rho([1, 2, 3], [10, 20, 30]) == 1.0

    def test_antimonotone(self):
        assert spearman_rho([1, 2, 3], [3, 2, 1]) == -1.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(50)
        for i in range(500):
            x, y = random_series(rng, tied=i % 2 == 0)
            got = spearman_rho(x, y)
            want = naive_spearman(x, y)
            if math.isnan(want):
                assert math.isnan(got)
            else:
                assert got == pytest.approx(want, abs=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(51)
        for i in range(100):
            x, y = random_series(rng, tied=i % 2 == 0)
            want = scipy.stats.spearmanr(x, y).statistic
            if math.isnan(want):
                continue
            assert spearman_rho(x, y) == pytest.approx(want, abs=1e-10)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(52)
        for _ in range(50):
            x, y = random_series(rng)
            assert spearman_rho(x, y) == spearman_rho(np.exp(x), y)

    def test_antisymmetry(self):
        rng = np.random.default_rng(53)
        for _ in range(50):
            x, y = random_series(rng)
            assert spearman_rho(x, -y) == pytest.approx(-spearman_rho(x, y), abs=1e-12)

    def test_constant_series_nan(self):
        assert math.isnan(spearman_rho([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]))

    def test_length_mismatch(self):
        with pytest.raises(Exception):
            spearman_rho([1, 2], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(DataError):
            spearman_rho([1.0], [2.0])


class TestKendall:
    def test_comonotone(self):
        assert kendall_tau([1, 2, 3, 4], [2, 4, 6, 8]) == 1.0

    def test_antimonotone(self):
        assert kendall_tau([1, 2, 3, 4], [8, 6, 4, 2]) == -1.0

    def test_matches_bruteforce_exactly(self):
        rng = np.random.default_rng(54)
        for i in range(500):
            x, y = random_series(rng, tied=i % 2 == 0)
            got = kendall_tau(x, y)
            want = naive_kendall(list(x), list(y))
            if math.isnan(want):
                assert math.isnan(got)
            else:
                assert got == want

    def test_matches_scipy_tau_b(self):
        rng = np.random.default_rng(55)
        for i in range(100):
            x, y = random_series(rng, tied=i % 2 == 0)
            want = scipy.stats.kendalltau(x, y).statistic
            if math.isnan(want):
                continue
            assert kendall_tau(x, y) == pytest.approx(want, abs=1e-10)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(56)
        for _ in range(50):
            x, y = random_series(rng)
            assert kendall_tau(x, y) == kendall_tau(np.exp(x), y)

    def test_antisymmetry(self):
        rng = np.random.default_rng(57)
        for _ in range(50):
            x, y = random_series(rng)
            assert kendall_tau(x, -y) == pytest.approx(-kendall_tau(x, y), abs=1e-12)

    def test_constant_series_nan(self):
        assert math.isnan(kendall_tau([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]))


class TestBundle:
    def test_flags(self):
        result = rank_correlations([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        assert result.constant_x and not result.constant_y
        assert not result.defined
        assert math.isnan(result.spearman_rho) and math.isnan(result.kendall_tau)

    def test_values_match_functions(self):
        rng = np.random.default_rng(58)
        x, y = rng.standard_normal(10), rng.standard_normal(10)
        result = rank_correlations(x, y)
        assert result.spearman_rho == spearman_rho(x, y)
        assert result.kendall_tau == kendall_tau(x, y)
        assert result.n_points == 10
        assert -1.0 <= result.spearman_rho <= 1.0
        assert -1.0 <= result.kendall_tau <= 1.0
