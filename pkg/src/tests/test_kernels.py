"""
Unit tests for inter-arrival laws and certified tail brackets.
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import zeta

# Add the project root to the Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from src.pinning.exceptions import DivergenceError, DomainError
from src.pinning.kernels import (
    K_at,
    build_law,
    dump_table,
    envelope_ratio,
    load_table,
    log_K_at,
    mean_inter_arrival,
    power_sum_ratio,
    slow_variation_ratio,
    tail_sum_gamma,
)
from src.pinning.models import SlowlyVaryingKind, SlowlyVaryingSpec


@pytest.fixture(scope="module")
def law_one():
    return build_law(1.0, N_max=10000)


@pytest.fixture(scope="module")
def law_three_halves():
    return build_law(1.5, N_max=20000)


class TestNormalization:
    """Normalization constant and its certified bracket."""

    def test_c_K_alpha_one(self, law_one):
        """alpha=1, constant L gives c_K = 6/pi^2."""
        print("🧪 Testing c_K at alpha=1")
        assert law_one.c_K == pytest.approx(6.0 / math.pi ** 2, rel=1e-8)
        print("✅ c_K matches 6/pi^2")

    @pytest.mark.parametrize("alpha,L", [
        (0.5, SlowlyVaryingSpec()),
        (0.75, SlowlyVaryingSpec()),
        (1.0, SlowlyVaryingSpec()),
        (1.5, SlowlyVaryingSpec()),
        (0.5, SlowlyVaryingSpec(kind=SlowlyVaryingKind.LOG_POWER, b=-2.0)),
        (1.5, SlowlyVaryingSpec(kind=SlowlyVaryingKind.LOG_POWER, b=1.0)),
    ])
    def test_bracket_contains_one(self, alpha, L):
        """The normalized mass bracket contains 1 and is narrower than tol."""
        law = build_law(alpha, L, N_max=1000)
        assert law.norm_bracket.contains(1.0)
        assert law.norm_bracket.width <= law.config.tol
        assert law.sound_shift >= 0

    def test_rejects_bad_inputs(self):
        """alpha <= 0 and tiny tables are domain errors."""
        with pytest.raises(DomainError):
            build_law(0.0)
        with pytest.raises(DomainError):
            build_law(1.0, N_max=10)


class TestKernelValues:
    """Point values of K."""

    def test_first_values(self, law_one):
        """K(1) = c_K and K(2) = c_K/4 at alpha=1."""
        assert K_at(law_one, 1) == pytest.approx(law_one.c_K, rel=1e-15)
        assert K_at(law_one, 2) == pytest.approx(law_one.c_K / 4.0, rel=1e-15)
        assert K_at(law_one, 2) == pytest.approx(0.151982, abs=1e-6)

    def test_log_consistency(self, law_one):
        """log_K_at agrees with log(K_at) on and beyond the table."""
        for n in (1, 7, 9999, 10000, 10001, 10 ** 7):
            assert log_K_at(law_one, n) == pytest.approx(math.log(K_at(law_one, n)), abs=1e-12)

    def test_array_lookup_matches_scalar(self, law_one):
        """Array evaluation mixes table and closed form consistently."""
        n = np.array([1, 5000, 10000, 20000])
        values = K_at(law_one, n)
        for n_i, value in zip(n, values):
            assert value == pytest.approx(K_at(law_one, int(n_i)), rel=1e-13)

    def test_regular_variation(self, law_three_halves):
        """K(2n)/K(n) -> 2^{-2.5} at alpha=1.5."""
        ratio = K_at(law_three_halves, 20000) / K_at(law_three_halves, 10000)
        assert ratio == pytest.approx(2.0 ** -2.5, rel=0.01)

    def test_index_below_one(self, law_one):
        with pytest.raises(DomainError):
            K_at(law_one, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=1, max_value=10 ** 6))
    def test_decreasing_for_constant_L(self, law_one, n):
        """With constant L the kernel is strictly decreasing."""
        assert K_at(law_one, n + 1) < K_at(law_one, n)


class TestTailSums:
    """Brackets of sum_{n >= m} K(n)^gamma."""

    def test_total_mass(self, law_one):
        """m=1, gamma=1 brackets the total mass 1."""
        bracket = tail_sum_gamma(law_one, 1, 1.0)
        assert bracket.lower <= 1.0 + 1e-12
        assert bracket.upper >= 1.0 - 1e-12

    def test_tail_from_ten(self, law_one):
        """m=10 at alpha=1 brackets c_K (pi^2/6 - sum_{n<10} n^-2)."""
        target = law_one.c_K * (math.pi ** 2 / 6.0 - sum(1.0 / n ** 2 for n in range(1, 10)))
        assert target == pytest.approx(law_one.c_K * 0.105166, rel=1e-5)
        bracket = tail_sum_gamma(law_one, 10, 1.0)
        assert bracket.lower <= target * (1 + 1e-10)
        assert bracket.upper >= target * (1 - 1e-10)
        assert 0 < bracket.lower <= bracket.upper

    def test_tail_beyond_cutoff(self, law_one):
        """Tail sums starting beyond the cutoff use the integral bracket alone."""
        m = law_one.cutoff + 10
        bracket = tail_sum_gamma(law_one, m, 0.9)
        assert 0 < bracket.lower <= bracket.upper

    def test_upper_array_matches_brackets(self, law_three_halves):
        """tail_sums_gamma_upper dominates each certified bracket."""
        uppers = law_three_halves.tail_sums_gamma_upper(0.9, 50)
        for m in (1, 2, 10, 50):
            assert uppers[m - 1] >= tail_sum_gamma(law_three_halves, m, 0.9).upper * (1 - 1e-12)

    def test_non_summable_gamma(self, law_one):
        """(1+alpha) gamma <= 1 diverges."""
        with pytest.raises(DivergenceError):
            tail_sum_gamma(law_one, 1, 0.5)


class TestMeanAndSlowVariation:
    """Mean inter-arrival time and slowly varying helpers."""

    def test_mean_inter_arrival(self, law_three_halves):
        """E(tau_1) = zeta(1.5)/zeta(2.5) for alpha=1.5, constant L."""
        bracket = mean_inter_arrival(law_three_halves)
        assert bracket.midpoint == pytest.approx(zeta(1.5) / zeta(2.5), rel=1e-8)

    def test_mean_diverges_below_one(self, law_one):
        with pytest.raises(DivergenceError):
            mean_inter_arrival(law_one)

    def test_power_sum_ratio(self):
        """sum_{n>=N} n^-2 ~ N^-1."""
        assert power_sum_ratio(SlowlyVaryingSpec(), 2.0, 10000) == pytest.approx(1.0, abs=1e-3)
        assert power_sum_ratio(SlowlyVaryingSpec(), 0.5, 10000) == pytest.approx(1.0, abs=0.02)

    def test_slow_variation(self):
        """L(2x)/L(x) -> 1 for log powers."""
        L = SlowlyVaryingSpec(kind=SlowlyVaryingKind.LOG_POWER, b=1.0)
        ratio = float(slow_variation_ratio(L, 2.0, 1e12))
        assert 1.0 < ratio < 1.03

    def test_envelope_ratio_at_least_one(self):
        """The sup envelope includes n = N itself."""
        L = SlowlyVaryingSpec(kind=SlowlyVaryingKind.LOG_POWER, b=-2.0)
        assert envelope_ratio(L, 0.5, 1000) >= 1.0
        assert envelope_ratio(L, 0.5, 1000, kind="inf") <= 1.0


class TestTableCache:
    """Binary table cache."""

    def test_dump_and_load(self, law_one, tmp_path):
        """A dumped table loads back bit-identically."""
        dump_table(law_one, tmp_path)
        loaded = load_table(law_one.config, tmp_path)
        assert loaded is not None
        assert loaded.c_K == law_one.c_K
        assert np.array_equal(loaded.table, law_one.table)
        assert loaded.norm_bracket == law_one.norm_bracket

    def test_missing_cache(self, law_three_halves, tmp_path):
        assert load_table(law_three_halves.config, tmp_path) is None
