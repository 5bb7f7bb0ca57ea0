"""
Unit tests for disorder laws: log-MGF algebra, tilted measures and samplers.
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add the project root to the Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from src.pinning.disorder import (
    curvature_floor,
    d2_log_mgf,
    d_log_mgf,
    fractional_weight_moment,
    h_c_ann,
    log_mgf,
    mm_exponential_bound_check,
    quadratic_bound_constant,
    quadratic_bound_margin,
    sample_env,
    sample_env_tilted,
    tilted_effective_h,
    tilted_mean,
)
from src.pinning.exceptions import PreconditionError
from src.pinning.models import DisorderKind, DisorderLaw, TiltSpec
from src.pinning.streams import replica_generator

GAUSSIAN = DisorderLaw(kind=DisorderKind.GAUSSIAN)
RADEMACHER = DisorderLaw(kind=DisorderKind.RADEMACHER)
BOTH = [GAUSSIAN, RADEMACHER]

betas = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


class TestLogMGF:
    """log M(beta) and its derivatives."""

    def test_values(self):
        assert log_mgf(GAUSSIAN, 1.0) == pytest.approx(0.5)
        assert log_mgf(RADEMACHER, 1.0) == pytest.approx(math.log(math.cosh(1.0)), rel=1e-14)
        assert log_mgf(RADEMACHER, 1.0) == pytest.approx(0.433781, abs=1e-6)

    @pytest.mark.parametrize("d", BOTH)
    def test_normalization(self, d):
        """log M(0) = 0, (log M)'(0) = 0, (log M)''(0) = 1."""
        assert log_mgf(d, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert d_log_mgf(d, 0.0) == 0.0
        assert d2_log_mgf(d, 0.0) == pytest.approx(1.0)

    def test_array_input(self):
        values = log_mgf(RADEMACHER, np.array([0.0, 1.0, 50.0]))
        assert values.shape == (3,)
        assert values[2] == pytest.approx(50.0 - math.log(2.0))

    @settings(max_examples=100)
    @given(betas, betas)
    def test_convex(self, a, b):
        """Midpoint convexity of log M for both laws."""
        for d in BOTH:
            mid = log_mgf(d, 0.5 * (a + b))
            assert mid <= 0.5 * (log_mgf(d, a) + log_mgf(d, b)) + 1e-12

    @settings(max_examples=100)
    @given(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False))
    def test_quadratic_bound(self, x):
        """0 <= log M(x) <= c x^2 on |x| <= 1."""
        for d in BOTH:
            assert 0.0 <= log_mgf(d, x) <= quadratic_bound_constant(d) * x * x + 1e-15


class TestAnnealedQuantities:
    """h_c^ann and fractional weight moments."""

    def test_h_c_ann(self):
        assert h_c_ann(GAUSSIAN, 1.0) == -0.5
        assert h_c_ann(GAUSSIAN, 0.0) == 0.0
        assert h_c_ann(RADEMACHER, 0.0) == 0.0

    @pytest.mark.parametrize("d", BOTH)
    def test_small_beta(self, d):
        """h_c^ann ~ -beta^2/2."""
        beta = 1e-3
        assert h_c_ann(d, beta) / (-beta ** 2 / 2) == pytest.approx(1.0, abs=1e-6)

    def test_fractional_moment(self):
        assert fractional_weight_moment(GAUSSIAN, 1.0, 0.0, 0.5) == pytest.approx(math.exp(0.125))
        assert fractional_weight_moment(GAUSSIAN, 1.0, 0.0, 0.5) == pytest.approx(1.133148, abs=1e-6)
        assert fractional_weight_moment(RADEMACHER, 0.7, 0.3, 1.0) == pytest.approx(
            math.exp(0.3) * math.cosh(0.7))

    def test_fractional_moment_increasing_in_h(self):
        values = [fractional_weight_moment(RADEMACHER, 0.5, h, 0.7) for h in (-1.0, 0.0, 1.0)]
        assert values[0] < values[1] < values[2]

    def test_fractional_moment_gamma_range(self):
        with pytest.raises(PreconditionError):
            fractional_weight_moment(GAUSSIAN, 1.0, 0.0, 1.5)


class TestTiltedMeasure:
    """Closed forms under the tilted environment."""

    @pytest.mark.parametrize("d", BOTH)
    def test_no_tilt_is_annealed(self, d):
        assert tilted_effective_h(d, 0.8, 0.1, 0.0) == pytest.approx(0.1 + log_mgf(d, 0.8))

    def test_gaussian_drift(self):
        """h_eff = h + beta^2/2 - beta lambda."""
        assert tilted_effective_h(GAUSSIAN, 0.8, 0.1, 0.3) == pytest.approx(0.1 + 0.32 - 0.24)

    @pytest.mark.parametrize("d", BOTH)
    def test_decreasing_in_lambda(self, d):
        values = [tilted_effective_h(d, 1.0, 0.0, lam) for lam in np.linspace(0.0, 1.0, 11)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_tilted_mean(self):
        assert tilted_mean(GAUSSIAN, 0.3) == pytest.approx(-0.3)
        assert tilted_mean(RADEMACHER, 0.3) == pytest.approx(-math.tanh(0.3))


class TestMGFRatioBound:
    """M(beta - lambda)/(M(beta) M(-lambda)) <= exp(-C_3 beta lambda)."""

    def test_curvature_floor(self):
        assert curvature_floor(GAUSSIAN, 1.0) == 1.0
        assert curvature_floor(RADEMACHER, 1.0) == pytest.approx(1.0 / math.cosh(1.0) ** 2, rel=1e-12)
        assert curvature_floor(RADEMACHER, 1.0) == pytest.approx(0.419974, abs=1e-6)

    def test_gaussian_identity(self):
        """Gaussian disorder makes the bound an identity."""
        assert abs(mm_exponential_bound_check(GAUSSIAN, 0.8, 0.4, 1.0)) <= 1e-14

    @pytest.mark.parametrize("d", BOTH)
    def test_margin_on_grid(self, d):
        for beta in np.linspace(0.1, 1.0, 10):
            for lam in np.linspace(0.05, beta, 5):
                assert mm_exponential_bound_check(d, float(beta), float(lam), 1.0) >= -1e-12

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            mm_exponential_bound_check(GAUSSIAN, 0.5, 0.6, 1.0)
        with pytest.raises(PreconditionError):
            mm_exponential_bound_check(GAUSSIAN, 1.5, 0.5, 1.0)

    @pytest.mark.parametrize("d", BOTH)
    def test_quadratic_margin(self, d):
        assert quadratic_bound_margin(d) >= 0.0


class TestSamplers:
    """Environment samplers and their tilted versions."""

    @pytest.mark.parametrize("d", BOTH)
    def test_untilted_moments(self, d):
        omega = sample_env(d, 100000, replica_generator(1, 0))
        assert abs(omega.mean()) <= 4 * omega.std() / math.sqrt(omega.size)
        assert omega.var() == pytest.approx(1.0, abs=0.02)

    @pytest.mark.parametrize("d", BOTH)
    def test_tilted_mean_sampled(self, d):
        """Tilted components have mean (log M)'(-lambda)."""
        lam = 0.4
        omega = sample_env_tilted(d, TiltSpec(N=100000, lam=lam), 100000, replica_generator(2, 0))
        target = tilted_mean(d, lam)
        assert abs(omega.mean() - target) <= 4 * omega.std() / math.sqrt(omega.size)

    @pytest.mark.parametrize("d", BOTH)
    def test_zero_tilt_reproduces(self, d):
        """lambda = 0 gives the untilted draws exactly."""
        plain = sample_env(d, 500, replica_generator(3, 0), rows=4)
        tilted = sample_env_tilted(d, TiltSpec(N=500, lam=0.0), 500, replica_generator(3, 0), rows=4)
        assert np.array_equal(plain, tilted)

    @pytest.mark.parametrize("d", BOTH)
    def test_tail_untouched(self, d):
        """Components beyond the tilt horizon keep their untilted values."""
        plain = sample_env(d, 200, replica_generator(4, 0))
        tilted = sample_env_tilted(d, TiltSpec(N=50, lam=0.5), 200, replica_generator(4, 0))
        assert np.array_equal(plain[50:], tilted[50:])

    def test_lambda_alias(self):
        assert TiltSpec.model_validate({"N": 3, "lambda": 0.2}).lam == 0.2
