"""
Disorder environments: log-MGF algebra, annealed quantities, tilted-measure
closed forms and samplers for gaussian and rademacher variables.
"""
import logging
import math
from typing import Optional

import numpy as np
from scipy.special import expit

from src.constants import config
from src.pinning.exceptions import InvariantViolation, PreconditionError
from src.pinning.models import DisorderKind, DisorderLaw, TiltSpec

logger = logging.getLogger(__name__)

_GRID_STEP = 1e-3
_LOG_2 = math.log(2.0)


def _scalar_or_array(value, like):
    return float(value) if np.ndim(like) == 0 else value


def log_mgf(d: DisorderLaw, beta):
    """log M(beta) = log E e^{beta omega}: beta^2/2 or log cosh beta."""
    b = np.asarray(beta, dtype=float)
    if d.kind == DisorderKind.GAUSSIAN:
        value = 0.5 * b * b
    else:
        value = np.logaddexp(b, -b) - _LOG_2
    return _scalar_or_array(value, beta)


def d_log_mgf(d: DisorderLaw, beta):
    """(log M)'(beta)."""
    b = np.asarray(beta, dtype=float)
    value = b if d.kind == DisorderKind.GAUSSIAN else np.tanh(b)
    return _scalar_or_array(value, beta)


def d2_log_mgf(d: DisorderLaw, beta):
    """(log M)''(beta)."""
    b = np.asarray(beta, dtype=float)
    if d.kind == DisorderKind.GAUSSIAN:
        value = np.ones_like(b)
    else:
        value = 1.0 / np.cosh(b) ** 2
    return _scalar_or_array(value, beta)


def h_c_ann(d: DisorderLaw, beta: float) -> float:
    """Annealed critical point -log M(beta)."""
    return -log_mgf(d, beta)


def fractional_weight_moment(d: DisorderLaw, beta: float, h: float, gamma: float) -> float:
    """E[z_1^gamma] = e^{gamma h} M(gamma beta)."""
    if not 0 < gamma <= 1:
        raise PreconditionError(f"gamma must lie in (0, 1], got {gamma}")
    return math.exp(gamma * h + log_mgf(d, gamma * beta))


def tilted_effective_h(d: DisorderLaw, beta: float, h: float, lam: float) -> float:
    """h + log M(beta - lambda) - log M(-lambda): E_{N,lambda} Z_{N,omega} = Z_N(h_eff)."""
    return h + log_mgf(d, beta - lam) - log_mgf(d, -lam)


def tilted_mean(d: DisorderLaw, lam: float) -> float:
    """Mean of omega under the density e^{-lambda omega}/M(-lambda)."""
    return d_log_mgf(d, -lam)


def _grid(half_width: float) -> np.ndarray:
    points = int(round(2.0 * half_width / _GRID_STEP)) + 1
    return np.linspace(-half_width, half_width, points)


def curvature_floor(d: DisorderLaw, beta0: Optional[float] = None) -> float:
    """C_3 = min of (log M)'' on [-beta0, beta0], by grid search."""
    beta0 = beta0 if beta0 is not None else config.BETA0
    return float(np.min(d2_log_mgf(d, _grid(beta0))))


def quadratic_bound_constant(d: DisorderLaw) -> float:
    """c with 0 <= log M(x) <= c x^2 on |x| <= 1: half the max of (log M)'' there."""
    return float(0.5 * np.max(d2_log_mgf(d, _grid(1.0))))


def quadratic_bound_margin(d: DisorderLaw) -> float:
    """min over the grid of c x^2 - log M(x); non-negative."""
    x = _grid(1.0)
    return float(np.min(quadratic_bound_constant(d) * x * x - log_mgf(d, x)))


def mm_exponential_bound_check(d: DisorderLaw, beta: float, lam: float, beta0: Optional[float] = None) -> float:
    """e^{-C_3 beta lambda} - M(beta - lambda) / (M(beta) M(-lambda)); must be >= 0."""
    beta0 = beta0 if beta0 is not None else config.BETA0
    if not 0 < lam <= beta <= beta0:
        raise PreconditionError(f"need 0 < lambda <= beta <= beta0, got {lam}, {beta}, {beta0}")
    C3 = curvature_floor(d, beta0)
    ratio = math.exp(log_mgf(d, beta - lam) - log_mgf(d, beta) - log_mgf(d, -lam))
    margin = math.exp(-C3 * beta * lam) - ratio
    if margin < -1e-12:
        raise InvariantViolation(f"M-ratio bound fails at beta={beta}, lambda={lam}: margin {margin:.3e}")
    return margin


def sample_env(d: DisorderLaw, N: int, rng: np.random.Generator, rows: Optional[int] = None) -> np.ndarray:
    """IID omega_1..omega_N (or a (rows, N) block)."""
    shape = N if rows is None else (rows, N)
    if d.kind == DisorderKind.GAUSSIAN:
        return rng.standard_normal(shape)
    return np.where(rng.random(shape) < 0.5, 1.0, -1.0)


def sample_env_tilted(d: DisorderLaw, spec: TiltSpec, N: int, rng: np.random.Generator,
                      rows: Optional[int] = None) -> np.ndarray:
    """
    Environment under P_{N,lambda}: the first spec.N variables carry the
    density e^{-lambda omega}/M(-lambda), later ones are untouched. Uses the
    same draws as :func:`sample_env`, so lambda = 0 reproduces it exactly.
    """
    shape = N if rows is None else (rows, N)
    tilted = min(spec.N, N)
    if d.kind == DisorderKind.GAUSSIAN:
        omega = rng.standard_normal(shape)
        omega[..., :tilted] -= spec.lam
        return omega
    p_plus = np.full(N, 0.5)
    p_plus[:tilted] = expit(-2.0 * spec.lam)
    return np.where(rng.random(shape) < p_plus, 1.0, -1.0)


__all__ = [
    "log_mgf",
    "d_log_mgf",
    "d2_log_mgf",
    "h_c_ann",
    "fractional_weight_moment",
    "tilted_effective_h",
    "tilted_mean",
    "curvature_floor",
    "quadratic_bound_constant",
    "quadratic_bound_margin",
    "mm_exponential_bound_check",
    "sample_env",
    "sample_env_tilted",
]
