"""
Quenched partition functions, free-energy and fractional-moment estimators,
and exhaustive rademacher oracles for small system sizes.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.special import expit, logsumexp

from src.constants import config
from src.pinning.disorder import (
    fractional_weight_moment,
    log_mgf,
    sample_env,
    sample_env_tilted,
    tilted_effective_h,
)
from src.pinning.exceptions import DomainError, InvariantViolation, ResourceCapError
from src.pinning.homogeneous import pure_partition
from src.pinning.kernels import InterArrivalLaw
from src.pinning.models import CheckReport, DisorderKind, DisorderLaw, MomentEstimate, TiltSpec
from src.pinning.streams import (
    STREAM_ENVIRONMENT,
    STREAM_TILTED_ENVIRONMENT,
    mean_estimate,
    replica_generator,
    run_chunked,
    z_value,
)
from src.pinning.transfer import batch_log_partition, log_partition

logger = logging.getLogger(__name__)

_ENUMERATION_CHUNK = 1 << 15
_BRUTE_FORCE_MAX = 12


@dataclass(frozen=True)
class EnvSlice:
    """omega over the window {a+1..b} with the provenance needed to regenerate it."""
    omega: np.ndarray
    a: int = 0
    seed: Optional[int] = None
    replica: int = 0
    stream: int = STREAM_ENVIRONMENT
    tilt: Optional[TiltSpec] = None

    @property
    def length(self) -> int:
        return int(self.omega.size)

    @property
    def b(self) -> int:
        return self.a + self.length

    @classmethod
    def draw(cls, d: DisorderLaw, N: int, seed: int, replica: int = 0,
             tilt: Optional[TiltSpec] = None, a: int = 0) -> "EnvSlice":
        stream = STREAM_ENVIRONMENT if tilt is None else STREAM_TILTED_ENVIRONMENT
        rng = replica_generator(seed, replica, stream)
        omega = sample_env(d, N, rng) if tilt is None else sample_env_tilted(d, tilt, N, rng)
        return cls(omega=omega, a=a, seed=seed, replica=replica, stream=stream, tilt=tilt)

    def regenerate(self, d: DisorderLaw) -> "EnvSlice":
        if self.seed is None:
            raise DomainError("slice carries no seed")
        return EnvSlice.draw(d, self.length, self.seed, self.replica, self.tilt, self.a)


class FractionalMomentSeries(BaseModel):
    """Estimates of A_j = E[Z_j^gamma] for j = 0..k-1."""
    gamma: float = Field(..., gt=0, le=1)
    A: list[MomentEstimate] = Field(..., min_length=1)

    @field_validator("A")
    @classmethod
    def first_moment_is_one(cls, A):
        if A[0].point != 1.0 or A[0].stderr != 0.0:
            raise ValueError("A_0 must be exactly 1")
        if any(estimate.point <= 0 for estimate in A):
            raise ValueError("fractional moments are positive")
        return A

    @property
    def k(self) -> int:
        return len(self.A)

    def points(self) -> np.ndarray:
        return np.array([estimate.point for estimate in self.A])

    def uppers(self) -> np.ndarray:
        return np.array([estimate.upper for estimate in self.A])


def _check_window(law: InterArrivalLaw, length: int) -> None:
    if length > law.N_max:
        raise DomainError(f"window of length {length} exceeds the table size {law.N_max}")


def quenched_log_partition(law: InterArrivalLaw, d: DisorderLaw, env: EnvSlice, beta: float, h: float) -> float:
    """log Z_{a,b,omega} by the transfer recursion over the window of ``env``."""
    n = env.length
    if n == 0:
        return 0.0
    _check_window(law, n)
    return float(log_partition(law.log_K_upto(n), h + beta * env.omega)[n])


def composition_sum_log_partition(law: InterArrivalLaw, omega: np.ndarray, beta: float, h: float) -> float:
    """log of the explicit sum over contact sets {t_1 < ... < t_l = N}; N <= 12."""
    omega = np.asarray(omega, dtype=float)
    N = omega.size
    if N == 0:
        return 0.0
    if N > _BRUTE_FORCE_MAX:
        raise DomainError(f"brute-force enumeration limited to N <= {_BRUTE_FORCE_MAX}")
    log_K = law.log_K_upto(N)
    site = h + beta * omega
    terms = []
    for interior in itertools.product((False, True), repeat=N - 1):
        contacts = [t for t, used in zip(range(1, N), interior) if used] + [N]
        previous = 0
        total = 0.0
        for t in contacts:
            total += log_K[t - previous - 1] + site[t - 1]
            previous = t
        terms.append(total)
    return float(logsumexp(terms))


def _replica_log_partitions(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, N: int,
                            replicas: int, seed: int, workers: Optional[int],
                            tilt: Optional[TiltSpec] = None) -> np.ndarray:
    """(replicas, N+1) prefix log partition functions, one environment per replica."""
    _check_window(law, N)
    log_K = law.log_K_upto(N)
    stream = STREAM_ENVIRONMENT if tilt is None else STREAM_TILTED_ENVIRONMENT

    def task(start: int, stop: int) -> np.ndarray:
        rows = []
        for i in range(start, stop):
            rng = replica_generator(seed, i, stream)
            rows.append(sample_env(d, N, rng) if tilt is None else sample_env_tilted(d, tilt, N, rng))
        return batch_log_partition(log_K, h + beta * np.stack(rows))

    return run_chunked(task, replicas, workers)


def _scaled_mean(log_values: np.ndarray, confidence: float) -> MomentEstimate:
    """Mean of exp(log_values) computed relative to the maximum."""
    shift = float(np.max(log_values))
    estimate = mean_estimate(np.exp(log_values - shift), confidence)
    scale = math.exp(shift)
    return MomentEstimate.from_moments(estimate.point * scale, estimate.stderr * scale,
                                       estimate.replicas, confidence, z_value(confidence))


def free_energy_mc(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, N: int, replicas: int,
                   seed: int, workers: Optional[int] = None, confidence: Optional[float] = None) -> MomentEstimate:
    """Replica mean of log Z_{N,omega} / N."""
    confidence = confidence if confidence is not None else config.CONFIDENCE
    if N < 1:
        raise DomainError("N must be at least 1")
    if replicas < 2:
        raise DomainError("need at least two replicas")
    if beta == 0:
        value = float(pure_partition(law, h, N)[N] / N)
        return MomentEstimate.from_moments(value, 0.0, replicas, confidence, z_value(confidence))
    log_Z = _replica_log_partitions(law, d, beta, h, N, replicas, seed, workers)[:, N]
    estimate = mean_estimate(log_Z / N, confidence)
    logger.debug(f"free energy estimate at beta={beta}, h={h}, N={N}: {estimate.point:.6g} ± {estimate.stderr:.2e}")
    return estimate


def fractional_moment_series_mc(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float, k: int,
                                replicas: int, seed: int, workers: Optional[int] = None,
                                confidence: Optional[float] = None) -> FractionalMomentSeries:
    """A_0..A_{k-1} from one transfer pass of length k-1 per replica."""
    confidence = confidence if confidence is not None else config.CONFIDENCE
    if not 0 < gamma < 1:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    if k < 1:
        raise DomainError("k must be at least 1")
    one = MomentEstimate.exact(1.0, confidence)
    J = k - 1
    if J == 0:
        return FractionalMomentSeries(gamma=gamma, A=[one])
    if beta == 0:
        log_Z = pure_partition(law, h, J)
        exact = [MomentEstimate.from_moments(float(np.exp(gamma * log_Z[j])), 0.0, replicas, confidence,
                                             z_value(confidence)) for j in range(1, k)]
        return FractionalMomentSeries(gamma=gamma, A=[one] + exact)
    if replicas < 2:
        raise DomainError("need at least two replicas")
    log_Z = _replica_log_partitions(law, d, beta, h, J, replicas, seed, workers)
    A = [one] + [_scaled_mean(gamma * log_Z[:, j], confidence) for j in range(1, k)]
    return FractionalMomentSeries(gamma=gamma, A=A)


def fractional_moment_mc(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float, j: int,
                         replicas: int, seed: int, workers: Optional[int] = None) -> MomentEstimate:
    """MC estimate of A_j; A_0 is exactly 1."""
    if j < 0:
        raise DomainError("j must be non-negative")
    return fractional_moment_series_mc(law, d, beta, h, gamma, j + 1, replicas, seed, workers).A[j]


def _rademacher_blocks(J: int) -> Iterator[np.ndarray]:
    """All 2^J sign vectors, in blocks; bit i of the index gives omega_{i+1}."""
    bits = np.arange(J, dtype=np.int64)
    total = 1 << J
    for start in range(0, total, _ENUMERATION_CHUNK):
        index = np.arange(start, min(start + _ENUMERATION_CHUNK, total), dtype=np.int64)
        yield 1.0 - 2.0 * ((index[:, None] >> bits) & 1)


def _check_enumerable(d: DisorderLaw, J: int) -> None:
    if d.kind != DisorderKind.RADEMACHER:
        raise DomainError("exhaustive enumeration needs rademacher disorder")
    if J > config.J_MAX:
        raise ResourceCapError(f"enumerating 2^{J} environments exceeds J_MAX={config.J_MAX}",
                               required=J, cap=config.J_MAX)


def _enumerated_log_moments(law: InterArrivalLaw, beta: float, h: float, J: int, gammas: np.ndarray,
                            lam: float = 0.0) -> np.ndarray:
    """
    log E[Z_j^gamma] for j = 0..J and every gamma, exactly, under the
    rademacher law tilted on the first J sites by e^{-lambda omega}.
    """
    log_K = law.log_K_upto(J)
    log_p_plus = math.log(expit(-2.0 * lam))
    log_p_minus = math.log(expit(2.0 * lam))
    accumulated = np.full((gammas.size, J + 1), -np.inf)
    for signs in _rademacher_blocks(J):
        W = batch_log_partition(log_K, h + beta * signs)
        # prefix probability of the first j signs
        log_prob = np.where(signs > 0, log_p_plus, log_p_minus)
        log_prefix = np.concatenate([np.zeros((signs.shape[0], 1)), np.cumsum(log_prob, axis=1)], axis=1)
        # each prefix of length j appears 2^{J-j} times among the vectors
        correction = (np.arange(J + 1) - J) * math.log(2.0)
        for g, gamma in enumerate(gammas):
            block = logsumexp(gamma * W + log_prefix + correction, axis=0)
            accumulated[g] = np.logaddexp(accumulated[g], block)
    return accumulated


def fractional_moment_series_exact(law: InterArrivalLaw, beta: float, h: float, gamma: float, k: int,
                                   d: Optional[DisorderLaw] = None) -> np.ndarray:
    """Exact A_0..A_{k-1} over all 2^{k-1} rademacher environments."""
    d = d or DisorderLaw(kind=DisorderKind.RADEMACHER)
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    J = k - 1
    _check_enumerable(d, J)
    if J == 0:
        return np.ones(1)
    A = np.exp(_enumerated_log_moments(law, beta, h, J, np.array([gamma]))[0])
    A[0] = 1.0
    return A


def fractional_moment_exact(law: InterArrivalLaw, beta: float, h: float, gamma: float, j: int,
                            d: Optional[DisorderLaw] = None) -> float:
    """Exact A_j = 2^{-j} sum over sign vectors of Z_j^gamma."""
    return float(fractional_moment_series_exact(law, beta, h, gamma, j + 1, d)[j])


def fractional_moment_grid_exact(law: InterArrivalLaw, beta: float, h: float, gammas, N: int) -> np.ndarray:
    """Exact A_N for several gamma from one enumeration."""
    _check_enumerable(DisorderLaw(kind=DisorderKind.RADEMACHER), N)
    gammas = np.asarray(gammas, dtype=float)
    if N == 0:
        return np.ones(gammas.size)
    return np.exp(_enumerated_log_moments(law, beta, h, N, gammas)[:, N])


def _identity_report(name: str, value: MomentEstimate, target: float, exact: bool, details: dict) -> CheckReport:
    if exact:
        margin = 1e-10 * target - abs(value.point - target)
    else:
        margin = 3.0 * value.stderr - abs(value.point - target)
    passed = margin >= 0
    if not passed:
        logger.warning(f"⚠️ {name} flagged: {value.point:.6g} vs {target:.6g} (stderr {value.stderr:.2e})")
    return CheckReport(name=name, value=value.point, reference=target, margin=margin, passed=passed,
                       exact=exact, details={**details, "stderr": value.stderr, "replicas": value.replicas})


def annealed_identity_check(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, N: int,
                            replicas: int = 1000, seed: Optional[int] = None,
                            workers: Optional[int] = None) -> CheckReport:
    """E Z_{N,omega} against Z_N(h + log M(beta)): exact for beta = 0 or small rademacher N, else 3 stderr."""
    target = float(np.exp(pure_partition(law, h + log_mgf(d, beta), N)[N]))
    details = {"beta": beta, "h": h, "N": N, "seed": seed}
    if beta == 0:
        return _identity_report("annealed_identity", MomentEstimate.exact(target), target, True, details)
    if d.kind == DisorderKind.RADEMACHER and N <= _BRUTE_FORCE_MAX:
        value = fractional_moment_exact(law, beta, h, 1.0, N, d)
        return _identity_report("annealed_identity", MomentEstimate.exact(value), target, True, details)
    if seed is None:
        raise DomainError("a seed is required for the Monte Carlo identity check")
    log_Z = _replica_log_partitions(law, d, beta, h, N, replicas, seed, workers)[:, N]
    return _identity_report("annealed_identity", _scaled_mean(log_Z, config.CONFIDENCE), target, False, details)


def tilt_identity_check(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, lam: float, N: int,
                        replicas: int = 1000, seed: Optional[int] = None,
                        workers: Optional[int] = None) -> CheckReport:
    """E_{N,lambda} Z_{N,omega} against Z_N(h_eff(lambda))."""
    target = float(np.exp(pure_partition(law, tilted_effective_h(d, beta, h, lam), N)[N]))
    details = {"beta": beta, "h": h, "lambda": lam, "N": N, "seed": seed}
    if d.kind == DisorderKind.RADEMACHER and N <= _BRUTE_FORCE_MAX:
        value = float(np.exp(_enumerated_log_moments(law, beta, h, N, np.array([1.0]), lam)[0, N]))
        return _identity_report("tilt_identity", MomentEstimate.exact(value), target, True, details)
    if seed is None:
        raise DomainError("a seed is required for the Monte Carlo identity check")
    tilt = TiltSpec(N=N, lam=lam)
    log_Z = _replica_log_partitions(law, d, beta, h, N, replicas, seed, workers, tilt)[:, N]
    return _identity_report("tilt_identity", _scaled_mean(log_Z, config.CONFIDENCE), target, False, details)


def rec3_inequality_check(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float,
                          k: int, N: int) -> CheckReport:
    """
    A_N <= E[z^gamma] sum_{n=k}^N A_{N-n} sum_{j<k} K(n-j)^gamma A_j with exact moments.
    At gamma = 1 both sides agree: the decomposition is an identity in expectation.
    """
    if not 1 <= k <= N:
        raise DomainError(f"need N >= k >= 1, got k={k}, N={N}")
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    if beta == 0:
        A = np.exp(gamma * pure_partition(law, h, N))
    else:
        A = fractional_moment_series_exact(law, beta, h, gamma, N + 1, d)
    K_gamma = law.K_upto(N) ** gamma
    weight = fractional_weight_moment(d, beta, h, gamma)
    rhs = 0.0
    for n in range(k, N + 1):
        inner = sum(K_gamma[n - j - 1] * A[j] for j in range(k))
        rhs += A[N - n] * inner
    rhs *= weight
    lhs = float(A[N])
    margin = rhs - lhs
    if gamma == 1.0:
        passed = abs(margin) <= 1e-10 * rhs
    else:
        passed = margin >= -1e-12 * rhs
        if not passed:
            raise InvariantViolation(f"fractional decomposition inequality fails: {lhs:.6g} > {rhs:.6g}")
    return CheckReport(name="decomposition_inequality", value=lhs, reference=rhs, margin=margin, passed=passed,
                       exact=True, details={"gamma": gamma, "k": k, "N": N})


def fractional_jensen_margin(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float, j: int,
                             replicas: int = 1000, seed: Optional[int] = None,
                             workers: Optional[int] = None) -> CheckReport:
    """(E Z_j)^gamma - A_j; exact for small rademacher j, else with a 3 stderr allowance."""
    jensen = float(np.exp(gamma * pure_partition(law, h + log_mgf(d, beta), j)[j]))
    if beta == 0 or (d.kind == DisorderKind.RADEMACHER and j <= _BRUTE_FORCE_MAX):
        value = float(np.exp(gamma * pure_partition(law, h, j)[j])) if beta == 0 else \
            fractional_moment_exact(law, beta, h, gamma, j, d)
        margin = jensen - value
        return CheckReport(name="fractional_jensen", value=value, reference=jensen, margin=margin,
                           passed=margin >= -1e-12 * jensen, exact=True, details={"j": j, "gamma": gamma})
    if seed is None:
        raise DomainError("a seed is required for the Monte Carlo Jensen check")
    estimate = fractional_moment_mc(law, d, beta, h, gamma, j, replicas, seed, workers)
    margin = jensen + 3.0 * estimate.stderr - estimate.point
    return CheckReport(name="fractional_jensen", value=estimate.point, reference=jensen, margin=margin,
                       passed=margin >= 0, details={"j": j, "gamma": gamma, "stderr": estimate.stderr})


__all__ = [
    "EnvSlice",
    "FractionalMomentSeries",
    "quenched_log_partition",
    "composition_sum_log_partition",
    "free_energy_mc",
    "fractional_moment_series_mc",
    "fractional_moment_mc",
    "fractional_moment_series_exact",
    "fractional_moment_exact",
    "fractional_moment_grid_exact",
    "annealed_identity_check",
    "tilt_identity_check",
    "rec3_inequality_check",
    "fractional_jensen_margin",
]
