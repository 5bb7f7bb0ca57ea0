"""
Renewal functions, terminating renewals, trajectory sampling and the
renewal-theoretic asymptotics used by the certificate argument.
"""
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import gamma as gamma_function

from src.pinning.exceptions import DomainError, PreconditionError
from src.pinning.kernels import InterArrivalLaw, mean_inter_arrival, power_tail_bracket
from src.pinning.models import MomentEstimate
from src.pinning.streams import STREAM_RENEWAL, mean_estimate, replica_generator, run_chunked

logger = logging.getLogger(__name__)

_SAMPLE_BATCH = 256


class MassRenewalTable:
    """u_0..u_N with u_n = P(n in tau) for the inter-arrival law ``Q``."""

    def __init__(self, u: np.ndarray, increments: np.ndarray, law: Optional[InterArrivalLaw] = None):
        self.u = u
        self.increments = increments
        self.law = law

    @property
    def N(self) -> int:
        return self.u.size - 1

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"n": np.arange(self.u.size), "u_n": self.u})


class TerminatingLaw:
    """Sub-probability law Q on {k, k+1, ...} stored up to a horizon."""

    def __init__(self, Q: np.ndarray, k: int, rho: float, provenance: str = ""):
        if rho >= 1.0:
            raise PreconditionError(f"rho = {rho:.6g} >= 1: the renewal is not terminating")
        if np.any(Q[:k] != 0):
            raise DomainError("Q must vanish below k")
        self.Q = Q
        self.k = k
        self.rho = rho
        self.provenance = provenance

    @property
    def defect(self) -> float:
        return 1.0 - self.rho

    @property
    def horizon(self) -> int:
        return self.Q.size - 1


def _fill_renewal(increments: np.ndarray, N: int) -> np.ndarray:
    """u_n = sum_{m=1}^n q(m) u_{n-m} with q(m) = increments[m-1]."""
    u = np.zeros(N + 1, dtype=float)
    u[0] = 1.0
    for n in range(1, N + 1):
        u[n] = np.dot(increments[:n], u[n - 1::-1])
    return u


def mass_renewal(law: InterArrivalLaw, N: int) -> MassRenewalTable:
    """Renewal function by direct O(N^2) convolution."""
    if N < 0:
        raise DomainError("horizon N must be non-negative")
    K = law.K_upto(N) if N > 0 else np.zeros(0)
    return MassRenewalTable(_fill_renewal(K, N), K, law)


def renewal_residual(table: MassRenewalTable) -> float:
    """max_n |u_n - sum_m q(m) u_{n-m}| / u_n over n >= 1 with u_n > 0."""
    if table.N == 0:
        return 0.0
    reconstructed = np.convolve(table.increments[:table.N], table.u)[:table.N]
    u = table.u[1:]
    positive = u > 0
    if not positive.any():
        return 0.0
    return float(np.max(np.abs(u[positive] - reconstructed[positive]) / u[positive]))


def doney_ratio(law: InterArrivalLaw, N: int) -> float:
    """u_N L(N) N^{1-alpha} pi / (alpha sin(pi alpha)), with L the slowly varying factor of K."""
    alpha = law.alpha
    if not 0 < alpha < 1:
        raise DomainError(f"the local renewal asymptotics need alpha in (0, 1), got {alpha}")
    if N < 100:
        raise DomainError("doney_ratio needs N >= 100")
    u_N = mass_renewal(law, N).u[N]
    constant = alpha * math.sin(math.pi * alpha) / math.pi
    return float(u_N * law.effective_L(N) * N ** (1.0 - alpha) / constant)


def build_terminating_law(
    law: InterArrivalLaw,
    k: int,
    gamma: float,
    A_values: Sequence[float],
    weight: float,
    horizon: int,
    provenance: str = "",
) -> TerminatingLaw:
    """
    Q(n) = weight * sum_{j<k} K(n-j)^gamma A_j for n >= k, zero below k.

    rho uses the certified upper tail brackets, so the stored defect is a lower bound.
    """
    A = np.asarray(A_values, dtype=float)
    if A.size != k:
        raise DomainError(f"need A_0..A_{k - 1}, got {A.size} values")
    if horizon < k:
        raise DomainError("horizon must reach k")
    K_gamma = np.concatenate([[0.0], law.K_upto(horizon) ** gamma])
    Q = weight * np.convolve(A, K_gamma)[:horizon + 1]
    Q[:k] = 0.0
    tails = law.tail_sums_gamma_upper(gamma, k)
    # sum_{n>=k} K(n-j)^gamma = T(k-j), index k-j-1
    rho = weight * float(np.dot(A, tails[::-1]))
    return TerminatingLaw(Q, k, rho, provenance)


def terminating_mass_renewal(Q: TerminatingLaw, N: int) -> MassRenewalTable:
    if Q.defect <= 0:
        raise PreconditionError("law is not terminating")
    if N > Q.horizon:
        raise DomainError(f"Q is stored up to {Q.horizon}, asked for N={N}")
    increments = Q.Q[1:N + 1]
    return MassRenewalTable(_fill_renewal(increments, N), increments)


def terminating_asymptotic_ratio(Q: TerminatingLaw, N: int) -> float:
    """u_N (1-rho)^2 / Q(N)."""
    if N < Q.k:
        raise DomainError("Q(N) vanishes below k")
    u_N = terminating_mass_renewal(Q, N).u[N]
    return float(u_N * Q.defect ** 2 / Q.Q[N])


def expected_points(Q: TerminatingLaw) -> float:
    """Expected number of renewal points including 0: 1/defect."""
    return 1.0 / Q.defect


def _draw_increments(law: InterArrivalLaw, rng: np.random.Generator, size: int, cap: int) -> np.ndarray:
    """IID increments by inverse CDF on the table, Pareto-type tail beyond N_max, capped at ``cap``."""
    uniforms = rng.random(size)
    cdf = law.cdf
    index = np.searchsorted(cdf, uniforms, side="right")
    increments = (index + 1).astype(float)
    in_tail = index >= law.N_max
    if in_tail.any():
        tail_mass = max(1.0 - cdf[-1], np.finfo(float).tiny)
        ratio = np.maximum((1.0 - uniforms[in_tail]) / tail_mass, np.finfo(float).tiny)
        increments[in_tail] = np.ceil(law.N_max * ratio ** (-1.0 / law.alpha))
    return np.minimum(increments, cap).astype(np.int64)


def sample_renewal(law: InterArrivalLaw, N: int, rng: Union[np.random.Generator, int]) -> np.ndarray:
    """Contact set tau intersected with {0..N}, starting at 0."""
    if N < 1:
        raise DomainError("N must be at least 1")
    if not isinstance(rng, np.random.Generator):
        rng = replica_generator(int(rng), 0, STREAM_RENEWAL)
    points = [np.zeros(1, dtype=np.int64)]
    position = 0
    while position <= N:
        steps = position + np.cumsum(_draw_increments(law, rng, _SAMPLE_BATCH, N + 1))
        points.append(steps[steps <= N])
        position = int(steps[-1])
    return np.concatenate(points)


def _contact_counts(law: InterArrivalLaw, N: int, replicas: int, seed: int, workers: Optional[int]) -> np.ndarray:
    def task(start: int, stop: int) -> np.ndarray:
        return np.array([
            sample_renewal(law, N, replica_generator(seed, i, STREAM_RENEWAL)).size - 1
            for i in range(start, stop)
        ], dtype=float)

    return run_chunked(task, replicas, workers)


def contact_indicators(law: InterArrivalLaw, N: int, replicas: int, seed: int,
                       workers: Optional[int] = None) -> np.ndarray:
    """Boolean matrix (replicas, N+1) with entry n set when n is a contact."""
    def task(start: int, stop: int) -> np.ndarray:
        block = np.zeros((stop - start, N + 1), dtype=bool)
        for row, i in enumerate(range(start, stop)):
            block[row, sample_renewal(law, N, replica_generator(seed, i, STREAM_RENEWAL))] = True
        return block

    return run_chunked(task, replicas, workers)


def contact_fraction_lln(law: InterArrivalLaw, N: int, replicas: int, seed: int,
                         workers: Optional[int] = None) -> MomentEstimate:
    """Replica mean of |tau ∩ {1..N}|/N; tends to 1/E(tau_1) when alpha > 1."""
    if law.alpha <= 1:
        logger.warning(f"⚠️ alpha={law.alpha} <= 1: infinite mean, the contact fraction tends to 0")
    counts = _contact_counts(law, N, replicas, seed, workers)
    return mean_estimate(counts / N)


def contact_fraction_target(law: InterArrivalLaw) -> float:
    """1/E(tau_1) for alpha > 1, 0 otherwise."""
    if law.alpha <= 1:
        return 0.0
    return 1.0 / mean_inter_arrival(law).midpoint


def laplace_functional_contacts(law: InterArrivalLaw, N: int, c_values: Iterable[float], replicas: int,
                                seed: int, workers: Optional[int] = None) -> list[MomentEstimate]:
    """Estimates of E exp(-(c/N)|tau ∩ {1..N}|); all c share the same trajectories."""
    counts = _contact_counts(law, N, replicas, seed, workers)
    return [mean_estimate(np.exp(-c * counts / N)) for c in c_values]


def laplace_exponent_ratio(law: InterArrivalLaw, lam: float) -> float:
    """(-log sum K(n) e^{-lam n}) / (c_alpha lam^alpha L(1/lam)), c_alpha = Gamma(1-alpha)/alpha."""
    alpha = law.alpha
    if not 0 < alpha < 1:
        raise DomainError(f"Laplace exponent asymptotics need alpha in (0, 1), got {alpha}")
    if lam <= 0:
        raise DomainError("lambda must be positive")
    n = np.arange(1, law.cutoff + 1, dtype=float)
    head = float(np.sum(law.weights * -np.expm1(-lam * n)))
    tail_lo, tail_hi = power_tail_bracket(
        law.L.exponent, law.s, law.cutoff, weight=lambda x: -np.expm1(-lam * x)
    )
    complement = law.c_K * (head + 0.5 * (tail_lo + tail_hi))
    exponent = -math.log1p(-complement)
    c_alpha = laplace_constant(alpha)
    return exponent / (c_alpha * lam ** alpha * float(law.effective_L(1.0 / lam)))


def laplace_constant(alpha: float) -> float:
    return float(gamma_function(1.0 - alpha) / alpha)


def export_u_table(table: MassRenewalTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    table.to_frame().to_csv(path, index=False)
    return path


def export_trajectories(trajectories: Iterable[np.ndarray], path: Union[str, Path]) -> Path:
    """One trajectory per line, whitespace-separated contact indices."""
    path = Path(path)
    with open(path, "w") as handle:
        for points in trajectories:
            handle.write(" ".join(str(int(p)) for p in points) + "\n")
    return path


__all__ = [
    "MassRenewalTable",
    "TerminatingLaw",
    "mass_renewal",
    "renewal_residual",
    "doney_ratio",
    "build_terminating_law",
    "terminating_mass_renewal",
    "terminating_asymptotic_ratio",
    "expected_points",
    "sample_renewal",
    "contact_indicators",
    "contact_fraction_lln",
    "contact_fraction_target",
    "laplace_functional_contacts",
    "laplace_exponent_ratio",
    "laplace_constant",
    "export_u_table",
    "export_trajectories",
]
