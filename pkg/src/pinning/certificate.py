"""
Fractional-moment delocalization certificates.

A certificate is the bound rho <= E[z^gamma] sum_{j<k} A_j T_gamma(k-j), where
T_gamma(m) is the certified upper tail sum of K^gamma from m on and A_j are
upper bounds on the fractional moments E[Z_j^gamma]. rho <= 1 implies a zero
free energy. Everything is evaluated at h + law.sound_shift so that the
verdict holds for the exactly normalized law.
"""
import logging
import math
from typing import Optional

import numpy as np
from scipy import stats

from src.constants import config
from src.pinning.disorder import (
    fractional_weight_moment,
    h_c_ann,
    log_mgf,
    quadratic_bound_constant,
    tilted_effective_h,
)
from src.pinning.exceptions import (
    CutoffTooSmallError,
    DomainError,
    InvariantViolation,
    PreconditionError,
    ResourceCapError,
)
from src.pinning.homogeneous import correlation_length, pure_free_energy, pure_partition, pure_partition_batch
from src.pinning.kernels import InterArrivalLaw, K_at, build_law_from_config
from src.pinning.models import (
    ABound,
    Backend,
    CertificateParams,
    CertificateRecord,
    CertificateResult,
    CertificateStatus,
    Confidence,
    ConfidenceKind,
    Construction,
    DecayCheck,
    DisorderKind,
    DisorderLaw,
    HolderBound,
    LambdaSchedule,
    Provenance,
    RhoProfile,
    ScheduleKind,
    SlowlyVaryingKind,
    canonical_hash,
)
from src.pinning.quenched import fractional_moment_series_exact, fractional_moment_series_mc
from src.pinning.renewal import TerminatingLaw, build_terminating_law

logger = logging.getLogger(__name__)

# Geometric tilt grids, as ratios to the largest admissible lambda.
_SCHEDULE_GRID = 2.0 ** (-np.arange(48) / 4.0)
_GRID_MIN_GRID = 2.0 ** (-np.arange(25) / 2.0)
_GAMMA_MARGIN = 0.05
_GAMMA_STEPS = (0.01, 0.001, 0.0001)
# Relative allowance for rounding in the transfer recursion.
_DP_ROUNDING = 1e-10
_DECAY_TREND_THRESHOLD = 0.1


def admissible_lambda(gamma: float) -> float:
    """Largest tilt allowed by the change-of-measure bound: min(1, (1-gamma)/gamma)."""
    return min(1.0, (1.0 - gamma) / gamma)


def _holder_log_cost(d: DisorderLaw, gamma: float, lam: float) -> float:
    """log of M(-lambda)^gamma M(lambda gamma/(1-gamma))^{1-gamma}."""
    if lam == 0.0:
        return 0.0
    return gamma * log_mgf(d, -lam) + (1.0 - gamma) * log_mgf(d, lam * gamma / (1.0 - gamma))


def holder_tilt_bound(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float,
                      lam: float, N: int) -> HolderBound:
    """
    A_N <= Z_N(h_eff(lambda))^gamma (M(-lambda)^gamma M(lambda gamma/(1-gamma))^{1-gamma})^N.

    ``relaxed`` replaces the product by exp(c gamma lambda^2 N/(1-gamma)).
    """
    if not 0 < gamma <= 1:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    limit = admissible_lambda(gamma)
    if abs(lam) > limit * (1.0 + 1e-12):
        raise PreconditionError(f"|lambda| = {abs(lam):.6g} exceeds min(1, (1-gamma)/gamma) = {limit:.6g}")
    h_eff = tilted_effective_h(d, beta, h, lam)
    log_Z = float(pure_partition(law, h_eff, N)[N])
    bound = math.exp(gamma * log_Z + N * _holder_log_cost(d, gamma, lam))
    if lam == 0.0:
        relaxed = bound
    else:
        c = quadratic_bound_constant(d)
        relaxed = math.exp(gamma * log_Z + c * gamma * lam ** 2 * N / (1.0 - gamma))
    jensen = math.exp(gamma * float(pure_partition(law, h + log_mgf(d, beta), N)[N]))
    return HolderBound(N=N, lam=lam, gamma=gamma, h_eff=h_eff, bound=bound, relaxed=relaxed, jensen=jensen)


def _quantize(lam: float, limit: float) -> float:
    """Largest schedule-grid value not above lambda (0 below the grid)."""
    grid = limit * _SCHEDULE_GRID
    below = grid[grid <= lam * (1.0 + 1e-12)]
    return float(below[0]) if below.size else 0.0


def _holder_bounds(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float, k: int,
                   schedule: LambdaSchedule) -> list[ABound]:
    """min(Jensen, tilted) per j, all tilts evaluated in one batched transfer pass."""
    J = k - 1
    limit = admissible_lambda(gamma)
    if schedule.kind == ScheduleKind.GRID_MIN:
        lambdas = [0.0] + [float(limit * r) for r in _GRID_MIN_GRID]
        per_j = None
    else:
        per_j = []
        for j in range(1, J + 1):
            lam = schedule.lambda_at(j)
            if lam > limit * (1.0 + 1e-12):
                raise PreconditionError(
                    f"lambda_{j} = {lam:.6g} exceeds the admissible range min(1, (1-gamma)/gamma) = {limit:.6g}"
                )
            per_j.append(_quantize(lam, limit))
        lambdas = sorted(set([0.0] + per_j))
    row_of = {lam: r for r, lam in enumerate(lambdas)}
    h_eff = np.array([tilted_effective_h(d, beta, h, lam) for lam in lambdas])
    log_Z = pure_partition_batch(law, h_eff, J)
    costs = np.array([_holder_log_cost(d, gamma, lam) for lam in lambdas])
    j_index = np.arange(J + 1)
    # log bound per (row, j); row 0 (lambda = 0) is the Jensen bound
    log_bounds = gamma * log_Z + costs[:, None] * j_index[None, :]

    bounds = [ABound(j=0, value=1.0, provenance=Provenance.EXACT)]
    for j in range(1, J + 1):
        if per_j is None:
            row = int(np.argmin(log_bounds[:, j]))
        else:
            tilted_row = row_of[per_j[j - 1]]
            row = tilted_row if log_bounds[tilted_row, j] < log_bounds[0, j] else 0
        value = math.exp(log_bounds[row, j]) * (1.0 + _DP_ROUNDING)
        bounds.append(ABound(j=j, value=value, provenance=Provenance.HOLDER_DETERMINISTIC,
                             lam=lambdas[row] if row else None))
    return bounds


def build_A_bounds(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float, k: int,
                   backend: Backend = Backend.HOLDER, schedule: Optional[LambdaSchedule] = None,
                   replicas: Optional[int] = None, seed: Optional[int] = None,
                   workers: Optional[int] = None) -> list[ABound]:
    """
    Upper bounds on A_0..A_{k-1} at h + law.sound_shift.

    exact: rademacher enumeration (or the pure model when beta = 0);
    holder: deterministic change-of-measure bounds along ``schedule``;
    mc: upper confidence limits of replica estimates.
    """
    backend = Backend(backend)
    if not 0 < gamma < 1:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    if k < 1:
        raise DomainError("k must be at least 1")
    h_eval = h + law.sound_shift
    if k == 1:
        return [ABound(j=0, value=1.0, provenance=Provenance.EXACT)]

    if backend == Backend.EXACT:
        if beta == 0:
            A = np.exp(gamma * pure_partition(law, h_eval, k - 1))
        else:
            A = fractional_moment_series_exact(law, beta, h_eval, gamma, k, d)
        return [ABound(j=0, value=1.0, provenance=Provenance.EXACT)] + [
            ABound(j=j, value=float(A[j]) * (1.0 + _DP_ROUNDING), provenance=Provenance.EXACT)
            for j in range(1, k)
        ]

    if backend == Backend.HOLDER:
        return _holder_bounds(law, d, beta, h_eval, gamma, k, schedule or LambdaSchedule(kind=ScheduleKind.ZERO))

    if seed is None and beta != 0:
        raise DomainError("the mc backend needs a seed")
    replicas = replicas or 1000
    series = fractional_moment_series_mc(law, d, beta, h_eval, gamma, k, replicas, seed or 0, workers)
    provenance = Provenance.EXACT if beta == 0 else Provenance.MC_UPPER_CI
    return [ABound(j=0, value=1.0, provenance=Provenance.EXACT)] + [
        ABound(j=j, value=series.A[j].upper * (1.0 + _DP_ROUNDING), provenance=provenance)
        for j in range(1, k)
    ]


def _confidence(bounds: list[ABound]) -> Confidence:
    deterministic = {Provenance.EXACT.value, Provenance.HOLDER_DETERMINISTIC.value}
    if all(bound.provenance in deterministic for bound in bounds):
        return Confidence(kind=ConfidenceKind.EXACT)
    return Confidence(kind=ConfidenceKind.STATISTICAL, level=config.CONFIDENCE)


def _contributions(law: InterArrivalLaw, d: DisorderLaw, beta: float, h_eval: float,
                   params: CertificateParams) -> tuple[np.ndarray, float]:
    k = params.k
    if len(params.A_bounds) < k:
        raise PreconditionError(f"missing A bound for j={len(params.A_bounds)} (need j < {k})")
    for j, bound in enumerate(params.A_bounds[:k]):
        if bound.j != j:
            raise PreconditionError(f"A bounds out of order: position {j} holds j={bound.j}")
    tails = law.tail_sums_gamma_upper(params.gamma, k)
    weight = fractional_weight_moment(d, beta, h_eval, params.gamma)
    A = np.array([bound.value for bound in params.A_bounds[:k]])
    # sum_{n>=k} K(n-j)^gamma = T(k-j), stored at index k-j-1
    return weight * A * tails[::-1], weight


def rho_upper(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float,
              params: CertificateParams) -> CertificateResult:
    """Certified upper bound on rho and the resulting verdict."""
    h_eval = h + law.sound_shift
    contributions, weight = _contributions(law, d, beta, h_eval, params)
    rho = math.fsum(contributions)
    status = CertificateStatus.CERTIFIED if rho <= 1.0 else CertificateStatus.INCONCLUSIVE
    return CertificateResult(
        rho_upper=rho,
        status=status,
        confidence=_confidence(params.A_bounds[:params.k]),
        per_j_contributions=contributions.tolist(),
        k=params.k,
        gamma=params.gamma,
        weight=weight,
        h_evaluated=h_eval,
    )


def certify(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, params: CertificateParams,
            backend: Backend = Backend.HOLDER, replicas: Optional[int] = None, seed: Optional[int] = None,
            workers: Optional[int] = None) -> CertificateRecord:
    """Build the A bounds (unless supplied) and evaluate the certificate."""
    if not params.A_bounds:
        bounds = build_A_bounds(law, d, beta, h, params.gamma, params.k, backend, params.lambda_schedule,
                                replicas, seed, workers)
        params = params.model_copy(update={"A_bounds": bounds})
    result = rho_upper(law, d, beta, h, params)
    logger.debug(f"certificate beta={beta} h={h:.6g} k={params.k} gamma={params.gamma}: rho={result.rho_upper:.6g}")
    return CertificateRecord(
        law=law.config,
        disorder=d,
        beta=beta,
        h=h,
        backend=backend,
        params=params,
        result=result,
        bounds_digest=canonical_hash({"bounds": [b.model_dump(mode="json") for b in params.A_bounds]}),
        seed=seed,
        replicas=replicas if backend == Backend.MC else None,
    )


def replay_certificate(record: CertificateRecord, law: Optional[InterArrivalLaw] = None,
                       rebuild: bool = False) -> CertificateResult:
    """
    Recompute rho from a persisted record. With ``rebuild`` the A bounds are
    regenerated from the backend and seed first and must match the stored digest.
    """
    law = law or build_law_from_config(record.law)
    if law.config_hash != record.law.config_hash():
        raise DomainError("record was produced with a different law")
    params = record.params
    if rebuild:
        bounds = build_A_bounds(law, record.disorder, record.beta, record.h, params.gamma, params.k,
                                record.backend, params.lambda_schedule, record.replicas, record.seed)
        digest = canonical_hash({"bounds": [b.model_dump(mode="json") for b in bounds]})
        if digest != record.bounds_digest:
            raise InvariantViolation("rebuilt A bounds differ from the recorded ones")
    result = rho_upper(law, record.disorder, record.beta, record.h, params)
    if result.rho_upper != record.result.rho_upper:
        raise InvariantViolation(f"replayed rho {result.rho_upper!r} != recorded {record.result.rho_upper!r}")
    return result


def terminating_law_from_certificate(law: InterArrivalLaw, record: CertificateRecord, horizon: int) -> TerminatingLaw:
    """The sub-probability law Q_k of a certified record."""
    params = record.params
    A = [bound.value for bound in params.A_bounds[:params.k]]
    return build_terminating_law(law, params.k, params.gamma, A, record.result.weight, horizon,
                                 provenance=record.result.confidence.kind)


def moment_decay_check(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, gamma: float, k: int,
                       N_range, replicas: int = 2000, seed: Optional[int] = None,
                       workers: Optional[int] = None) -> DecayCheck:
    """Fit C = max A_N / K(N)^gamma over N_range and test the ratio for an upward trend."""
    N_values = sorted(int(N) for N in N_range)
    if len(N_values) < 3 or N_values[0] < 1:
        raise DomainError("need at least three positive N")
    N_top = N_values[-1]
    if beta == 0:
        A = np.exp(gamma * pure_partition(law, h, N_top))
    elif d.kind == DisorderKind.RADEMACHER and N_top <= config.J_MAX:
        A = fractional_moment_series_exact(law, beta, h, gamma, N_top + 1, d)
    else:
        if seed is None:
            raise DomainError("a seed is required for Monte Carlo moments")
        A = fractional_moment_series_mc(law, d, beta, h, gamma, N_top + 1, replicas, seed, workers).points()
    N_array = np.array(N_values)
    ratios = A[N_array] / K_at(law, N_array) ** gamma
    fit = stats.linregress(np.log(N_array), np.log(ratios))
    t_quantile = stats.t.ppf(0.975, len(N_values) - 2)
    flagged = bool(fit.slope - t_quantile * fit.stderr > _DECAY_TREND_THRESHOLD)
    if flagged:
        logger.warning(f"⚠️ A_N/K(N)^gamma trends upward (slope {fit.slope:.3f} ± {fit.stderr:.3f}); k={k}")
    return DecayCheck(N_values=N_values, ratios=ratios.tolist(), C_fit=float(ratios.max()),
                      trend_slope=float(fit.slope), trend_stderr=float(fit.stderr), flagged=flagged)


def choose_gamma(constraints: list[tuple[float, float]]) -> float:
    """
    Smallest grid gamma with X * gamma >= rhs + margin for every (X, rhs). The
    margin is 0.05, shrunk to half the slack X - rhs when that is smaller; the
    grid step is 0.01, refined while the coarse value would reach 1.
    """
    needed = 0.0
    for X, rhs in constraints:
        if X <= rhs:
            raise PreconditionError(f"no gamma < 1 satisfies gamma * {X:.6g} > {rhs:.6g}")
        margin = min(_GAMMA_MARGIN, 0.5 * (X - rhs))
        needed = max(needed, (rhs + margin) / X)
    for step in _GAMMA_STEPS:
        gamma = round(math.ceil(needed / step - 1e-9) * step, 6)
        if gamma < 1.0:
            return gamma
    raise PreconditionError(f"constraints require gamma >= {needed:.6g}, too close to 1")


def _inv_sqrt_start(gamma: float) -> int:
    """First j with 1/sqrt(j) <= min(1, (1-gamma)/gamma)."""
    limit = admissible_lambda(gamma)
    return max(1, math.ceil(1.0 / limit ** 2 - 1e-9))


def schedule_for_gamma(schedule: Optional[LambdaSchedule], gamma: float) -> Optional[LambdaSchedule]:
    """Move the start of a tilt schedule up to the first j admissible at ``gamma``."""
    if schedule is None or schedule.kind in (ScheduleKind.ZERO, ScheduleKind.GRID_MIN):
        return schedule
    if schedule.kind == ScheduleKind.INV_SQRT:
        start = _inv_sqrt_start(gamma)
    else:
        start = _inv_sqrt_log_start(gamma)
    return schedule.model_copy(update={"start_j": max(schedule.start_j, start)})


def _check_k(k: float, cap: int, hint: str) -> int:
    if not math.isfinite(k) or k > cap:
        required = int(k) if math.isfinite(k) else None
        raise ResourceCapError(f"k={k:.4g} exceeds the cap {cap}; {hint}", required=required, cap=cap)
    return int(k)


def _check_beta(beta: float) -> None:
    if not 0 < beta <= config.BETA0:
        raise PreconditionError(f"beta must lie in (0, beta0={config.BETA0}], got {beta}")


def construct_alpha_gt1(d: DisorderLaw, law: InterArrivalLaw, beta: float, a: float,
                        k_cap: Optional[int] = None) -> tuple[float, CertificateParams]:
    """h = h_c^ann + a beta^2, k = ceil(1/(a beta^2)), (1+alpha) gamma > 2, lambda_j = 1/sqrt(j)."""
    if law.alpha <= 1:
        raise DomainError(f"this construction needs alpha > 1, got {law.alpha}")
    if a <= 0:
        raise DomainError("a must be positive")
    _check_beta(beta)
    k_cap = k_cap or config.K_CAP
    Delta = a * beta ** 2
    k = _check_k(math.ceil(1.0 / Delta - 1e-9), k_cap, f"try a >= {1.0 / (beta ** 2 * k_cap):.3g}")
    gamma = choose_gamma([(law.s, 2.0)])
    schedule = LambdaSchedule(kind=ScheduleKind.INV_SQRT, start_j=_inv_sqrt_start(gamma))
    params = CertificateParams(k=k, gamma=gamma, lambda_schedule=schedule, construction=Construction.ALPHA_GT1)
    return h_c_ann(d, beta) + Delta, params


def shift_exponent(alpha: float, epsilon: float) -> float:
    """(2 alpha / (2 alpha - 1)) (1 + epsilon)."""
    return 2.0 * alpha / (2.0 * alpha - 1.0) * (1.0 + epsilon)


def gamma_constraints_half_one(alpha: float, epsilon: float) -> list[tuple[float, float]]:
    """The two (X, rhs) pairs gamma X > rhs of the 1/2 < alpha < 1 construction."""
    e2 = epsilon ** 2
    X1 = (1.0 + alpha) + (1.0 - e2) * (1.0 - alpha + 0.5 * epsilon * (alpha - 0.5))
    X2 = (1.0 + alpha) + (1.0 - e2) * (1.0 - alpha)
    return [(X1, 2.0), (X2, 2.0 - e2)]


def construct_alpha_half_one(d: DisorderLaw, law: InterArrivalLaw, beta: float, a: float, epsilon: float,
                             k_cap: Optional[int] = None) -> tuple[float, CertificateParams]:
    """Delta = a beta^{2 alpha (1+eps)/(2 alpha - 1)}, k = 1/F(0, Delta), gamma from the two constraints."""
    alpha = law.alpha
    if not 0.5 < alpha < 1:
        raise DomainError(f"this construction needs 1/2 < alpha < 1, got {alpha}")
    if a <= 0 or epsilon <= 0:
        raise DomainError("a and epsilon must be positive")
    _check_beta(beta)
    k_cap = k_cap or config.K_CAP
    constraints = gamma_constraints_half_one(alpha, epsilon)
    try:
        gamma = choose_gamma(constraints)
    except PreconditionError:
        values = ", ".join(f"gamma > {rhs / X:.6g}" for X, rhs in constraints)
        raise PreconditionError(f"no admissible gamma < 1 at epsilon={epsilon}: {values}") from None
    Delta = a * beta ** shift_exponent(alpha, epsilon)
    k = _check_k(math.ceil(correlation_length(law, Delta)), k_cap, "increase a")
    start = max(math.ceil(k ** (1.0 - epsilon ** 2)), _inv_sqrt_start(gamma))
    schedule = LambdaSchedule(kind=ScheduleKind.INV_SQRT, start_j=start)
    params = CertificateParams(k=k, gamma=gamma, lambda_schedule=schedule,
                               construction=Construction.ALPHA_HALF_ONE, epsilon=epsilon)
    return h_c_ann(d, beta) + Delta, params


def _inv_sqrt_log_start(gamma: float) -> int:
    """First j >= 2 with j log j >= (gamma/(1-gamma))^2."""
    target = (gamma / (1.0 - gamma)) ** 2
    j = 2
    while j * math.log(j) < target:
        j += 1
    return j


def construct_alpha_half(d: DisorderLaw, law: InterArrivalLaw, beta: float, a: float, epsilon: float, eta: float,
                         k_cap: Optional[int] = None) -> tuple[float, CertificateParams]:
    """Delta = a exp(-beta^{-1/(eta-1/2-eps)}), k = 1/F(0, Delta), gamma = 1 - 1/log k, lambda_j = (j log j)^{-1/2}."""
    if law.alpha != 0.5:
        raise DomainError(f"this construction needs alpha = 1/2, got {law.alpha}")
    if law.L.kind != SlowlyVaryingKind.LOG_POWER or law.L.exponent != -eta:
        raise PreconditionError(f"L must be (log(1+x))^(-eta) with eta={eta}")
    if not 0 < epsilon < eta - 0.5:
        raise PreconditionError(f"epsilon must satisfy 0 < epsilon < eta - 1/2 = {eta - 0.5}")
    if a <= 0:
        raise DomainError("a must be positive")
    _check_beta(beta)
    k_cap = k_cap or config.K_CAP
    Delta = a * math.exp(-beta ** (-1.0 / (eta - 0.5 - epsilon)))
    F = pure_free_energy(law, Delta).F
    k = _check_k(math.ceil(1.0 / F) if F > 0 else math.inf, k_cap, "the correlation length is beyond reach")
    if k <= 20:
        raise CutoffTooSmallError(f"k={k} too small: gamma = 1 - 1/log k needs (1+alpha) gamma > 1", k=k)
    gamma = 1.0 - 1.0 / math.log(k)
    schedule = LambdaSchedule(kind=ScheduleKind.INV_SQRT_LOG, start_j=_inv_sqrt_log_start(gamma))
    params = CertificateParams(k=k, gamma=gamma, lambda_schedule=schedule,
                               construction=Construction.ALPHA_HALF, epsilon=epsilon)
    return h_c_ann(d, beta) + Delta, params


def rho_profile(law: InterArrivalLaw, d: DisorderLaw, beta: float, h: float, params: CertificateParams,
                R1: Optional[int] = None, R2: float = 2.0) -> RhoProfile:
    """Per-j addends of rho split at the construction's boundary between far and near blocks."""
    result = rho_upper(law, d, beta, h, params)
    k = params.k
    if params.construction == Construction.ALPHA_HALF_ONE and params.epsilon is not None:
        split = int(math.floor(k ** (1.0 - params.epsilon ** 2)))
    elif params.construction == Construction.ALPHA_HALF:
        split = int(k / R2)
    else:
        split = k - (R1 if R1 is not None else max(1, k // 2))
    split = min(max(split, 0), k)
    contributions = result.per_j_contributions
    far = math.fsum(contributions[:split])
    near = math.fsum(contributions[split:])
    return RhoProfile(contributions=contributions, total=result.rho_upper, split_point=split,
                      near_block=near, far_block=far)


__all__ = [
    "admissible_lambda",
    "holder_tilt_bound",
    "build_A_bounds",
    "rho_upper",
    "certify",
    "replay_certificate",
    "terminating_law_from_certificate",
    "moment_decay_check",
    "choose_gamma",
    "schedule_for_gamma",
    "construct_alpha_gt1",
    "shift_exponent",
    "gamma_constraints_half_one",
    "construct_alpha_half_one",
    "construct_alpha_half",
    "rho_profile",
]
