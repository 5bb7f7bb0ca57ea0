"""
Experiment drivers: certified critical-shift scans over beta, exponent fits
and quenched-versus-annealed free-energy profiles.
"""
import logging
import math
import time
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from src.constants import config
from src.pinning.certificate import (
    certify,
    construct_alpha_gt1,
    construct_alpha_half,
    construct_alpha_half_one,
    rho_profile,
    schedule_for_gamma,
    shift_exponent,
)
from src.pinning.disorder import h_c_ann, log_mgf
from src.pinning.exceptions import CutoffTooSmallError, DomainError, ResourceCapError
from src.pinning.homogeneous import pure_partition_batch
from src.pinning.kernels import InterArrivalLaw
from src.pinning.models import (
    Backend,
    CertificateParams,
    CertificateRecord,
    Construction,
    DisorderLaw,
    ExponentFit,
    LambdaSchedule,
    ScanStatus,
    ScheduleKind,
    ShiftParams,
    ShiftScanRecord,
)
from src.pinning.quenched import free_energy_mc

logger = logging.getLogger(__name__)


class ScanCase(BaseModel):
    """Which construction a scan runs, with its shape parameters and search budget."""
    construction: Construction = Construction.ALPHA_GT1
    epsilon: Optional[float] = Field(None, gt=0)
    eta: Optional[float] = Field(None, gt=0.5)
    a_max: float = Field(1.0, gt=0)
    max_reductions: int = Field(12, ge=0, description="Times a may be divided by 4 before giving up")
    schedule: Optional[ScheduleKind] = Field(None, description="Override of the construction's tilt schedule")
    gamma_ladder: list[float] = Field(default_factory=list, description="Extra gamma values tried in order")

    model_config = ConfigDict(use_enum_values=True)

    @model_validator(mode="after")
    def construction_parameters(self):
        if self.construction == Construction.MANUAL:
            raise ValueError("a scan needs one of the parameter constructions")
        if self.construction in (Construction.ALPHA_HALF_ONE, Construction.ALPHA_HALF) and self.epsilon is None:
            raise ValueError("epsilon is required for this construction")
        if self.construction == Construction.ALPHA_HALF and self.eta is None:
            raise ValueError("eta is required for the alpha = 1/2 construction")
        if any(not 0 < g < 1 for g in self.gamma_ladder):
            raise ValueError("gamma ladder values must lie in (0, 1)")
        return self

    def target_slope(self, alpha: float) -> float:
        if self.construction == Construction.ALPHA_GT1:
            return 2.0
        if self.construction == Construction.ALPHA_HALF_ONE:
            return shift_exponent(alpha, self.epsilon)
        return 1.0 / (self.eta - 0.5 - self.epsilon)


def _construct(case: ScanCase, d: DisorderLaw, law: InterArrivalLaw, beta: float, a: float,
               k_cap: int) -> tuple[float, CertificateParams]:
    if case.construction == Construction.ALPHA_GT1:
        return construct_alpha_gt1(d, law, beta, a, k_cap)
    if case.construction == Construction.ALPHA_HALF_ONE:
        return construct_alpha_half_one(d, law, beta, a, case.epsilon, k_cap)
    return construct_alpha_half(d, law, beta, a, case.epsilon, case.eta, k_cap)


def _candidates(case: ScanCase, law: InterArrivalLaw, params: CertificateParams) -> list[CertificateParams]:
    """The construction's parameters followed by the gamma ladder above its gamma."""
    gammas = [params.gamma] + [g for g in case.gamma_ladder if g > params.gamma and law.s * g > 1]
    candidates = []
    for gamma in gammas:
        schedule = params.lambda_schedule
        if case.schedule is not None:
            schedule = LambdaSchedule(kind=case.schedule, start_j=schedule.start_j if schedule else 1)
        candidates.append(params.model_copy(update={
            "gamma": gamma,
            "lambda_schedule": schedule_for_gamma(schedule, gamma),
        }))
    return candidates


class _Attempt:
    """Outcome of trying one amplitude a: fired, inconclusive, skipped (k too small) or capped."""

    def __init__(self, a: float, h: float, record: Optional[CertificateRecord] = None,
                 required_k: Optional[int] = None, skipped: bool = False):
        self.a = a
        self.h = h
        self.record = record
        self.required_k = required_k
        self.skipped = skipped

    @property
    def fired(self) -> bool:
        return self.record is not None and self.record.result.certified

    @property
    def capped(self) -> bool:
        return self.record is None and not self.skipped


def _attempt(case: ScanCase, d: DisorderLaw, law: InterArrivalLaw, beta: float, a: float, backend: Backend,
             k_cap: int, replicas: Optional[int], seed: Optional[int], workers: Optional[int]) -> _Attempt:
    try:
        h, params = _construct(case, d, law, beta, a, k_cap)
    except ResourceCapError as exc:
        return _Attempt(a, math.nan, required_k=exc.required)
    except CutoffTooSmallError as exc:
        logger.debug(f"beta={beta}, a={a:.4g}: k={exc.k} too small, reducing a")
        return _Attempt(a, math.nan, skipped=True)
    best = None
    for candidate in _candidates(case, law, params):
        record = certify(law, d, beta, h, candidate, backend, replicas, seed, workers)
        if record.result.certified:
            return _Attempt(a, h, record)
        if best is None or record.result.rho_upper < best.result.rho_upper:
            best = record
    return _Attempt(a, h, best)


def _scan_one(case: ScanCase, d: DisorderLaw, law: InterArrivalLaw, beta: float, backend: Backend, k_cap: int,
              steps: int, replicas: Optional[int], seed: Optional[int], workers: Optional[int]) -> ShiftScanRecord:
    started = time.perf_counter()
    hc = h_c_ann(d, beta)

    def attempt(a: float) -> _Attempt:
        return _attempt(case, d, law, beta, a, backend, k_cap, replicas, seed, workers)

    current = attempt(case.a_max)
    previous: Optional[_Attempt] = None
    failed_above: Optional[float] = None
    last_inconclusive = current if current.record is not None else None
    reductions = 0
    while not current.fired and not current.capped and reductions < case.max_reductions:
        failed_above = current.a
        previous = current
        current = attempt(current.a / 4.0)
        if current.record is not None and not current.fired:
            last_inconclusive = current
        reductions += 1

    if current.capped and previous is not None:
        # a/4 jumped past the cap: search between the last uncapped a and the capped one
        hi, lo = previous.a, current.a
        for _ in range(steps):
            trial = attempt(math.sqrt(lo * hi))
            if trial.fired:
                current, failed_above = trial, hi
                break
            if trial.capped:
                lo, current = trial.a, trial
            else:
                hi = trial.a
                if trial.record is not None:
                    last_inconclusive = trial

    if not current.fired:
        status = ScanStatus.INFEASIBLE if current.capped else ScanStatus.NO_CERTIFICATE
        profile = None
        if last_inconclusive is not None:
            record = last_inconclusive.record
            profile = rho_profile(law, d, beta, record.h, record.params)
        logger.warning(f"⚠️ beta={beta}: no certificate ({status.value}, required k={current.required_k})")
        return ShiftScanRecord(beta=beta, h_c_ann=hc, Delta_certified=0.0, backend=backend,
                               construction=case.construction, status=status, required_k=current.required_k,
                               seed=seed, profile=profile,
                               rho_upper=last_inconclusive.record.result.rho_upper if last_inconclusive else None,
                               runtime=time.perf_counter() - started)

    best = current
    if failed_above is not None:
        lo, hi = best.a, failed_above
        for _ in range(steps):
            mid = math.sqrt(lo * hi)
            trial = attempt(mid)
            if trial.fired:
                best, lo = trial, mid
            else:
                hi = mid

    record = best.record
    logger.info(f"✅ beta={beta}: Delta_certified={best.h - hc:.4g} (a={best.a:.4g}, k={record.params.k}, "
                f"gamma={record.params.gamma})")
    return ShiftScanRecord(
        beta=beta,
        h_c_ann=hc,
        Delta_certified=best.h - hc,
        a_certified=best.a,
        k=record.params.k,
        gamma=record.params.gamma,
        backend=backend,
        construction=case.construction,
        confidence=record.result.confidence,
        rho_upper=record.result.rho_upper,
        status=ScanStatus.CERTIFIED,
        shift=ShiftParams(a=best.a, Delta=best.h - hc, epsilon=case.epsilon,
                          eta=case.eta if case.construction == Construction.ALPHA_HALF else None),
        seed=seed,
        runtime=time.perf_counter() - started,
    )


def shift_scan(case: ScanCase, d: DisorderLaw, law: InterArrivalLaw, beta_grid: Iterable[float],
               backend: Backend = Backend.HOLDER, k_cap: Optional[int] = None,
               bisection_steps: Optional[int] = None, replicas: Optional[int] = None,
               seed: Optional[int] = None, workers: Optional[int] = None) -> list[ShiftScanRecord]:
    """
    For each beta, the largest a (searched from a_max downwards, then refined by
    geometric bisection) whose construction yields a certificate.
    """
    k_cap = k_cap or config.K_CAP
    steps = bisection_steps if bisection_steps is not None else config.BISECTION_STEPS
    backend = Backend(backend)
    betas = [float(b) for b in beta_grid]
    if any(not 0 < b <= config.BETA0 for b in betas):
        raise DomainError(f"beta values must lie in (0, beta0={config.BETA0}]")
    if backend == Backend.MC and seed is None:
        raise DomainError("the mc backend needs a seed")
    logger.info(f"🚀 Shift scan: {case.construction} over {len(betas)} beta values, backend {backend.value}")
    return [_scan_one(case, d, law, beta, backend, k_cap, steps, replicas, seed, workers) for beta in betas]


def exponent_fit(records: Iterable[ShiftScanRecord], target: Optional[float] = None, log_log: bool = False,
                 min_points: int = 4) -> ExponentFit:
    """
    Least-squares slope of log Delta_certified against log beta; with
    ``log_log`` of log log(1/Delta) against log(1/beta).
    """
    usable = [r for r in records if r.Delta_certified > 0]
    if len(usable) < max(min_points, 3):
        raise DomainError(f"need at least {max(min_points, 3)} certified records, got {len(usable)}")
    beta = np.array([r.beta for r in usable])
    Delta = np.array([r.Delta_certified for r in usable])
    if np.unique(beta).size < 2:
        raise DomainError("degenerate beta grid")
    if log_log:
        if np.any(Delta >= 1):
            raise DomainError("log log(1/Delta) needs Delta < 1")
        x, y = np.log(1.0 / beta), np.log(np.log(1.0 / Delta))
    else:
        x, y = np.log(beta), np.log(Delta)
    fit = stats.linregress(x, y)
    half_width = stats.t.ppf(0.975, len(usable) - 2) * fit.stderr
    return ExponentFit(slope=float(fit.slope), intercept=float(fit.intercept), stderr=float(fit.stderr),
                       ci_low=float(fit.slope - half_width), ci_high=float(fit.slope + half_width),
                       n_points=len(usable), target=target, log_log=log_log)


def fe_profile(law: InterArrivalLaw, d: DisorderLaw, beta: float, h_grid: Iterable[float], N: int,
               replicas: int, seed: int, workers: Optional[int] = None) -> pd.DataFrame:
    """Per h: quenched estimate of (1/N) E log Z_N, the annealed value (1/N) log E Z_N and their gap."""
    h_values = np.array([float(h) for h in h_grid])
    annealed = pure_partition_batch(law, h_values + log_mgf(d, beta), N)[:, N] / N
    rows = []
    for h, ann in zip(h_values, annealed):
        estimate = free_energy_mc(law, d, beta, float(h), N, replicas, seed, workers)
        rows.append({"h": float(h), "quenched": estimate.point, "stderr": estimate.stderr,
                     "annealed": float(ann), "gap": float(ann) - estimate.point})
    return pd.DataFrame(rows, columns=["h", "quenched", "stderr", "annealed", "gap"])


_CSV_COLUMNS = ["beta", "h_c_ann", "Delta_certified", "a_certified", "k", "gamma", "backend", "construction",
                "confidence", "rho_upper", "status", "required_k", "seed"]


def records_frame(records: Iterable[ShiftScanRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        row = record.model_dump(mode="json", exclude={"profile", "shift"})
        confidence = record.confidence
        row["confidence"] = None if confidence is None else (
            confidence.kind if confidence.level is None else f"{confidence.kind}({confidence.level})"
        )
        rows.append(row)
    return pd.DataFrame(rows, columns=_CSV_COLUMNS)


def write_scan_csv(records: Iterable[ShiftScanRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    records_frame(records).to_csv(path, index=False)
    return path


def write_scan_dat(records: Iterable[ShiftScanRecord], path: Union[str, Path]) -> Path:
    """Whitespace columns: log beta, log Delta_certified (certified rows only)."""
    path = Path(path)
    with open(path, "w") as handle:
        handle.write("# log_beta log_Delta_certified\n")
        for record in records:
            if record.Delta_certified > 0:
                handle.write(f"{math.log(record.beta):.12g} {math.log(record.Delta_certified):.12g}\n")
    return path


def write_gnuplot_stub(dat_path: Union[str, Path], path: Union[str, Path], fit: Optional[ExponentFit] = None) -> Path:
    path = Path(path)
    lines = [
        "set xlabel 'log beta'",
        "set ylabel 'log Delta_certified'",
    ]
    plot = f"plot '{Path(dat_path).name}' using 1:2 with points title 'certified'"
    if fit is not None:
        lines.append(f"f(x) = {fit.intercept:.12g} + {fit.slope:.12g} * x")
        plot += f", f(x) title 'slope {fit.slope:.3f}'"
    lines.append(plot)
    path.write_text("\n".join(lines) + "\n")
    return path


__all__ = [
    "ScanCase",
    "shift_scan",
    "exponent_fit",
    "fe_profile",
    "records_frame",
    "write_scan_csv",
    "write_scan_dat",
    "write_gnuplot_stub",
]
