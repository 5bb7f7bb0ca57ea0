"""
Pydantic models shared by the Pinning Lab modules.

Records here are small and serializable; array-heavy objects (laws, renewal
tables, environments) live in their own modules as plain classes.
"""
import hashlib
import json
import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def canonical_hash(payload: dict) -> str:
    """SHA-256 of a JSON payload with sorted keys; key order never matters."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class SlowlyVaryingKind(str, Enum):
    """Families of slowly varying functions"""
    CONSTANT = "constant"
    LOG_POWER = "log_power"


class DisorderKind(str, Enum):
    """Environment families"""
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


class Provenance(str, Enum):
    """Where an upper bound on a fractional moment comes from"""
    EXACT = "exact"
    HOLDER_DETERMINISTIC = "holder_deterministic"
    MC_UPPER_CI = "mc_upper_ci"


class Backend(str, Enum):
    """A-bound backends"""
    EXACT = "exact"
    HOLDER = "holder"
    MC = "mc"


class ScheduleKind(str, Enum):
    """Tilt schedules j -> lambda_j"""
    ZERO = "zero"
    INV_SQRT = "inv_sqrt"
    INV_SQRT_LOG = "inv_sqrt_log"
    GRID_MIN = "grid_min"


class Construction(str, Enum):
    """Parameter constructions for the certificate"""
    ALPHA_GT1 = "alpha_gt1"
    ALPHA_HALF_ONE = "alpha_half_one"
    ALPHA_HALF = "alpha_half"
    MANUAL = "manual"


class CertificateStatus(str, Enum):
    CERTIFIED = "certified_delocalized"
    INCONCLUSIVE = "inconclusive"


class ConfidenceKind(str, Enum):
    EXACT = "exact"
    STATISTICAL = "statistical"


class ScanStatus(str, Enum):
    CERTIFIED = "certified"
    NO_CERTIFICATE = "no_certificate"
    INFEASIBLE = "infeasible"


class DriftKind(str, Enum):
    """Shapes of the diverging function r(N) in the negative-drift check"""
    LOG = "log"
    POWER = "power"
    CONSTANT = "constant"


class SlowlyVaryingSpec(BaseModel):
    """L(x) = 1 (constant) or L(x) = (log(1+x))^b (log_power)."""
    kind: SlowlyVaryingKind = Field(SlowlyVaryingKind.CONSTANT, description="Family of L")
    b: float = Field(0.0, description="Exponent of log(1+x); ignored for constant L")

    model_config = ConfigDict(use_enum_values=True, frozen=True)

    @model_validator(mode="after")
    def constant_has_no_exponent(self):
        if self.kind == SlowlyVaryingKind.CONSTANT and self.b != 0.0:
            raise ValueError("constant L takes no exponent b")
        return self

    @property
    def exponent(self) -> float:
        """Effective log exponent (0 for constant L)."""
        return 0.0 if self.kind == SlowlyVaryingKind.CONSTANT else self.b

    def value(self, x):
        """Evaluate L at real x >= 1 (scalar or array)."""
        x = np.asarray(x, dtype=float)
        if self.exponent == 0.0:
            return np.ones_like(x)
        return np.log1p(x) ** self.exponent

    def log_value(self, x):
        x = np.asarray(x, dtype=float)
        if self.exponent == 0.0:
            return np.zeros_like(x)
        return self.exponent * np.log(np.log1p(x))


class LawConfig(BaseModel):
    """Serializable description of an inter-arrival law."""
    alpha: float = Field(..., gt=0, description="Tail exponent alpha")
    L: SlowlyVaryingSpec = Field(default_factory=SlowlyVaryingSpec, description="Slowly varying factor")
    N_max: int = Field(100000, ge=1000, description="Size of the cached table K(1..N_max)")
    tol: float = Field(1e-8, gt=0, description="Maximal width of the normalization bracket")
    cutoff: int = Field(1000000, ge=1000, description="Exact partial-sum cutoff of the normalization")

    @model_validator(mode="after")
    def cutoff_covers_table(self):
        if self.cutoff < self.N_max:
            raise ValueError("cutoff must be at least N_max")
        return self

    def config_hash(self) -> str:
        return canonical_hash(self.model_dump(mode="json"))


class DisorderLaw(BaseModel):
    """Centered, unit-variance IID environment with finite exponential moments."""
    kind: DisorderKind = Field(DisorderKind.GAUSSIAN, description="gaussian or rademacher")

    model_config = ConfigDict(use_enum_values=True, frozen=True)


class TiltSpec(BaseModel):
    """Exponential tilt of the first N environment variables by e^{-lambda omega}."""
    N: int = Field(..., ge=0, description="Tilt horizon")
    lam: float = Field(0.0, ge=0, alias="lambda", description="Tilt strength")

    model_config = ConfigDict(populate_by_name=True, frozen=True)


class Interval(BaseModel):
    """Closed real interval [lower, upper]."""
    lower: float
    upper: float

    @model_validator(mode="after")
    def ordered(self):
        if self.lower > self.upper:
            raise ValueError(f"empty interval [{self.lower}, {self.upper}]")
        return self

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    def scaled(self, factor: float) -> "Interval":
        """Multiply by a positive factor."""
        return Interval(lower=self.lower * factor, upper=self.upper * factor)


class MomentEstimate(BaseModel):
    """Replica estimate of an expectation with a one-sided upper confidence limit."""
    point: float
    stderr: float = Field(0.0, ge=0)
    replicas: int = Field(0, ge=0)
    confidence: float = Field(0.99, gt=0, lt=1)
    upper: float

    @model_validator(mode="after")
    def upper_dominates(self):
        if self.upper < self.point:
            raise ValueError("upper confidence limit below the point estimate")
        return self

    @classmethod
    def exact(cls, value: float, confidence: float = 0.99) -> "MomentEstimate":
        return cls(point=value, stderr=0.0, replicas=0, confidence=confidence, upper=value)

    @classmethod
    def from_moments(cls, point: float, stderr: float, replicas: int, confidence: float, z: float):
        return cls(point=point, stderr=stderr, replicas=replicas, confidence=confidence,
                   upper=point + z * stderr)

    def within(self, target: float, n_stderr: float = 3.0) -> bool:
        """True when |point - target| <= n_stderr * stderr (exact match when stderr = 0)."""
        slack = n_stderr * self.stderr
        if slack == 0.0:
            return math.isclose(self.point, target, rel_tol=1e-12, abs_tol=1e-300)
        return abs(self.point - target) <= slack


class ABound(BaseModel):
    """Upper bound on A_j with provenance."""
    j: int = Field(..., ge=0)
    value: float = Field(..., gt=0)
    provenance: Provenance
    lam: Optional[float] = Field(None, description="Tilt used when the tilted bound was active")

    model_config = ConfigDict(use_enum_values=True)


class LambdaSchedule(BaseModel):
    """Tilt schedule: lambda_j = 0 for j < start_j, the schedule formula from start_j on."""
    kind: ScheduleKind = ScheduleKind.INV_SQRT
    start_j: int = Field(1, ge=1)
    scale: float = Field(1.0, gt=0)

    model_config = ConfigDict(use_enum_values=True)

    def lambda_at(self, j: int) -> float:
        if j < self.start_j or self.kind in (ScheduleKind.ZERO, ScheduleKind.GRID_MIN):
            return 0.0
        if self.kind == ScheduleKind.INV_SQRT:
            return self.scale / math.sqrt(j)
        if j < 2:
            raise ValueError("the j log j schedule needs j >= 2")
        return self.scale / math.sqrt(j * math.log(j))


class CertificateParams(BaseModel):
    """Inputs to the certificate sum: cutoff k, exponent gamma and A-bounds."""
    k: int = Field(..., ge=1, description="Cutoff k")
    gamma: float = Field(..., gt=0, lt=1, description="Fractional exponent")
    A_bounds: list[ABound] = Field(default_factory=list, description="Upper bounds on A_0..A_{k-1}")
    lambda_schedule: Optional[LambdaSchedule] = None
    construction: Construction = Construction.MANUAL
    epsilon: Optional[float] = None

    model_config = ConfigDict(use_enum_values=True)

    @field_validator("A_bounds")
    @classmethod
    def first_bound_is_one(cls, bounds):
        if bounds and (bounds[0].j != 0 or bounds[0].value != 1.0):
            raise ValueError("A_bounds[0] must be exactly 1")
        return bounds


class Confidence(BaseModel):
    kind: ConfidenceKind
    level: Optional[float] = None

    model_config = ConfigDict(use_enum_values=True)


class CertificateResult(BaseModel):
    """Verdict of the certificate with its confidence semantics."""
    rho_upper: float = Field(..., ge=0)
    status: CertificateStatus
    confidence: Confidence
    per_j_contributions: list[float]
    k: int
    gamma: float
    weight: float = Field(..., description="E[z^gamma] at the evaluation point")
    h_evaluated: float = Field(..., description="h shifted by the normalization slack")

    model_config = ConfigDict(use_enum_values=True)

    @model_validator(mode="after")
    def status_matches_rho(self):
        certified = self.rho_upper <= 1.0
        if certified != (self.status == CertificateStatus.CERTIFIED):
            raise ValueError("status must be certified exactly when rho_upper <= 1")
        return self

    @property
    def certified(self) -> bool:
        return self.status == CertificateStatus.CERTIFIED


class CertificateRecord(BaseModel):
    """Everything needed to replay a certificate: law, disorder, point, bounds and verdict."""
    law: LawConfig
    disorder: DisorderLaw
    beta: float = Field(..., ge=0)
    h: float
    backend: Backend
    params: CertificateParams
    result: CertificateResult
    bounds_digest: str = Field(..., description="SHA-256 of the per-j bounds")
    seed: Optional[int] = None
    replicas: Optional[int] = None

    model_config = ConfigDict(use_enum_values=True)


class ShiftParams(BaseModel):
    """Distance of h above the annealed critical point."""
    a: float = Field(..., gt=0)
    Delta: float = Field(..., gt=0)
    epsilon: Optional[float] = None
    eta: Optional[float] = None

    @model_validator(mode="after")
    def epsilon_window(self):
        if self.eta is not None and self.epsilon is not None:
            if not 0 < self.epsilon < self.eta - 0.5:
                raise ValueError("epsilon must satisfy 0 < epsilon < eta - 1/2")
        return self


class PureSolution(BaseModel):
    """Free energy of the homogeneous model at one h."""
    h: float
    F: float = Field(..., ge=0)
    bracket: Interval
    residual: float = Field(..., ge=0)
    iterations: int = 0
    law_hash: str = ""


class DriftSpec(BaseModel):
    """r(N) = log N, N^exponent, or a constant."""
    kind: DriftKind = DriftKind.LOG
    exponent: float = 0.0

    model_config = ConfigDict(use_enum_values=True)

    def value(self, N: float) -> float:
        if self.kind == DriftKind.LOG:
            return math.log(N)
        if self.kind == DriftKind.POWER:
            return N ** self.exponent
        return self.exponent

    @property
    def diverges(self) -> bool:
        return self.kind == DriftKind.LOG or (self.kind == DriftKind.POWER and self.exponent > 0)


class HolderBound(BaseModel):
    """Change-of-measure bound on A_N at one tilt."""
    N: int
    lam: float
    gamma: float
    h_eff: float
    bound: float = Field(..., description="Exact Holder product form")
    relaxed: float = Field(..., description="exp(c gamma lambda^2 N/(1-gamma)) relaxation")
    jensen: float = Field(..., description="(E Z_N)^gamma")


class CheckReport(BaseModel):
    """Generic numeric check: computed value, reference and margin (>= 0 means pass)."""
    name: str
    value: float
    reference: float
    margin: float
    passed: bool
    exact: bool = False
    details: dict = Field(default_factory=dict)


class DecayCheck(BaseModel):
    """Fit of A_N / K(N)^gamma over a range of N."""
    N_values: list[int]
    ratios: list[float]
    C_fit: float
    trend_slope: float
    trend_stderr: float
    flagged: bool


class RhoProfile(BaseModel):
    contributions: list[float]
    total: float
    split_point: int
    near_block: float = Field(..., description="Sum over j at or beyond the split point")
    far_block: float = Field(..., description="Sum over j before the split point")
    labels: tuple[str, str] = ("far", "near")


class ShiftScanRecord(BaseModel):
    """One row of a critical-shift scan."""
    beta: float
    h_c_ann: float
    Delta_certified: float = Field(..., ge=0)
    a_certified: Optional[float] = None
    k: Optional[int] = None
    gamma: Optional[float] = None
    backend: Backend
    construction: Construction
    confidence: Optional[Confidence] = None
    rho_upper: Optional[float] = None
    status: ScanStatus
    required_k: Optional[int] = None
    shift: Optional[ShiftParams] = None
    seed: Optional[int] = None
    profile: Optional[RhoProfile] = None
    runtime: float = Field(0.0, exclude=True, description="Wall time in seconds; not persisted")

    model_config = ConfigDict(use_enum_values=True)


class ExponentFit(BaseModel):
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    n_points: int
    target: Optional[float] = None
    log_log: bool = Field(False, description="True when fitting log log(1/Delta) against log(1/beta)")


__all__ = [
    "canonical_hash",
    "SlowlyVaryingKind", "DisorderKind", "Provenance", "Backend", "ScheduleKind",
    "Construction", "CertificateStatus", "ConfidenceKind", "ScanStatus", "DriftKind",
    "SlowlyVaryingSpec", "LawConfig", "DisorderLaw", "TiltSpec", "Interval",
    "MomentEstimate", "ABound", "LambdaSchedule", "CertificateParams", "Confidence",
    "CertificateResult", "CertificateRecord", "ShiftParams", "PureSolution", "DriftSpec", "HolderBound",
    "CheckReport", "DecayCheck", "RhoProfile", "ShiftScanRecord", "ExponentFit",
]
