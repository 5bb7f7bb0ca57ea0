"""
Declarative run configuration.

A run is described by one YAML document: the law, the disorder, the mode and
a parameter section named after the mode. Loading errors point at the line of
the offending key.
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.constants import config
from src.pinning.exceptions import ConfigValidationError
from src.pinning.models import (
    Backend,
    DisorderLaw,
    LambdaSchedule,
    LawConfig,
    SlowlyVaryingSpec,
    canonical_hash,
)
from src.pinning.scan import ScanCase

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    """Operation families a run can execute"""
    LAW_INFO = "law-info"
    PURE_SOLVE = "pure-solve"
    RENEWAL_CHECK = "renewal-check"
    QUENCHED_FE = "quenched-fe"
    CERTIFY = "certify"
    SCAN_SHIFT = "scan-shift"
    FIT_EXPONENT = "fit-exponent"
    FE_PROFILE = "fe-profile"


class LawSection(BaseModel):
    """Inter-arrival law; unset sizes fall back to the environment defaults."""
    alpha: float = Field(..., gt=0, description="Tail exponent alpha")
    L: SlowlyVaryingSpec = Field(default_factory=SlowlyVaryingSpec, description="Slowly varying factor")
    N_max: Optional[int] = Field(None, ge=1000, description="Table size")
    tol: Optional[float] = Field(None, gt=0, description="Normalization bracket tolerance")
    cutoff: Optional[int] = Field(None, ge=1000, description="Normalization cutoff")

    model_config = ConfigDict(extra="forbid")


class PureSolveParams(BaseModel):
    h_values: list[float] = Field(..., min_length=1, description="Pinning strengths to solve at")
    dp_check_N: int = Field(10000, ge=2, description="Length of the transfer-recursion cross-check")

    model_config = ConfigDict(extra="forbid")


class RenewalCheckParams(BaseModel):
    N: int = Field(2000, ge=1, description="Horizon of the renewal function")
    replicas: int = Field(200, ge=2, description="Sampled trajectories for the LLN and Laplace checks")
    c_values: list[float] = Field(default_factory=lambda: [1.0], description="Laplace functional arguments")

    model_config = ConfigDict(extra="forbid")


class QuenchedParams(BaseModel):
    beta: float = Field(..., ge=0)
    h_values: list[float] = Field(..., min_length=1)
    N: int = Field(1000, ge=1)

    model_config = ConfigDict(extra="forbid")


class CertifyParams(BaseModel):
    beta: float = Field(..., ge=0)
    h: float
    k: int = Field(..., ge=1)
    gamma: float = Field(..., gt=0, lt=1)
    backend: Backend = Backend.HOLDER
    schedule: Optional[LambdaSchedule] = None

    model_config = ConfigDict(extra="forbid", use_enum_values=True)


class ScanParams(BaseModel):
    case: ScanCase = Field(default_factory=ScanCase)
    beta_grid: list[float] = Field(..., min_length=1)
    backend: Backend = Backend.HOLDER
    k_cap: Optional[int] = Field(None, ge=1)
    bisection_steps: Optional[int] = Field(None, ge=0)
    min_fit_points: int = Field(4, ge=3)

    model_config = ConfigDict(extra="forbid", use_enum_values=True)


class FitParams(BaseModel):
    records_path: str = Field(..., description="scan.json written by a scan-shift run")
    target: Optional[float] = None
    log_log: bool = False
    min_points: int = Field(4, ge=3)

    model_config = ConfigDict(extra="forbid")


class FeProfileParams(BaseModel):
    beta: float = Field(..., ge=0)
    h_grid: list[float] = Field(..., min_length=2)
    N: int = Field(1000, ge=1)

    model_config = ConfigDict(extra="forbid")


_SECTIONS = {
    Mode.PURE_SOLVE: "pure_solve",
    Mode.RENEWAL_CHECK: "renewal_check",
    Mode.QUENCHED_FE: "quenched_fe",
    Mode.CERTIFY: "certify",
    Mode.SCAN_SHIFT: "scan_shift",
    Mode.FIT_EXPONENT: "fit_exponent",
    Mode.FE_PROFILE: "fe_profile",
}


def section_for(mode: Union[Mode, str]) -> Optional[str]:
    """Name of the parameter section a mode reads; None for modes without one."""
    return _SECTIONS.get(Mode(mode))


class RunConfig(BaseModel):
    """One run: law, disorder, mode and the parameter section of that mode."""
    mode: Mode
    law: LawSection
    disorder: DisorderLaw = Field(default_factory=DisorderLaw)
    seed: Optional[int] = Field(None, ge=0, description="Master seed; required by stochastic modes")
    replicas: int = Field(200, ge=2, description="Replica count for Monte Carlo estimates")
    workers: Optional[int] = Field(None, ge=1, description="Thread count; never changes results")
    output_dir: Optional[str] = Field(None, description="Output root; PINNING_OUTPUT_ROOT when unset")

    pure_solve: Optional[PureSolveParams] = None
    renewal_check: Optional[RenewalCheckParams] = None
    quenched_fe: Optional[QuenchedParams] = None
    certify: Optional[CertifyParams] = None
    scan_shift: Optional[ScanParams] = None
    fit_exponent: Optional[FitParams] = None
    fe_profile: Optional[FeProfileParams] = None

    model_config = ConfigDict(extra="forbid")

    @property
    def section_name(self) -> Optional[str]:
        return section_for(self.mode)

    @property
    def params(self):
        name = self.section_name
        return getattr(self, name) if name else None

    def law_config(self) -> LawConfig:
        law = self.law
        N_max = law.N_max or config.TABLE_SIZE
        return LawConfig(alpha=law.alpha, L=law.L, N_max=N_max, tol=law.tol or config.NORM_TOL,
                         cutoff=law.cutoff or max(config.NORM_CUTOFF, N_max))

    def canonical_payload(self) -> dict:
        """Everything that determines the results: workers and the output location are left out."""
        payload = self.model_dump(mode="json", exclude={"workers", "output_dir"}, exclude_none=True)
        payload["law"] = self.law_config().model_dump(mode="json")
        payload["limits"] = {
            "k_cap": config.K_CAP,
            "j_max": config.J_MAX,
            "confidence": config.CONFIDENCE,
            "beta0": config.BETA0,
            "bisection_steps": config.BISECTION_STEPS,
        }
        return payload

    def config_hash(self) -> str:
        return canonical_hash(self.canonical_payload())


def _node_line(node: Optional[yaml.Node], loc: tuple) -> Optional[int]:
    """1-based line of the YAML node at ``loc``, or of its deepest existing ancestor."""
    if node is None:
        return None
    line = node.start_mark.line + 1
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            children = {k.value: v for k, v in node.value}
            if str(key) not in children:
                break
            node = children[str(key)]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
        line = node.start_mark.line + 1
    return line


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse YAML text; every problem is reported as '<source>:<line>: <field>: <message>'."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigValidationError([f"{source}:{line}: invalid YAML: {getattr(exc, 'problem', exc)}"]) from None
    if not isinstance(data, dict):
        raise ConfigValidationError([f"{source}:1: a run configuration must be a mapping"])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        violations = []
        for error in exc.errors():
            loc = tuple(error["loc"])
            line = _node_line(root, loc)
            field = ".".join(str(part) for part in loc) or "<root>"
            violations.append(f"{source}:{line}: {field}: {error['msg']}")
        raise ConfigValidationError(violations) from None


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    logger.info(f"📄 Loading run configuration from {path}")
    return parse_run_config(path.read_text(), str(path))


__all__ = [
    "Mode",
    "LawSection",
    "PureSolveParams",
    "RenewalCheckParams",
    "QuenchedParams",
    "CertifyParams",
    "ScanParams",
    "FitParams",
    "FeProfileParams",
    "section_for",
    "RunConfig",
    "parse_run_config",
    "load_run_config",
]
