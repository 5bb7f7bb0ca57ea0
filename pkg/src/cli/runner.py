"""
Validation and dispatch of run configurations.

``validate`` lists every problem it can find without computing anything;
``run`` executes one mode and leaves its artifacts, plus a checksum manifest,
in a directory named by the configuration hash.
"""
import logging
import math
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.cli.persistence import RunDirectory, dat_lines, load_scan_records
from src.cli.run_config import Mode, RunConfig
from src.constants import config
from src.pinning.certificate import admissible_lambda, certify, rho_profile
from src.pinning.disorder import curvature_floor, log_mgf, quadratic_bound_constant
from src.pinning.exceptions import ConfigValidationError, DomainError, PinningError
from src.pinning.homogeneous import pure_free_energy, pure_partition, pure_partition_batch
from src.pinning.kernels import InterArrivalLaw, build_law_from_config, dump_table, load_table, mean_inter_arrival
from src.pinning.models import (
    Backend,
    CertificateParams,
    Construction,
    DisorderKind,
    ScheduleKind,
    SlowlyVaryingKind,
    canonical_hash,
)
from src.pinning.quenched import free_energy_mc
from src.pinning.renewal import (
    contact_fraction_lln,
    contact_fraction_target,
    doney_ratio,
    laplace_functional_contacts,
    mass_renewal,
    renewal_residual,
)
from src.pinning.scan import exponent_fit, fe_profile, records_frame, shift_scan, write_gnuplot_stub, write_scan_dat

logger = logging.getLogger(__name__)

_ALWAYS_STOCHASTIC = {Mode.RENEWAL_CHECK, Mode.QUENCHED_FE, Mode.FE_PROFILE}


def is_stochastic(cfg: RunConfig) -> bool:
    """True when the mode draws random environments or trajectories."""
    if cfg.mode in _ALWAYS_STOCHASTIC:
        return True
    params = cfg.params
    return cfg.mode in (Mode.CERTIFY, Mode.SCAN_SHIFT) and params is not None and params.backend == Backend.MC


def _schedule_violations(schedule, gamma: float) -> list[str]:
    if schedule is None or schedule.kind in (ScheduleKind.ZERO, ScheduleKind.GRID_MIN):
        return []
    if schedule.kind == ScheduleKind.INV_SQRT_LOG and schedule.start_j < 2:
        return ["certify.schedule: the (j log j)^(-1/2) schedule must start at j >= 2"]
    limit = admissible_lambda(gamma)
    first = schedule.lambda_at(schedule.start_j)
    if first > limit * (1.0 + 1e-12):
        return [f"certify.schedule: lambda at j={schedule.start_j} is {first:.6g}, above the admissible tilt "
                f"min(1, (1-gamma)/gamma) = {limit:.6g}"]
    return []


def _summability(alpha: float, gamma: float, where: str) -> list[str]:
    if (1.0 + alpha) * gamma <= 1.0:
        return [f"{where}: (1+alpha)*gamma = {(1.0 + alpha) * gamma:.6g} <= 1, so sum_n K(n)^gamma diverges "
                f"and the certificate sum is not summable"]
    return []


def _grid_violations(values: list[float], where: str, increasing: bool = True) -> list[str]:
    problems = []
    if any(not math.isfinite(v) for v in values):
        problems.append(f"{where}: grid contains non-finite values")
    if increasing and any(b <= a for a, b in zip(values, values[1:])):
        problems.append(f"{where}: grid must be strictly increasing")
    return problems


def _scan_violations(cfg: RunConfig) -> list[str]:
    p = cfg.scan_shift
    alpha = cfg.law.alpha
    case = p.case
    problems = _grid_violations(p.beta_grid, "scan_shift.beta_grid")
    if any(not 0 < b <= config.BETA0 for b in p.beta_grid):
        problems.append(f"scan_shift.beta_grid: values must lie in (0, beta0={config.BETA0}]")
    if case.construction == Construction.ALPHA_GT1 and alpha <= 1:
        problems.append(f"scan_shift.case: the alpha > 1 construction was requested with alpha={alpha}")
    if case.construction == Construction.ALPHA_HALF_ONE and not 0.5 < alpha < 1:
        problems.append(f"scan_shift.case: the 1/2 < alpha < 1 construction was requested with alpha={alpha}")
    if case.construction == Construction.ALPHA_HALF:
        if alpha != 0.5:
            problems.append(f"scan_shift.case: the alpha = 1/2 construction was requested with alpha={alpha}")
        if cfg.law.L.kind != SlowlyVaryingKind.LOG_POWER or cfg.law.L.b != -case.eta:
            problems.append(f"law.L: the alpha = 1/2 construction needs L(x) = (log(1+x))^(-eta), eta={case.eta}")
        if not 0 < case.epsilon < case.eta - 0.5:
            problems.append(f"scan_shift.case.epsilon: {case.epsilon} is outside the window "
                            f"0 < epsilon < eta - 1/2 = {case.eta - 0.5:.6g}")
    for gamma in case.gamma_ladder:
        problems += _summability(alpha, gamma, "scan_shift.case.gamma_ladder")
    return problems


def validate(cfg: RunConfig) -> list[str]:
    """Every reason the configuration cannot run; empty when it can."""
    problems = [f"environment: {problem}" for problem in config.validate()]
    section = cfg.section_name
    params = cfg.params
    if section is not None and params is None:
        problems.append(f"mode {cfg.mode.value} needs a '{section}' section")
        return problems
    if is_stochastic(cfg) and cfg.seed is None:
        problems.append(f"seed: mode {cfg.mode.value} is stochastic and needs a seed")
    N_max = cfg.law_config().N_max
    alpha = cfg.law.alpha

    if cfg.mode == Mode.PURE_SOLVE:
        problems += _grid_violations(params.h_values, "pure_solve.h_values", increasing=False)
    elif cfg.mode == Mode.QUENCHED_FE:
        if params.N > N_max:
            problems.append(f"quenched_fe.N: {params.N} exceeds the table size {N_max}")
        problems += _grid_violations(params.h_values, "quenched_fe.h_values", increasing=False)
    elif cfg.mode == Mode.CERTIFY:
        problems += _summability(alpha, params.gamma, "certify.gamma")
        problems += _schedule_violations(params.schedule, params.gamma)
        if params.backend == Backend.EXACT and params.beta != 0:
            if cfg.disorder.kind != DisorderKind.RADEMACHER:
                problems.append("certify.backend: the exact backend needs rademacher disorder when beta > 0")
            if params.k - 1 > config.J_MAX:
                problems.append(f"certify.k: exact enumeration needs k - 1 <= J_MAX={config.J_MAX}")
        if params.k > config.K_CAP:
            problems.append(f"certify.k: {params.k} exceeds the cap {config.K_CAP}")
    elif cfg.mode == Mode.SCAN_SHIFT:
        problems += _scan_violations(cfg)
    elif cfg.mode == Mode.FIT_EXPONENT:
        if not Path(params.records_path).exists():
            problems.append(f"fit_exponent.records_path: {params.records_path} does not exist")
    elif cfg.mode == Mode.FE_PROFILE:
        problems += _grid_violations(params.h_grid, "fe_profile.h_grid")
        if params.N > N_max:
            problems.append(f"fe_profile.N: {params.N} exceeds the table size {N_max}")
    return problems


def _load_law(cfg: RunConfig) -> InterArrivalLaw:
    law_config = cfg.law_config()
    return load_table(law_config) or build_law_from_config(law_config)


def _law_info(cfg: RunConfig, law: InterArrivalLaw, out: RunDirectory) -> None:
    payload = {
        "law": law.config,
        "config_hash": law.config_hash,
        "c_K": law.c_K,
        "norm_bracket": law.norm_bracket,
        "sound_shift": law.sound_shift,
        "N_max": law.N_max,
        "cutoff": law.cutoff,
        "K_head": law.table[:10].tolist(),
        "disorder": {
            "law": cfg.disorder,
            "beta0": config.BETA0,
            "curvature_floor": curvature_floor(cfg.disorder),
            "quadratic_bound_constant": quadratic_bound_constant(cfg.disorder),
        },
    }
    if law.alpha > 1:
        payload["mean_inter_arrival"] = mean_inter_arrival(law)
    out.write_json("law.json", payload)
    dump_table(law)


def _pure_solve(cfg: RunConfig, law: InterArrivalLaw, out: RunDirectory) -> None:
    p = cfg.pure_solve
    N = p.dp_check_N
    h_values = np.array(p.h_values, dtype=float)
    log_Z = pure_partition_batch(law, h_values, N)
    half = N // 2
    rows = []
    for h, row in zip(h_values, log_Z):
        solution = pure_free_energy(law, float(h))
        slope = float((row[N] - row[half]) / (N - half))
        gap = abs(slope - solution.F) / solution.F if solution.F > 0 else abs(slope)
        rows.append({"solution": solution, "dp_slope": slope, "dp_relative_gap": gap})
        if solution.F > 0 and gap > 0.02:
            logger.warning(f"⚠️ h={h}: transfer-recursion slope {slope:.6g} differs from F={solution.F:.6g}")
    out.write_json("pure.json", rows)
    frame = pd.DataFrame({"n": np.arange(N + 1)})
    for h, row in zip(h_values, log_Z):
        frame[f"log_Z(h={h:g})"] = row
    out.write_frame("pure_partition.csv", frame)


def _renewal_check(cfg: RunConfig, law: InterArrivalLaw, out: RunDirectory) -> None:
    p = cfg.renewal_check
    table = mass_renewal(law, p.N)
    payload = {"N": p.N, "residual": renewal_residual(table)}
    if 0 < law.alpha < 1 and p.N >= 100:
        payload["doney_ratio"] = doney_ratio(law, p.N)
    lln = contact_fraction_lln(law, p.N, p.replicas, cfg.seed, cfg.workers)
    payload["contact_fraction"] = {"estimate": lln, "target": contact_fraction_target(law)}
    laplace = laplace_functional_contacts(law, p.N, p.c_values, p.replicas, cfg.seed, cfg.workers)
    mean = mean_inter_arrival(law).midpoint if law.alpha > 1 else math.inf
    payload["laplace"] = [{"c": c, "estimate": estimate, "target": math.exp(-c / mean)}
                          for c, estimate in zip(p.c_values, laplace)]
    out.write_frame("renewal_u.csv", table.to_frame())
    out.write_json("renewal.json", payload)


def _quenched_fe(cfg: RunConfig, law: InterArrivalLaw, out: RunDirectory) -> None:
    p = cfg.quenched_fe
    rows = []
    for h in p.h_values:
        estimate = free_energy_mc(law, cfg.disorder, p.beta, h, p.N, cfg.replicas, cfg.seed, cfg.workers)
        annealed = float(pure_partition(law, h + log_mgf(cfg.disorder, p.beta), p.N)[p.N] / p.N)
        params_hash = canonical_hash({"law": law.config_hash, "disorder": cfg.disorder.kind, "beta": p.beta,
                                      "h": h, "N": p.N})
        rows.append({"params_hash": params_hash, "h": h, "point": estimate.point, "stderr": estimate.stderr,
                     "replicas": estimate.replicas, "seed": cfg.seed, "annealed": annealed})
    out.write_json("quenched_fe.json", rows)
    out.write_frame("quenched_fe.csv", pd.DataFrame(rows))


def _certify(cfg: RunConfig, law: InterArrivalLaw, out: RunDirectory) -> None:
    p = cfg.certify
    params = CertificateParams(k=p.k, gamma=p.gamma, lambda_schedule=p.schedule)
    record = certify(law, cfg.disorder, p.beta, p.h, params, p.backend, cfg.replicas, cfg.seed, cfg.workers)
    out.write_json("certificate.json", record)
    profile = rho_profile(law, cfg.disorder, p.beta, p.h, record.params)
    out.write_frame("rho_profile.csv", pd.DataFrame({
        "j": np.arange(len(profile.contributions)), "contribution": profile.contributions,
    }))
    verdict = "✅ certified" if record.result.certified else "⚠️ inconclusive"
    logger.info(f"{verdict}: rho_upper={record.result.rho_upper:.6g} ({record.result.confidence.kind})")


def _scan_shift(cfg: RunConfig, law: InterArrivalLaw, out: RunDirectory) -> None:
    p = cfg.scan_shift
    records = shift_scan(p.case, cfg.disorder, law, p.beta_grid, p.backend, p.k_cap, p.bisection_steps,
                         cfg.replicas, cfg.seed, cfg.workers)
    out.write_json("scan.json", records)
    out.write_frame("scan.csv", records_frame(records))
    out.adopt(write_scan_dat(records, out.file("scan.dat")))
    fit = None
    try:
        fit = exponent_fit(records, p.case.target_slope(law.alpha),
                           log_log=p.case.construction == Construction.ALPHA_HALF, min_points=p.min_fit_points)
        out.write_json("fit.json", fit)
    except DomainError as exc:
        logger.warning(f"⚠️ No exponent fit: {exc}")
    out.adopt(write_gnuplot_stub(out.file("scan.dat"), out.file("scan.gp"), fit))


def _fit_exponent(cfg: RunConfig, law: Optional[InterArrivalLaw], out: RunDirectory) -> None:
    p = cfg.fit_exponent
    fit = exponent_fit(load_scan_records(p.records_path), p.target, p.log_log, p.min_points)
    out.write_json("fit.json", fit)


def _fe_profile(cfg: RunConfig, law: InterArrivalLaw, out: RunDirectory) -> None:
    p = cfg.fe_profile
    frame = fe_profile(law, cfg.disorder, p.beta, p.h_grid, p.N, cfg.replicas, cfg.seed, cfg.workers)
    out.write_frame("fe_profile.csv", frame)
    columns = ["h", "quenched", "stderr", "annealed", "gap"]
    out.write_text("fe_profile.dat", dat_lines(columns, frame[columns].itertuples(index=False)))
    out.write_text("fe_profile.gp", "\n".join([
        "set xlabel 'h'",
        "set ylabel 'free energy'",
        "plot 'fe_profile.dat' using 1:2:3 with yerrorbars title 'quenched', "
        "'' using 1:4 with lines title 'annealed'",
    ]) + "\n")


_HANDLERS: dict[Mode, Callable[[RunConfig, Optional[InterArrivalLaw], RunDirectory], None]] = {
    Mode.LAW_INFO: _law_info,
    Mode.PURE_SOLVE: _pure_solve,
    Mode.RENEWAL_CHECK: _renewal_check,
    Mode.QUENCHED_FE: _quenched_fe,
    Mode.CERTIFY: _certify,
    Mode.SCAN_SHIFT: _scan_shift,
    Mode.FIT_EXPONENT: _fit_exponent,
    Mode.FE_PROFILE: _fe_profile,
}


def run(cfg: RunConfig, output_root: Optional[Union[str, Path]] = None) -> RunDirectory:
    """Validate, execute the mode and write the manifest; returns the run directory."""
    problems = validate(cfg)
    if problems:
        raise ConfigValidationError(problems)
    root = output_root or cfg.output_dir or config.OUTPUT_ROOT
    out = RunDirectory(root, cfg.config_hash())
    logger.info(f"🚀 Running {cfg.mode.value} into {out.path}")
    out.write_json("config.json", cfg.canonical_payload())
    law = None if cfg.mode == Mode.FIT_EXPONENT else _load_law(cfg)
    _HANDLERS[cfg.mode](cfg, law, out)
    out.write_manifest()
    logger.info(f"✅ {cfg.mode.value} finished with {len(out.artifacts)} artifacts")
    return out


def exit_code_for(exc: BaseException) -> int:
    """0 ok, 2 validation or domain, 3 resource cap, 4 invariant violation, 1 anything else."""
    if isinstance(exc, PinningError):
        return exc.exit_code
    if isinstance(exc, ValidationError):
        return 2
    return 1


__all__ = ["is_stochastic", "validate", "run", "exit_code_for"]
