#!/usr/bin/env python3
"""
Command-line entry point for Pinning Lab.

Every subcommand builds a run configuration (from flags, or from a YAML file
with ``run``), executes it and prints the run directory.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from src.cli.run_config import Mode, RunConfig, load_run_config, section_for
from src.cli.runner import exit_code_for, run, validate
from src.constants import config
from src.pinning.exceptions import ConfigValidationError
from src.pinning.models import Backend, Construction, DisorderKind, ScheduleKind, SlowlyVaryingKind

logger = logging.getLogger(__name__)


def _choices(enum) -> list[str]:
    return [member.value for member in enum]


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    law = parent.add_argument_group("law and environment")
    law.add_argument("--alpha", type=float, required=True, help="Tail exponent alpha of K(n)")
    law.add_argument("--L-kind", choices=_choices(SlowlyVaryingKind), default="constant",
                     help="Slowly varying factor family")
    law.add_argument("--L-b", type=float, default=0.0, help="Exponent b of L(x) = (log(1+x))^b")
    law.add_argument("--N-max", type=int, default=None, help=f"Table size (default: {config.TABLE_SIZE})")
    law.add_argument("--disorder", choices=_choices(DisorderKind), default="gaussian")
    run_group = parent.add_argument_group("execution")
    run_group.add_argument("--seed", type=int, default=None, help="Master seed; required by stochastic modes")
    run_group.add_argument("--replicas", type=int, default=200)
    run_group.add_argument("--workers", type=int, default=None, help="Thread count; results do not depend on it")
    run_group.add_argument("--output-dir", default=None, help="Output root (default: PINNING_OUTPUT_ROOT)")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pinning-lab",
        description="Numerical laboratory for disordered pinning models.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    common = _common_options()

    run_parser = commands.add_parser("run", help="Execute a YAML run configuration")
    run_parser.add_argument("config_path", type=Path)
    validate_parser = commands.add_parser("validate", help="List every problem in a YAML run configuration")
    validate_parser.add_argument("config_path", type=Path)
    commands.add_parser("show-config", help="Print the environment configuration")

    commands.add_parser(Mode.LAW_INFO.value, parents=[common], help="Normalization and constants of a law")

    pure = commands.add_parser(Mode.PURE_SOLVE.value, parents=[common], help="Homogeneous free energy F(h)")
    pure.add_argument("--h", type=float, nargs="+", required=True)
    pure.add_argument("--dp-check-N", type=int, default=10000)

    renewal = commands.add_parser(Mode.RENEWAL_CHECK.value, parents=[common], help="Renewal function checks")
    renewal.add_argument("--N", type=int, default=2000)
    renewal.add_argument("--trajectories", type=int, default=200)
    renewal.add_argument("--c", type=float, nargs="+", default=[1.0], help="Laplace functional arguments")

    quenched = commands.add_parser(Mode.QUENCHED_FE.value, parents=[common], help="Quenched free energy estimates")
    quenched.add_argument("--beta", type=float, required=True)
    quenched.add_argument("--h", type=float, nargs="+", required=True)
    quenched.add_argument("--N", type=int, default=1000)

    cert = commands.add_parser(Mode.CERTIFY.value, parents=[common], help="Fractional-moment certificate")
    cert.add_argument("--beta", type=float, required=True)
    cert.add_argument("--h", type=float, required=True)
    cert.add_argument("--k", type=int, required=True)
    cert.add_argument("--gamma", type=float, required=True)
    cert.add_argument("--backend", choices=_choices(Backend), default="holder")
    cert.add_argument("--schedule", choices=_choices(ScheduleKind), default=None)
    cert.add_argument("--start-j", type=int, default=1)
    cert.add_argument("--scale", type=float, default=1.0)

    scan = commands.add_parser(Mode.SCAN_SHIFT.value, parents=[common], help="Certified critical-shift scan")
    scan.add_argument("--construction", choices=[c for c in _choices(Construction) if c != "manual"],
                      default="alpha_gt1")
    scan.add_argument("--epsilon", type=float, default=None)
    scan.add_argument("--eta", type=float, default=None)
    scan.add_argument("--a-max", type=float, default=1.0)
    scan.add_argument("--beta", type=float, nargs="+", required=True, help="beta grid")
    scan.add_argument("--backend", choices=_choices(Backend), default="holder")
    scan.add_argument("--k-cap", type=int, default=None)
    scan.add_argument("--bisection-steps", type=int, default=None)
    scan.add_argument("--gamma-ladder", type=float, nargs="*", default=[])

    fit = commands.add_parser(Mode.FIT_EXPONENT.value, parents=[common], help="Fit the shift exponent")
    fit.add_argument("--records", required=True, help="scan.json from a scan-shift run")
    fit.add_argument("--target", type=float, default=None)
    fit.add_argument("--log-log", action="store_true")
    fit.add_argument("--min-points", type=int, default=4)

    profile = commands.add_parser(Mode.FE_PROFILE.value, parents=[common], help="Quenched vs annealed profile")
    profile.add_argument("--beta", type=float, required=True)
    profile.add_argument("--h", type=float, nargs="+", required=True, help="h grid")
    profile.add_argument("--N", type=int, default=1000)

    return parser


def _section(args: argparse.Namespace) -> dict:
    mode = Mode(args.command)
    if mode == Mode.PURE_SOLVE:
        return {"h_values": args.h, "dp_check_N": args.dp_check_N}
    if mode == Mode.RENEWAL_CHECK:
        return {"N": args.N, "replicas": args.trajectories, "c_values": args.c}
    if mode == Mode.QUENCHED_FE:
        return {"beta": args.beta, "h_values": args.h, "N": args.N}
    if mode == Mode.CERTIFY:
        section = {"beta": args.beta, "h": args.h, "k": args.k, "gamma": args.gamma, "backend": args.backend}
        if args.schedule is not None:
            section["schedule"] = {"kind": args.schedule, "start_j": args.start_j, "scale": args.scale}
        return section
    if mode == Mode.SCAN_SHIFT:
        case = {"construction": args.construction, "a_max": args.a_max, "gamma_ladder": args.gamma_ladder}
        if args.epsilon is not None:
            case["epsilon"] = args.epsilon
        if args.eta is not None:
            case["eta"] = args.eta
        return {"case": case, "beta_grid": args.beta, "backend": args.backend, "k_cap": args.k_cap,
                "bisection_steps": args.bisection_steps}
    if mode == Mode.FIT_EXPONENT:
        return {"records_path": args.records, "target": args.target, "log_log": args.log_log,
                "min_points": args.min_points}
    if mode == Mode.FE_PROFILE:
        return {"beta": args.beta, "h_grid": args.h, "N": args.N}
    return {}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """RunConfig from the flags of a mode subcommand."""
    mode = Mode(args.command)
    data = {
        "mode": mode.value,
        "law": {"alpha": args.alpha, "L": {"kind": args.L_kind, "b": args.L_b}, "N_max": args.N_max},
        "disorder": {"kind": args.disorder},
        "seed": args.seed,
        "replicas": args.replicas,
        "workers": args.workers,
        "output_dir": args.output_dir,
    }
    section = section_for(mode)
    if section is not None:
        data[section] = _section(args)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigValidationError([
            f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in exc.errors()
        ]) from None


def _report(exc: BaseException) -> int:
    code = exit_code_for(exc)
    if isinstance(exc, ConfigValidationError):
        logger.error(f"❌ Configuration rejected with {len(exc.violations)} problem(s)")
        for violation in exc.violations:
            print(violation, file=sys.stderr)
    elif code == 1:
        logger.exception(f"❌ Unexpected failure: {exc}")
    else:
        logger.error(f"❌ {type(exc).__name__}: {exc}")
    return code


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=config.LOG_LEVEL.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    if args.command == "show-config":
        config.print_config()
        return 0

    try:
        if args.command == "validate":
            problems = validate(load_run_config(args.config_path))
            for problem in problems:
                print(problem)
            if problems:
                return 2
            print("✅ Configuration is valid")
            return 0
        run_config = load_run_config(args.config_path) if args.command == "run" else config_from_args(args)
        run_dir = run(run_config)
    except Exception as exc:
        return _report(exc)

    print(run_dir.path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
