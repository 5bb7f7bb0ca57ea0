"""
Tests for run configurations, validation, the runner and the command line.
"""
import json
import math
import sys
from pathlib import Path

import pytest

# Add the project root to the Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from main import main
from src.cli.persistence import RunDirectory, verify_manifest
from src.cli.run_config import Mode, RunConfig, parse_run_config
from src.cli.runner import exit_code_for, is_stochastic, run, validate
from src.constants import config
from src.pinning.certificate import replay_certificate
from src.pinning.exceptions import ConfigValidationError, InvariantViolation, ResourceCapError
from src.pinning.kernels import build_law
from src.pinning.models import Backend, CertificateRecord, Construction, ScanStatus, ShiftScanRecord

LAW = {"alpha": 1.5, "N_max": 1000}


@pytest.fixture(autouse=True)
def isolated_paths(monkeypatch, tmp_path):
    """Keep table caches and run directories inside the test's temporary directory."""
    monkeypatch.setattr(config, "CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setattr(config, "OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path


def make_config(**fields) -> RunConfig:
    data = {"law": LAW}
    data.update(fields)
    return RunConfig.model_validate(data)


class TestValidate:
    """Every problem is listed before anything is computed."""

    def test_valid_config(self):
        assert validate(make_config(mode="law-info")) == []

    def test_missing_section(self):
        problems = validate(make_config(mode="certify"))
        assert problems == ["mode certify needs a 'certify' section"]

    def test_stochastic_mode_needs_seed(self):
        cfg = make_config(mode="quenched-fe", quenched_fe={"beta": 0.5, "h_values": [0.0], "N": 100})
        assert is_stochastic(cfg)
        assert any(p.startswith("seed:") for p in validate(cfg))

    def test_backend_decides_stochasticity(self):
        holder = make_config(mode="certify", certify={"beta": 0.5, "h": 0.0, "k": 5, "gamma": 0.8})
        mc = make_config(mode="certify", certify={"beta": 0.5, "h": 0.0, "k": 5, "gamma": 0.8, "backend": "mc"})
        assert not is_stochastic(holder)
        assert is_stochastic(mc)

    def test_non_summable_gamma(self):
        cfg = make_config(mode="certify", law={"alpha": 0.5, "N_max": 1000},
                          certify={"beta": 0.5, "h": 0.0, "k": 5, "gamma": 0.6})
        problems = validate(cfg)
        assert len(problems) == 1
        assert "not summable" in problems[0]
        assert problems[0].startswith("certify.gamma")

    def test_epsilon_window(self):
        cfg = make_config(
            mode="scan-shift",
            law={"alpha": 0.5, "L": {"kind": "log_power", "b": -2.0}, "N_max": 1000},
            scan_shift={"case": {"construction": "alpha_half", "epsilon": 1.6, "eta": 2.0}, "beta_grid": [0.5, 1.0]},
        )
        problems = validate(cfg)
        assert any("outside the window" in p and "1.5" in p for p in problems)

    def test_construction_mismatch(self):
        cfg = make_config(mode="scan-shift", law={"alpha": 0.75, "N_max": 1000},
                          scan_shift={"beta_grid": [0.5, 2.0]})
        problems = validate(cfg)
        assert any("alpha > 1 construction" in p for p in problems)
        assert any("beta_grid" in p for p in problems)

    def test_exact_backend_needs_rademacher(self):
        cfg = make_config(mode="certify", certify={"beta": 0.5, "h": 0.0, "k": 30, "gamma": 0.8, "backend": "exact"})
        problems = validate(cfg)
        assert any("rademacher" in p for p in problems)
        assert any("J_MAX" in p for p in problems)

    def test_schedule_beyond_admissible_tilt(self):
        cfg = make_config(mode="certify", certify={
            "beta": 0.5, "h": 0.0, "k": 5, "gamma": 0.9, "schedule": {"kind": "inv_sqrt", "start_j": 1},
        })
        assert any("admissible tilt" in p for p in validate(cfg))

    def test_table_too_short(self):
        cfg = make_config(mode="fe-profile", seed=1, fe_profile={"beta": 0.5, "h_grid": [0.1, 0.0], "N": 5000})
        problems = validate(cfg)
        assert any("strictly increasing" in p for p in problems)
        assert any("exceeds the table size" in p for p in problems)

    def test_missing_records(self, tmp_path):
        cfg = make_config(mode="fit-exponent", fit_exponent={"records_path": str(tmp_path / "nope.json")})
        assert any("does not exist" in p for p in validate(cfg))


class TestRunConfig:
    """Parsing and hashing of run configurations."""

    def test_hash_ignores_execution_details(self):
        base = make_config(mode="law-info")
        other = make_config(mode="law-info", workers=8, output_dir="/somewhere/else")
        assert base.config_hash() == other.config_hash()
        assert base.config_hash() != make_config(mode="law-info", seed=1).config_hash()

    def test_hash_follows_resolved_defaults(self, monkeypatch):
        """Environment defaults that change results change the hash."""
        cfg = make_config(mode="law-info", law={"alpha": 1.5})
        before = cfg.config_hash()
        monkeypatch.setattr(config, "TABLE_SIZE", 5000)
        assert cfg.canonical_payload()["law"]["N_max"] == 5000
        assert cfg.config_hash() != before
        monkeypatch.setattr(config, "WORKERS", 8)
        monkeypatch.setattr(config, "K_CAP", 7)
        assert cfg.canonical_payload()["limits"]["k_cap"] == 7

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            make_config(mode="law-info", colour="blue")

    def test_line_referenced_errors(self):
        text = "mode: law-info\nlaw:\n  alpha: -1.0\n  N_max: 1000\n"
        with pytest.raises(ConfigValidationError) as info:
            parse_run_config(text, "cfg.yaml")
        assert info.value.violations[0].startswith("cfg.yaml:3: law.alpha:")

    def test_invalid_yaml(self):
        with pytest.raises(ConfigValidationError) as info:
            parse_run_config("mode: [law-info\n", "bad.yaml")
        assert info.value.violations[0].startswith("bad.yaml:")

    def test_mode_enum(self):
        cfg = parse_run_config("mode: certify\nlaw: {alpha: 1.5}\ncertify: {beta: 0.5, h: 0.0, k: 3, gamma: 0.8}\n")
        assert cfg.mode == Mode.CERTIFY
        assert cfg.section_name == "certify"
        assert cfg.params.k == 3


class TestRun:
    """End-to-end runs into hashed directories."""

    def test_law_info(self, tmp_path):
        print("🧪 Running law-info at alpha=1")
        cfg = make_config(mode="law-info", law={"alpha": 1.0, "N_max": 1000})
        out = run(cfg, tmp_path / "out")
        assert out.path.name == f"run-{cfg.config_hash()[:12]}"
        payload = json.loads((out.path / "law.json").read_text())
        assert payload["c_K"] == pytest.approx(6.0 / math.pi ** 2, rel=1e-8)
        assert payload["c_K"] == pytest.approx(0.607927, abs=1e-6)
        assert "mean_inter_arrival" not in payload
        assert payload["disorder"]["curvature_floor"] == pytest.approx(1.0)
        assert payload["disorder"]["quadratic_bound_constant"] == pytest.approx(0.5)
        assert verify_manifest(out.path) == []
        assert list((tmp_path / "cache").glob("*.bin"))
        print("✅ law-info artifacts verified")

    def test_pure_solve_is_reproducible(self, tmp_path):
        cfg = make_config(mode="pure-solve", pure_solve={"h_values": [-0.1, 0.1], "dp_check_N": 2000})
        first = run(cfg, tmp_path / "a")
        second = run(cfg, tmp_path / "b")
        assert (first.path / "pure.json").read_bytes() == (second.path / "pure.json").read_bytes()
        rows = json.loads((first.path / "pure.json").read_text())
        assert rows[0]["solution"]["F"] == 0.0
        assert rows[1]["solution"]["F"] > 0

    def test_certificate_replays(self, tmp_path):
        cfg = make_config(mode="certify", certify={"beta": 0.6, "h": -1.5, "k": 12, "gamma": 0.8,
                                                   "schedule": {"kind": "grid_min"}})
        out = run(cfg, tmp_path)
        record = CertificateRecord.model_validate_json((out.path / "certificate.json").read_text())
        law = build_law(1.5, N_max=1000)
        assert replay_certificate(record, law).rho_upper == record.result.rho_upper
        assert (out.path / "rho_profile.csv").exists()
        assert verify_manifest(out.path) == []

    def test_fit_exponent_from_records(self, tmp_path):
        records = [
            ShiftScanRecord(beta=b, h_c_ann=-b * b / 2, Delta_certified=0.3 * b * b, backend=Backend.HOLDER,
                            construction=Construction.ALPHA_GT1, status=ScanStatus.CERTIFIED)
            for b in (0.25, 0.5, 0.75, 1.0)
        ]
        source = RunDirectory(tmp_path / "scan", "0" * 64).write_json("scan.json", records)
        cfg = make_config(mode="fit-exponent", fit_exponent={"records_path": str(source), "target": 2.0})
        out = run(cfg, tmp_path)
        fit = json.loads((out.path / "fit.json").read_text())
        assert fit["slope"] == pytest.approx(2.0, abs=1e-10)
        assert fit["target"] == 2.0

    def test_mc_artifacts_independent_of_workers(self, tmp_path):
        """The same seed gives byte-identical estimates for any thread count."""
        section = {"beta": 0.7, "h_values": [-0.2, 0.1], "N": 200}
        one = run(make_config(mode="quenched-fe", seed=5, replicas=130, workers=1, quenched_fe=section),
                  tmp_path / "one")
        eight = run(make_config(mode="quenched-fe", seed=5, replicas=130, workers=8, quenched_fe=section),
                    tmp_path / "eight")
        assert one.path.name == eight.path.name
        assert (one.path / "quenched_fe.json").read_bytes() == (eight.path / "quenched_fe.json").read_bytes()

    def test_rejected_config(self, tmp_path):
        cfg = make_config(mode="quenched-fe", quenched_fe={"beta": 0.5, "h_values": [0.0], "N": 100})
        with pytest.raises(ConfigValidationError) as info:
            run(cfg, tmp_path)
        assert exit_code_for(info.value) == 2

    def test_tampered_artifact_detected(self, tmp_path):
        out = run(make_config(mode="law-info"), tmp_path)
        (out.path / "law.json").write_text("{}\n")
        assert verify_manifest(out.path) == ["law.json"]


class TestExitCodes:
    """Errors map to documented exit codes."""

    def test_codes(self):
        assert exit_code_for(ConfigValidationError(["x"])) == 2
        assert exit_code_for(ResourceCapError("too big")) == 3
        assert exit_code_for(InvariantViolation("broken")) == 4
        assert exit_code_for(RuntimeError("boom")) == 1


class TestCommandLine:
    """The pinning-lab entry point."""

    def test_law_info(self, tmp_path, capsys):
        code = main(["law-info", "--alpha", "1.0", "--N-max", "1000", "--output-dir", str(tmp_path)])
        assert code == 0
        run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
        assert (run_dir / "law.json").exists()

    def test_out_of_range_flag(self, tmp_path):
        code = main(["certify", "--alpha", "1.5", "--beta", "0.5", "--h", "0", "--k", "5", "--gamma", "1.5",
                     "--output-dir", str(tmp_path)])
        assert code == 2

    def test_validate_command(self, tmp_path, capsys):
        path = tmp_path / "run.yaml"
        path.write_text("mode: certify\nlaw: {alpha: 0.5}\ncertify: {beta: 0.5, h: 0.0, k: 5, gamma: 0.6}\n")
        assert main(["validate", str(path)]) == 2
        assert "not summable" in capsys.readouterr().out

    def test_unknown_mode(self):
        with pytest.raises(SystemExit) as info:
            main(["no-such-mode"])
        assert info.value.code != 0

    def test_show_config(self, capsys):
        assert main(["show-config"]) == 0
        assert "Pinning Lab Configuration" in capsys.readouterr().out


if __name__ == "__main__":
    pytest.main([__file__])
