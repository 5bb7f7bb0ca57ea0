"""
Unit tests for shift scans, exponent fits and free-energy profiles.
"""
import math
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from pydantic import ValidationError

# Add the project root to the Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

import src.pinning.scan as scan_module
from src.constants import config
from src.pinning.disorder import h_c_ann
from src.pinning.exceptions import DomainError
from src.pinning.kernels import build_law
from src.pinning.models import (
    Backend,
    Confidence,
    ConfidenceKind,
    Construction,
    DisorderKind,
    DisorderLaw,
    ScanStatus,
    ShiftScanRecord,
    SlowlyVaryingKind,
    SlowlyVaryingSpec,
)
from src.pinning.scan import (
    ScanCase,
    _Attempt,
    exponent_fit,
    fe_profile,
    records_frame,
    shift_scan,
    write_gnuplot_stub,
    write_scan_csv,
    write_scan_dat,
)

GAUSSIAN = DisorderLaw(kind=DisorderKind.GAUSSIAN)


@pytest.fixture(scope="module")
def law():
    return build_law(1.5, N_max=2000)


@pytest.fixture(scope="module")
def law_half_log():
    return build_law(0.5, SlowlyVaryingSpec(kind=SlowlyVaryingKind.LOG_POWER, b=-2.0), N_max=1000)


def synthetic_records(betas, Delta_of):
    return [
        ShiftScanRecord(beta=beta, h_c_ann=h_c_ann(GAUSSIAN, beta), Delta_certified=Delta_of(beta),
                        backend=Backend.HOLDER, construction=Construction.ALPHA_GT1, status=ScanStatus.CERTIFIED,
                        confidence=Confidence(kind=ConfidenceKind.EXACT), k=10, gamma=0.82)
        for beta in betas
    ]


class TestScanCase:
    """Scan configuration."""

    def test_target_slopes(self):
        assert ScanCase().target_slope(1.5) == 2.0
        case = ScanCase(construction=Construction.ALPHA_HALF_ONE, epsilon=0.1)
        assert case.target_slope(0.75) == pytest.approx(3.3)
        case = ScanCase(construction=Construction.ALPHA_HALF, epsilon=0.5, eta=2.0)
        assert case.target_slope(0.5) == pytest.approx(1.0)

    def test_manual_rejected(self):
        with pytest.raises(ValidationError):
            ScanCase(construction=Construction.MANUAL)

    def test_missing_shape_parameters(self):
        with pytest.raises(ValidationError):
            ScanCase(construction=Construction.ALPHA_HALF_ONE)
        with pytest.raises(ValidationError):
            ScanCase(construction=Construction.ALPHA_HALF, epsilon=0.2)

    def test_gamma_ladder_range(self):
        with pytest.raises(ValidationError):
            ScanCase(gamma_ladder=[0.9, 1.0])


class TestShiftScan:
    """Largest certified shift per beta."""

    def test_infeasible_below_cap(self, law):
        """k = 1/(a beta^2) beyond the cap yields an explicit infeasibility record."""
        records = shift_scan(ScanCase(a_max=0.1), GAUSSIAN, law, [1.0], k_cap=5)
        assert len(records) == 1
        record = records[0]
        assert record.status == ScanStatus.INFEASIBLE
        assert record.Delta_certified == 0.0
        assert record.required_k == 10

    def test_small_scan(self, law):
        """Each record is either certified with rho <= 1 or carries an explicit failure status."""
        print("🧪 Running a small alpha=1.5 scan")
        case = ScanCase(a_max=1.0, max_reductions=3)
        records = shift_scan(case, GAUSSIAN, law, [0.8, 1.0], k_cap=500, bisection_steps=2)
        assert [r.beta for r in records] == [0.8, 1.0]
        for record in records:
            assert record.h_c_ann == pytest.approx(h_c_ann(GAUSSIAN, record.beta))
            if record.status == ScanStatus.CERTIFIED:
                assert record.rho_upper <= 1.0
                assert record.Delta_certified == pytest.approx(record.a_certified * record.beta ** 2)
                assert record.k <= 500
                assert record.shift.Delta == record.Delta_certified
                assert record.shift.eta is None
            else:
                assert record.Delta_certified == 0.0
        print("✅ Scan records are consistent")

    def test_beta_range(self, law):
        with pytest.raises(DomainError):
            shift_scan(ScanCase(), GAUSSIAN, law, [0.0, 0.5])

    def test_mc_needs_seed(self, law):
        with pytest.raises(DomainError):
            shift_scan(ScanCase(), GAUSSIAN, law, [0.5], backend=Backend.MC)


class TestExponentFit:
    """Slope of log Delta_certified against log beta."""

    def test_quadratic_shift(self):
        """Delta = beta^2 gives slope 2."""
        records = synthetic_records([0.2, 0.4, 0.6, 0.8, 1.0], lambda b: b ** 2)
        fit = exponent_fit(records, target=2.0)
        assert fit.slope == pytest.approx(2.0, abs=1e-10)
        assert fit.intercept == pytest.approx(0.0, abs=1e-10)
        assert fit.n_points == 5
        assert fit.ci_low <= 2.0 + 1e-9 and fit.ci_high >= 2.0 - 1e-9

    def test_noisy_shift(self):
        rng = np.random.default_rng(0)
        noise = dict(zip([0.3, 0.4, 0.5, 0.6, 0.7, 0.8], rng.normal(0.0, 0.02, 6)))
        fit = exponent_fit(synthetic_records(noise, lambda b: b ** 3.3 * math.exp(noise[b])))
        assert abs(fit.slope - 3.3) < 0.2
        assert fit.stderr > 0

    def test_log_log(self):
        """Delta = exp(-1/beta): log log(1/Delta) against log(1/beta) has slope 1."""
        records = synthetic_records([0.3, 0.4, 0.5, 0.6], lambda b: math.exp(-1.0 / b))
        fit = exponent_fit(records, log_log=True)
        assert fit.slope == pytest.approx(1.0, abs=1e-10)
        assert fit.log_log

    def test_uncertified_rows_ignored(self):
        records = synthetic_records([0.2, 0.4, 0.6, 0.8], lambda b: b ** 2)
        records.append(ShiftScanRecord(beta=0.1, h_c_ann=h_c_ann(GAUSSIAN, 0.1), Delta_certified=0.0,
                                       backend=Backend.HOLDER, construction=Construction.ALPHA_GT1,
                                       status=ScanStatus.INFEASIBLE, required_k=10 ** 6))
        assert exponent_fit(records).n_points == 4

    def test_too_few_points(self):
        with pytest.raises(DomainError):
            exponent_fit(synthetic_records([0.5, 1.0], lambda b: b ** 2))


class TestOutputs:
    """Tabular and plotting outputs of a scan."""

    def test_frame(self):
        frame = records_frame(synthetic_records([0.5, 1.0], lambda b: b ** 2))
        assert list(frame.columns[:3]) == ["beta", "h_c_ann", "Delta_certified"]
        assert "runtime" not in frame.columns
        assert frame["confidence"].tolist() == ["exact", "exact"]

    def test_writers(self, tmp_path):
        records = synthetic_records([0.5, 1.0], lambda b: b ** 2)
        csv_path = write_scan_csv(records, tmp_path / "scan.csv")
        assert csv_path.read_text().splitlines()[0].startswith("beta,h_c_ann,Delta_certified")
        dat_path = write_scan_dat(records, tmp_path / "scan.dat")
        lines = dat_path.read_text().splitlines()
        assert lines[0].startswith("#")
        log_beta, log_Delta = map(float, lines[1].split())
        assert log_Delta == pytest.approx(2 * log_beta)
        fit = exponent_fit(synthetic_records([0.25, 0.5, 0.75, 1.0], lambda b: b ** 2))
        stub = write_gnuplot_stub(dat_path, tmp_path / "scan.gp", fit).read_text()
        assert "'scan.dat'" in stub
        assert "slope 2.000" in stub


class TestFreeEnergyProfile:
    """Quenched and annealed free energies on an h grid."""

    def test_gap_non_negative(self, law):
        frame = fe_profile(law, GAUSSIAN, 0.6, [-0.4, -0.1, 0.2], 200, 60, seed=3)
        assert list(frame.columns) == ["h", "quenched", "stderr", "annealed", "gap"]
        assert len(frame) == 3
        assert np.all(frame["gap"] >= -3 * frame["stderr"])
        assert np.all(np.diff(frame["annealed"]) >= 0)


def scripted_attempts(outcome_of, tried):
    """An attempt function whose outcome depends only on a: 'fire', 'inconclusive', 'skip' or 'cap'."""
    def attempt(case, d, law, beta, a, backend, k_cap, replicas, seed, workers):
        tried.append(a)
        outcome = outcome_of(a)
        if outcome == "cap":
            return _Attempt(a, math.nan, required_k=k_cap + 1)
        if outcome == "skip":
            return _Attempt(a, math.nan, skipped=True)
        h = h_c_ann(d, beta) + a * beta ** 2
        record = SimpleNamespace(
            h=h,
            params=SimpleNamespace(k=int(1.0 / (a * beta ** 2)), gamma=0.82),
            result=SimpleNamespace(certified=outcome == "fire", rho_upper=0.5 if outcome == "fire" else 1.5,
                                   confidence=None),
        )
        return _Attempt(a, h, record)
    return attempt


class TestShiftSearch:
    """How the amplitude search reacts to each attempt outcome."""

    def test_bisects_gap_below_cap(self, law, monkeypatch):
        """When a/4 jumps past the cap, amplitudes between the two are still tried."""
        def outcome_of(a):
            if a < 0.1:
                return "cap"
            return "fire" if a <= 0.2 else "inconclusive"

        tried = []
        monkeypatch.setattr(scan_module, "_attempt", scripted_attempts(outcome_of, tried))
        record = shift_scan(ScanCase(a_max=1.0), GAUSSIAN, law, [1.0], k_cap=100, bisection_steps=8)[0]
        assert record.status == ScanStatus.CERTIFIED
        assert 0.19 <= record.a_certified <= 0.2
        assert record.Delta_certified == pytest.approx(record.a_certified)
        assert min(tried) == pytest.approx(0.0625)

    def test_gap_without_firing_is_infeasible(self, law, monkeypatch):
        def outcome_of(a):
            return "cap" if a < 0.1 else "skip"

        tried = []
        monkeypatch.setattr(scan_module, "_attempt", scripted_attempts(outcome_of, tried))
        record = shift_scan(ScanCase(a_max=1.0), GAUSSIAN, law, [1.0], k_cap=100, bisection_steps=3)[0]
        assert record.status == ScanStatus.INFEASIBLE
        assert record.Delta_certified == 0.0
        assert record.required_k == 101
        assert len(tried) == 3 + 3

    def test_small_cutoff_keeps_descending(self, law, monkeypatch):
        """Amplitudes whose cutoff is too small count as non-firing."""
        def outcome_of(a):
            return "skip" if a > 0.3 else "fire"

        tried = []
        monkeypatch.setattr(scan_module, "_attempt", scripted_attempts(outcome_of, tried))
        record = shift_scan(ScanCase(a_max=1.0), GAUSSIAN, law, [1.0], k_cap=100, bisection_steps=8)[0]
        assert record.status == ScanStatus.CERTIFIED
        assert 0.28 <= record.a_certified <= 0.3

    def test_half_construction_small_cutoff_does_not_abort(self, law_half_log):
        """At a = 1 the alpha = 1/2 construction yields k < 20; the scan reports instead of raising."""
        case = ScanCase(construction=Construction.ALPHA_HALF, epsilon=0.5, eta=2.0, max_reductions=0)
        record = shift_scan(case, GAUSSIAN, law_half_log, [1.0])[0]
        assert record.status == ScanStatus.NO_CERTIFICATE
        assert record.Delta_certified == 0.0
        assert record.rho_upper is None


class TestShiftWitnesses:
    """Full scans reproducing the certified shift bounds of each construction."""

    @pytest.mark.slow
    def test_alpha_three_halves_quadratic_shift(self):
        print("🧪 Scanning alpha=1.5 over beta in {0.4, 0.6, 0.8, 1.0}")
        law = build_law(1.5, N_max=20000)
        records = shift_scan(ScanCase(), GAUSSIAN, law, [0.4, 0.6, 0.8, 1.0])
        assert all(r.status == ScanStatus.CERTIFIED and r.Delta_certified > 0 for r in records)
        fit = exponent_fit(records, target=2.0)
        assert 1.7 <= fit.slope <= 2.3
        print(f"✅ Fitted slope {fit.slope:.3f}")

    @pytest.mark.slow
    def test_alpha_three_quarters_degrades_gracefully(self):
        """Every beta is certified, or reported infeasible with the cutoff it would need."""
        law = build_law(0.75, N_max=20000)
        case = ScanCase(construction=Construction.ALPHA_HALF_ONE, epsilon=0.1)
        records = shift_scan(case, GAUSSIAN, law, [0.6, 0.8, 1.0])
        certified = [r for r in records if r.status == ScanStatus.CERTIFIED]
        for record in records:
            if record.status == ScanStatus.CERTIFIED:
                assert record.Delta_certified > 0 and record.rho_upper <= 1.0
            else:
                assert record.status == ScanStatus.INFEASIBLE
                assert record.Delta_certified == 0.0
                assert record.required_k > config.K_CAP
        if len(certified) >= 3:
            assert abs(exponent_fit(certified, min_points=3).slope - 3.3) <= 0.7

    @pytest.mark.slow
    def test_alpha_half_machinery(self):
        """beta = 1 certifies within the cap; beta = 0.3 reports the cutoff it would need."""
        law = build_law(0.5, SlowlyVaryingSpec(kind=SlowlyVaryingKind.LOG_POWER, b=-2.0), N_max=20000)
        case = ScanCase(construction=Construction.ALPHA_HALF, epsilon=0.5, eta=2.0)
        fired, hopeless = shift_scan(case, GAUSSIAN, law, [1.0, 0.3])
        assert fired.status == ScanStatus.CERTIFIED
        assert fired.Delta_certified > 0
        assert fired.k <= 20000
        assert fired.gamma == pytest.approx(1.0 - 1.0 / math.log(fired.k))
        assert hopeless.status == ScanStatus.INFEASIBLE
        assert hopeless.required_k > config.K_CAP
