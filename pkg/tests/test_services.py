"""Unit tests for experiment orchestration in services."""
from unittest.mock import patch

import pytest
from pydantic import ValidationError

import storage
from diagnostics import InconsistentRecordError
from evolution import CFLViolationError, NumericalInstabilityError
from models import ConfigError, InitialCondition, parse_config
from services import (
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    PRESETS,
    build_initial_field,
    exit_code_for,
    fit_series_file,
    get_preset,
    resolve_output_dir,
    run_experiment,
    run_many,
)
from spectral_core import make_grid

SMALL = """\
variant = sqg_physical
alpha = 1.5
n = 32
box = 16.0
dt = 0.1
t_end = 4.0
cadence = 0.25
ic_family = gaussian
ic_sigma = 1.5
"""


def _config(tmp_path, text=SMALL, **extra):
    lines = [text.rstrip("\n"), f"output_dir = {tmp_path / 'out'}"]
    lines.extend(f"{k} = {v}" for k, v in extra.items())
    return parse_config("\n".join(lines) + "\n")


class TestInitialData:
    """Tests for sampling the configured initial condition."""

    def test_families(self):
        grid = make_grid(32, 16.0)
        bump = build_initial_field(InitialCondition(family="gaussian", amplitude=2.0), grid)
        assert bump.values[16, 16] == 2.0
        zero = build_initial_field(InitialCondition(family="zero"), grid)
        assert not zero.values.any()
        a = build_initial_field(InitialCondition(family="random", seed=4), grid)
        b = build_initial_field(InitialCondition(family="random", seed=4), grid)
        assert (a.values == b.values).all()

    def test_snapshot_family_is_not_sampled(self):
        with pytest.raises(ValueError):
            build_initial_field(InitialCondition(family="snapshot", path="x.frfl"), make_grid(32, 16.0))


class TestRunExperiment:
    """Tests for a complete small run and its files."""

    def test_writes_outputs(self, tmp_path):
        result = run_experiment(_config(tmp_path))
        out = tmp_path / "out"
        assert result.output_dir == out
        for name in ("series.csv", "fit.csv", "meta.txt"):
            assert (out / name).exists()
        assert not (out / "FAILED").exists()
        rows = storage.read_series_csv(out / "series.csv")
        assert [r["time"] for r in rows] == [0.25 * k for k in range(17)]
        assert storage.read_meta(out / "meta.txt")["status"] == "ok"

    def test_mass_is_conserved(self, tmp_path):
        result = run_experiment(_config(tmp_path))
        masses = [r.mass for r in result.series["z"]]
        assert max(masses) - min(masses) <= 1e-12 * abs(masses[0])

    def test_fits(self, tmp_path):
        result = run_experiment(_config(tmp_path))
        by_column = {row["column"]: row for row in result.fits}
        assert set(by_column) >= {"l1", "l2", "linf"}
        assert by_column["l2"]["status"] == "ok"
        assert by_column["l2"]["expected"] == pytest.approx(-1 / 1.5)
        assert by_column["l2"]["exponent"] < 0

    def test_rerun_is_identical(self, tmp_path):
        cfg = _config(tmp_path)
        run_experiment(cfg)
        first = (tmp_path / "out" / "series.csv").read_bytes()
        run_experiment(cfg)
        assert (tmp_path / "out" / "series.csv").read_bytes() == first

    def test_zero_data_reports_fit_status(self, tmp_path):
        result = run_experiment(_config(tmp_path, SMALL.replace("ic_family = gaussian", "ic_family = zero")))
        by_column = {row["column"]: row for row in result.fits}
        assert "nonpositive" in by_column["l2"]["status"]
        assert all(r.mass == 0 for r in result.series["z"])

    def test_boussinesq_writes_theta_series(self, tmp_path):
        text = SMALL.replace("sqg_physical", "boussinesq_physical").replace("alpha = 1.5", "alpha = 1.4")
        text = text.replace("ic_family = gaussian", "ic_family = dipole")
        result = run_experiment(_config(tmp_path, text, theta_ic_family="gaussian"))
        out = tmp_path / "out"
        assert (out / "series.csv").exists()
        assert (out / "series_theta.csv").exists()
        assert {row["field"] for row in result.fits} == {"w", "theta"}
        theta_masses = [r.mass for r in result.series["theta"]]
        assert max(theta_masses) - min(theta_masses) <= 1e-12 * abs(theta_masses[0])

    def test_scaled_run(self, tmp_path):
        text = SMALL.replace("sqg_physical", "sqg_scaled").replace("t_end = 4.0", "tau_end = 1.0")
        result = run_experiment(_config(tmp_path, text))
        assert result.final.time == 1.0
        assert {row["column"]: row for row in result.fits}["l2"]["expected"] == pytest.approx(1 - 2 / 1.5)

    def test_snapshot_resume_matches_direct_run(self, tmp_path):
        direct = run_experiment(_config(tmp_path, SMALL.replace("t_end = 4.0", "t_end = 2.0"),
                                        snapshot_times="1.0"))
        snapshot = tmp_path / "out" / storage.snapshot_name(1.0)
        assert snapshot.exists()

        text = SMALL.replace("t_end = 4.0", "t_end = 2.0").replace("ic_sigma = 1.5", f"ic_path = {snapshot}")
        text = text.replace("ic_family = gaussian", "ic_family = snapshot")
        resumed = run_experiment(parse_config(text + f"output_dir = {tmp_path / 'resumed'}\n"))
        assert resumed.final.time == 2.0
        a, b = direct.final.fields["z"], resumed.final.fields["z"]
        assert (a - b).norm() <= 1e-12 * a.norm()

    def test_failure_leaves_sentinel(self, tmp_path):
        with patch("services.run", side_effect=CFLViolationError("boom", time=0.5)):
            with pytest.raises(CFLViolationError):
                run_experiment(_config(tmp_path))
        sentinel = tmp_path / "out" / "FAILED"
        assert sentinel.read_text() == "CFLViolationError: boom\n"

    def test_success_clears_old_sentinel(self, tmp_path):
        storage.mark_failed(tmp_path / "out", "old failure")
        run_experiment(_config(tmp_path))
        assert not (tmp_path / "out" / "FAILED").exists()

    def test_refit_from_file(self, tmp_path):
        result = run_experiment(_config(tmp_path))
        rows = fit_series_file(tmp_path / "out" / "series.csv")
        assert [r["column"] for r in rows] == [r["column"] for r in result.fits]
        refit = {r["column"]: r for r in rows}["l2"]
        original = {r["column"]: r for r in result.fits}["l2"]
        assert refit["exponent"] == pytest.approx(original["exponent"], rel=1e-12)
        assert refit["expected"] == original["expected"]

    def test_output_dir_from_label(self, tmp_path):
        cfg = parse_config(SMALL + "label = lbl\n")
        assert resolve_output_dir(cfg, tmp_path) == tmp_path / "lbl"


class TestExitCodes:
    """Tests for mapping failures to exit codes."""

    def test_numerical_failures(self):
        assert exit_code_for(CFLViolationError("x")) == EXIT_NUMERICAL
        assert exit_code_for(NumericalInstabilityError("x")) == EXIT_NUMERICAL
        assert exit_code_for(InconsistentRecordError("x")) == EXIT_NUMERICAL
        assert exit_code_for(FloatingPointError("x")) == EXIT_NUMERICAL

    def test_validation_failures(self):
        assert exit_code_for(ConfigError("x")) == EXIT_VALIDATION
        assert exit_code_for(OSError("x")) == EXIT_VALIDATION
        try:
            InitialCondition(family="nope")
        except ValidationError as e:
            assert exit_code_for(e) == EXIT_VALIDATION

    def test_run_many(self, tmp_path):
        good = tmp_path / "good.cfg"
        good.write_text(SMALL.replace("t_end = 4.0", "t_end = 0.5") + "label = good\n")
        bad = tmp_path / "bad.cfg"
        bad.write_text(SMALL.replace("alpha = 1.5", "alpha = 2.5"))
        missing = tmp_path / "missing.cfg"
        results = run_many([str(good), str(bad), str(missing)], output_root=str(tmp_path / "runs"))
        assert [code for _, code, _ in results] == [EXIT_OK, EXIT_VALIDATION, EXIT_VALIDATION]
        assert results[0][2] == str(tmp_path / "runs" / "good")
        assert "line 2" in results[1][2]


class TestPresets:
    """Tests for the built-in experiments."""

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_parse(self, name):
        cfg = get_preset(name)
        assert cfg.label

    def test_unknown_preset(self):
        with pytest.raises(ConfigError) as exc:
            get_preset("nope")
        assert "smoke" in str(exc.value)
