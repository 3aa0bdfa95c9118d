"""
Tests for the command-line layer: configs, exit statuses and artifacts.
"""

import json

import pandas as pd
import pytest

from src.cli.app import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_OUT_OF_SCOPE, main
from src.cli.commands import SCHEMA_VERSION, router
from src.errors import ConfigError
from src.models.config import RunConfig, load_config


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def run(tmp_path, command, payload, out="out"):
    config = write_config(tmp_path / f"{command}.json", payload)
    status = main([command, "--config", str(config), "--out", str(tmp_path / out)])
    report_path = tmp_path / out / f"{command}.json"
    report = json.loads(report_path.read_text(encoding="utf-8")) if report_path.exists() else None
    return status, report


SQRT = {"form": "power", "alpha": 0.5}


class TestConfig:
    """Parsing and validation of run configs."""

    def test_defaults(self, tmp_path):
        """Only the coefficient is required."""
        config = load_config(write_config(tmp_path / "c.json", {"coefficient": SQRT}))
        assert config.mesh.n_elements == 32
        assert config.seed == 0

    def test_round_trip(self):
        """Serialize, parse and serialize again gives identical text."""
        config = RunConfig.model_validate({
            "coefficient": SQRT,
            "regime": {"kind": "feedback", "beta": 1.0, "gamma": 2.0},
            "initial": {"kind": "polynomial", "displacement": [0.0, 0.0, 1.0]},
        })
        text = config.model_dump_json()
        assert RunConfig.model_validate_json(text).model_dump_json() == text

    def test_unknown_field(self, tmp_path):
        """Extra keys are rejected."""
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path / "c.json", {"coefficient": SQRT, "colour": "red"}))

    def test_file_data_needs_path(self):
        """File initial data require a path."""
        with pytest.raises(ValueError):
            RunConfig.model_validate({"coefficient": SQRT, "initial": {"kind": "file"}})

    def test_stiffness_outside_feedback(self):
        """beta and gamma are rejected on the adjoint and controlled regimes."""
        with pytest.raises(ValueError, match="feedback regime only"):
            RunConfig.model_validate({"coefficient": SQRT, "regime": {"kind": "adjoint", "beta": 1.0}})
        with pytest.raises(ValueError):
            RunConfig.model_validate({"coefficient": SQRT, "regime": {"kind": "controlled", "gamma": 1.0}})

    def test_power_grading(self, tmp_path):
        """Mesh grading and exponent are read from the config."""
        config = load_config(write_config(tmp_path / "c.json", {
            "coefficient": SQRT, "mesh": {"n_elements": 8, "grading": "power", "exponent": 3.0}}))
        assert config.mesh.grading == "power"
        assert config.mesh.exponent == 3.0


class TestCommands:
    """End-to-end command runs."""

    def test_registered_commands(self):
        """Every command has a handler."""
        assert router.names == sorted(["classify", "constants", "simulate", "decay", "identities",
                                       "observability", "control", "elliptic"])

    def test_classify(self, tmp_path):
        """x^(1/2) classifies as WD with K = 0.5."""
        status, report = run(tmp_path, "classify", {"coefficient": SQRT})
        assert status == EXIT_OK
        assert report["result"]["kind"] == "WD"
        assert report["result"]["K"] == 0.5
        assert report["schema_version"] == SCHEMA_VERSION
        assert report["config"]["coefficient"]["alpha"] == 0.5

    def test_constants(self, tmp_path):
        """The constants report carries T0 = 1.8."""
        status, report = run(tmp_path, "constants", {
            "coefficient": SQRT, "T": 2.0, "regime": {"kind": "feedback", "beta": 1.0, "gamma": 1.0}})
        assert status == EXIT_OK
        assert report["result"]["T0"] == pytest.approx(1.8)
        assert report["passed"]

    def test_open_problem(self, tmp_path):
        """SD decay with gamma = 0 exits with status 3 and cites the open problem."""
        status, report = run(tmp_path, "decay", {
            "coefficient": {"form": "power", "alpha": 1.5},
            "regime": {"kind": "feedback", "beta": 1.0, "gamma": 0.0}})
        assert status == EXIT_OUT_OF_SCOPE
        assert report["status"] == EXIT_OUT_OF_SCOPE
        assert "open problem" in report["error"]
        assert not report["passed"]

    def test_bad_config(self, tmp_path):
        """An invalid config exits with status 2."""
        status, _ = run(tmp_path, "classify", {"coefficient": {"form": "power", "alpha": -1.0}, "mesh": 3})
        assert status == EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        """An unreadable config exits with status 2."""
        assert main(["classify", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_simulate_artifacts(self, tmp_path):
        """simulate writes the trajectory CSV and the matrices."""
        status, report = run(tmp_path, "simulate", {
            "coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 0.5, "dt": 0.05})
        assert status == EXIT_OK
        assert report["checks"]["conservation"]
        frame = pd.read_csv(tmp_path / "out" / "simulate_trajectory.csv")
        assert list(frame.columns) == ["t", "E_h", "y(1)", "y_x(1)", "y_t(1)", "y_tx(1)", "y_xx(1)"]
        assert len(frame) == 11
        assert (tmp_path / "out" / "matrices" / "M.mtx").exists()

    def test_elliptic(self, tmp_path):
        """elliptic reports the estimates and the closed-form comparison."""
        status, report = run(tmp_path, "elliptic", {
            "coefficient": SQRT, "mesh": {"n_elements": 16},
            "regime": {"kind": "feedback", "beta": 1.0, "gamma": 1.0}})
        assert status == EXIT_OK
        assert report["result"]["estimates"]["energy_holds"]
        assert "max_nodal_error" in report["result"]

    def test_seed_override(self, tmp_path):
        """--seed replaces the config seed in the echoed config."""
        config = write_config(tmp_path / "c.json", {"coefficient": SQRT})
        assert main(["classify", "--config", str(config), "--out", str(tmp_path / "out"), "--seed", "7"]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "classify.json").read_text(encoding="utf-8"))
        assert report["config"]["seed"] == 7

    def test_deterministic(self, tmp_path):
        """Identical configs give byte-identical reports."""
        payload = {"coefficient": SQRT, "T": 2.0, "regime": {"kind": "feedback", "beta": 1.0, "gamma": 1.0}}
        run(tmp_path, "constants", payload, out="first")
        run(tmp_path, "constants", payload, out="second")
        first = (tmp_path / "first" / "constants.json").read_bytes()
        second = (tmp_path / "second" / "constants.json").read_bytes()
        assert first == second

    @pytest.mark.parametrize("command, payload", [
        ("classify", {"coefficient": SQRT}),
        ("elliptic", {"coefficient": SQRT, "mesh": {"n_elements": 8},
                      "regime": {"kind": "feedback", "beta": 1.0, "gamma": 1.0}}),
        ("observability", {"coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 2.0, "n_trials": 2, "seed": 3}),
        ("control", {"coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 2.0, "dt": 0.05}),
    ])
    def test_deterministic_commands(self, tmp_path, command, payload):
        """Reports and CSV frames are byte-identical across runs."""
        run(tmp_path, command, payload, out="first")
        run(tmp_path, command, payload, out="second")
        first = sorted(p.name for p in (tmp_path / "first").iterdir())
        assert first == sorted(p.name for p in (tmp_path / "second").iterdir())
        for name in first:
            assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


class TestDynamicCommands:
    """decay, identities, observability and control on small meshes."""

    def test_decay(self, tmp_path):
        """Within one decay time the energy stays under the envelope."""
        status, report = run(tmp_path, "decay", {
            "coefficient": SQRT, "mesh": {"n_elements": 8},
            "regime": {"kind": "feedback", "beta": 1.0, "gamma": 1.0},
            "horizon_factor": 0.5, "decay_dt": 0.05})
        assert status == EXIT_OK
        assert report["checks"]["below_envelope"]
        assert report["result"]["E_final"] <= report["result"]["E0"]
        frame = pd.read_csv(tmp_path / "out" / "decay_energy.csv")
        assert list(frame.columns) == ["t", "E_h", "envelope"]
        assert (frame["E_h"] <= frame["envelope"] * (1.0 + 1e-12)).all()

    def test_decay_needs_feedback(self, tmp_path):
        """decay on the adjoint regime fails with status 1 and an error report."""
        status, report = run(tmp_path, "decay", {"coefficient": SQRT, "mesh": {"n_elements": 8}})
        assert status == EXIT_FAILED
        assert report["status"] == EXIT_FAILED
        assert "feedback" in report["error"]

    def test_identities(self, tmp_path):
        """Conservation, norm chain and Hardy-Poincare checks are reported."""
        status, report = run(tmp_path, "identities", {
            "coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 0.5, "levels": [8, 16]})
        assert status in (EXIT_OK, EXIT_FAILED)
        checks = report["checks"]
        assert checks["conservation"]
        assert checks["norm_equivalence"]
        assert checks["hardy_poincare"]
        assert len(report["result"]["multiplier_x2_refinement"]["residuals"]) == 2

    def test_observability(self, tmp_path):
        """The verdict covers the eigenmode trials; random data are listed separately."""
        status, report = run(tmp_path, "observability", {
            "coefficient": SQRT, "mesh": {"n_elements": 16}, "T": 2.0, "n_trials": 2})
        result = report["result"]
        assert report["checks"]["lower_bound"] == result["satisfied"]
        assert status == (EXIT_OK if result["satisfied"] else EXIT_FAILED)
        frame = pd.read_csv(tmp_path / "out" / "observability_trials.csv")
        assert len(frame) == 4
        assert list(frame["resolved"]) == [True, True, False, False]

    def test_control(self, tmp_path):
        """The lowest eigenmode is steered to rest and the control is written."""
        status, report = run(tmp_path, "control", {
            "coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 2.0, "dt": 0.05})
        assert status == EXIT_OK
        result = report["result"]
        assert result["converged"]
        assert result["verified_energy_ratio"] <= 1e-6
        assert result["gramian_pairing"] == pytest.approx(result["cost"], rel=1e-6)
        assert len(pd.read_csv(tmp_path / "out" / "control_f.csv")) == 41
        assert (tmp_path / "out" / "control_cg.csv").exists()


class TestInputErrors:
    """Bad data sources exit with status 2 and an error report."""

    def test_missing_initial_file(self, tmp_path):
        """An absent CSV is a config error."""
        status, report = run(tmp_path, "simulate", {
            "coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 0.5, "dt": 0.05,
            "initial": {"kind": "file", "path": str(tmp_path / "absent.csv")}})
        assert status == EXIT_CONFIG
        assert report["status"] == EXIT_CONFIG
        assert "absent.csv" in report["error"]

    def test_short_initial_file(self, tmp_path):
        """A CSV with the wrong number of rows is a config error."""
        path = tmp_path / "short.csv"
        pd.DataFrame({"u": [0.0, 0.0, 0.0], "v": [0.0, 0.0, 0.0]}).to_csv(path, index=False)
        status, report = run(tmp_path, "simulate", {
            "coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 0.5, "dt": 0.05,
            "initial": {"kind": "file", "path": str(path)}})
        assert status == EXIT_CONFIG
        assert "3 rows" in report["error"]

    def test_initial_file_without_columns(self, tmp_path):
        """A CSV lacking u or v is a config error."""
        path = tmp_path / "columns.csv"
        pd.DataFrame({"w": [0.0] * 18}).to_csv(path, index=False)
        status, _ = run(tmp_path, "simulate", {
            "coefficient": SQRT, "mesh": {"n_elements": 8}, "T": 0.5, "dt": 0.05,
            "initial": {"kind": "file", "path": str(path)}})
        assert status == EXIT_CONFIG

    def test_eigenmode_index_too_large(self, tmp_path):
        """Asking for more modes than free DOFs is a config error."""
        status, report = run(tmp_path, "simulate", {
            "coefficient": SQRT, "mesh": {"n_elements": 4}, "T": 0.5, "dt": 0.05,
            "initial": {"kind": "eigenmode", "mode": 50}})
        assert status == EXIT_CONFIG
        assert "Eigenmode 50" in report["error"]

    def test_stiffness_on_adjoint_regime(self, tmp_path):
        """beta on the adjoint regime fails config validation."""
        status, report = run(tmp_path, "simulate", {
            "coefficient": SQRT, "regime": {"kind": "adjoint", "beta": 1.0}})
        assert status == EXIT_CONFIG
        assert report is None
