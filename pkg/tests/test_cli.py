import json

import pytest

from cli import main
from middlewares.errors import RunOutcome, failure_manifest_path, guard
from engine.model import DomainError, NumericalError
from utils.constants import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL
from utils.schema import RunConfig, build_run_config


def test_meanfield_run_is_byte_identical(tmp_path):
    out = tmp_path / "mf.csv"
    argv = ["meanfield", "--rho", "0.2", "--alpha-grid", "0.3,0.6,0.8", "--bp-limit",
            "--seed", "11", "--output", str(out)]

    assert main(argv) == EXIT_OK
    first = out.read_bytes()
    assert main(argv) == EXIT_OK
    assert out.read_bytes() == first

    lines = first.decode().splitlines()
    assert lines[0].startswith("# cavity-recovery 1.0.0 config_hash=")
    assert lines[0].endswith("seed=11")
    assert lines[1] == "rho,alpha,q,chi_bar,theta,sigma_xi2,converged,iterations"
    assert len(lines) == 5


def test_json_output(tmp_path):
    out = tmp_path / "mf.json"
    assert main(["meanfield", "--rho", "0.2", "--alpha", "0.75", "--bp-limit",
                 "--format", "json", "--output", str(out)]) == EXIT_OK
    document = json.loads(out.read_text())
    assert document["points"][0]["recovered"] is True
    assert document["config"]["command"] == "meanfield"


def test_bad_parameter_exits_with_config_code(tmp_path):
    out = tmp_path / "mf.csv"
    assert main(["meanfield", "--rho", "1.5", "--alpha", "0.5", "--output", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_precondition_failure_exits_with_config_code(tmp_path):
    out = tmp_path / "mf.csv"
    assert main(["meanfield", "--rho", "0", "--alpha", "0.5", "--bp-limit", "--output", str(out)]) == EXIT_CONFIG


def _run_config(tmp_path):
    return build_run_config("meanfield", {"rho": 0.2, "alpha": 0.5}, default_output=tmp_path / "run.csv")


def test_guard_records_partial_failures(tmp_path):
    rc = _run_config(tmp_path)
    code = guard(lambda _: RunOutcome(outputs=[], failures=[{"alpha": 0.5, "error": "stalled"}]), rc)
    assert code == EXIT_PARTIAL
    manifest = json.loads(failure_manifest_path(rc.output_path).read_text())
    assert manifest["failures"] == [{"alpha": 0.5, "error": "stalled"}]


def test_guard_records_numerical_error(tmp_path):
    rc = _run_config(tmp_path)

    def handler(_):
        raise NumericalError("no bracket", {"alpha": 0.5})

    assert guard(handler, rc) == EXIT_PARTIAL
    manifest = json.loads(failure_manifest_path(rc.output_path).read_text())
    assert manifest["failures"][0]["diagnostics"] == {"alpha": 0.5}


def test_guard_maps_domain_error(tmp_path):
    rc = _run_config(tmp_path)

    def handler(_):
        raise DomainError("rho out of range")

    assert guard(handler, rc) == EXIT_CONFIG
    assert not failure_manifest_path(rc.output_path).exists()


@pytest.mark.slow
def test_boundary_command(tmp_path):
    out = tmp_path / "boundary.csv"
    assert main(["boundary", "--rho-grid", "0.1:0.9:0.1", "--seed", "1", "--tol-alpha", "0.005",
                 "--output", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[1] == "rho,alpha_c,alpha_c_stability,tol_alpha"
    assert len(lines) == 2 + 9


def test_json_report_reparses_into_run_config(tmp_path):
    out = tmp_path / "mf.json"
    assert main(["meanfield", "--rho", "0.2", "--alpha", "0.6", "--sigma2", "0.3",
                 "--format", "json", "--seed", "2", "--output", str(out)]) == EXIT_OK
    document = json.loads(out.read_text())
    rc = RunConfig.model_validate(document["config"])
    assert rc.config_hash() == document["meta"]["config_hash"]
    assert rc.seed == 2 and rc.parameters.sigma2 == 0.3


def test_experiment_run_is_byte_identical(tmp_path):
    out = tmp_path / "exp.csv"
    argv = ["experiment", "--n", "30", "--k", "6", "--alpha", "0.6", "--instances", "2", "--nodes", "3",
            "--f-grid=-0.3,-0.1,-0.03,0,0.03,0.1,0.3", "--fit-window", "0.5", "--mse-alphas", "0.5",
            "--seed", "1", "--output", str(out)]

    def snapshot():
        return {p.name: p.read_bytes() for p in sorted(tmp_path.iterdir())}

    assert main(argv) == EXIT_OK
    first = snapshot()
    assert main(argv) == EXIT_OK
    assert snapshot() == first
    assert {"exp.csv", "exp.staircases.csv", "exp.instances.csv", "exp.sweep.csv", "exp.report.json"} <= set(first)


def test_negative_seed_is_a_config_error(tmp_path):
    out = tmp_path / "mf.csv"
    assert main(["meanfield", "--rho", "0.2", "--alpha", "0.6", "--bp-limit", "--seed", "-3",
                 "--output", str(out)]) == EXIT_CONFIG
    assert not out.exists()
