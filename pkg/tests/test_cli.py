import json

import pytest

from ivrkit.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from ivrkit.experiment import RunManifest

SMALL = """
grid.n_cs = 24
grid.n_oc = 12
grid.n_theta = 12
initial.label = 0 1 1
cap.enabled = false
dt_out = 0.5
t_final = 6
checkpoint.every = 4
eigen.e_max = 0.1
diagnostics.populations = 0 1 1; 1 0 1
"""

COMMANDS = ("eigen1d", "dos", "propagate", "analyze", "spectrum", "micro", "report")


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(SMALL)
    out = root / "out"
    codes = {cmd: main([cmd, "--config", str(cfg), "--out", str(out)]) for cmd in COMMANDS}
    return root, cfg, out, codes


def test_all_subcommands_succeed(run_dir):
    _, _, out, codes = run_dir
    assert codes == {cmd: EXIT_OK for cmd in COMMANDS}
    for name in ("eigen_cs.csv", "dos.csv", "autocorr.csv", "energies.csv", "entropy.csv", "populations.csv",
                 "qns_avg.csv", "spectrum.csv", "micro.csv", "analysis.csv", "report.txt", "psi_000000.ivrw"):
        assert (out / name).exists(), name
    assert not (out / "pd.csv").exists()


def test_manifest_records_checksums_and_residual(run_dir):
    _, _, out, _ = run_dir
    manifest = RunManifest.load(out / "manifest.json")
    assert manifest.status == "OK"
    assert manifest.verify(out)
    assert manifest.summary["max_sum_rule_residual"] < 1e-9
    assert abs(manifest.summary["final_norm"] - 1) < 1e-10
    assert "initial.label = 0 1 1" in manifest.config
    for cmd in COMMANDS:
        if cmd != "propagate":
            assert RunManifest.load(out / f"manifest_{cmd}.json").verify(out)


def test_rerun_is_byte_identical(run_dir):
    root, cfg, out, _ = run_dir
    again = root / "again"
    assert main(["propagate", "--config", str(cfg), "--out", str(again)]) == EXIT_OK
    first = RunManifest.load(out / "manifest.json").files
    second = RunManifest.load(again / "manifest.json").files
    assert first == second
    for name in first:
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("dt_out = -1\n")
    assert main(["propagate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "dt_out" in capsys.readouterr().err
    assert main(["spectrum", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_numerical_failure_leaves_failed_manifest(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    # the initial label lies above every retained stretch level on this grid
    cfg.write_text(SMALL.replace("initial.label = 0 1 1", "initial.label = 60 0 0"))
    out = tmp_path / "o"
    assert main(["propagate", "--config", str(cfg), "--out", str(out)]) == EXIT_NUMERICAL
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "FAILED"
    assert "InvalidParameterError" in manifest["error"]
    assert "numerical failure" in capsys.readouterr().err


def test_missing_inputs_are_reported(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL)
    assert main(["micro", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == EXIT_CONFIG
