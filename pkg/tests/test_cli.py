import json

import numpy as np
import pytest

from safelearn import conic
from safelearn.cli import main

CONFIG = {
    "version": 1,
    "safety": {"normals": [[1, 0], [-1, 0], [0, 1], [0, -1]],
               "offsets": [1, 1, 1, 1]},
    "uncertainty": {"kind": "interval",
                    "lower": [[-0.5, -0.5], [-0.5, -0.5]],
                    "upper": [[0.5, 0.5], [0.5, 0.5]]},
    "cost": {"c": [-1, 0]},
    "plant": {"A_star": [[0.3, 0.1], [0.0, -0.2]]},
    "envelope": {"gamma": 0.05, "p": "inf", "d": 0},
}


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(CONFIG))
    return str(path)


def test_safeset_boundary_scan_and_dump(config_path, tmp_path):
    out = tmp_path / "scan"
    dump = tmp_path / "program.json"
    code = main(["safeset", "--config", config_path, "--mode", "one",
                 "--scan", "boundary", "--directions", "12",
                 "--out", str(out), "--dump-program", str(dump)])
    assert code == 0
    assert (out / "scan.csv").exists()
    assert (out / "scan.svg").exists()
    poly = json.loads((out / "scan_polygon.json").read_text())
    assert len(poly["vertices"]) == 12
    prog = conic.load_program(dump.read_text())
    assert conic.solve(prog).status == conic.OPTIMAL


def test_safeset_grid_scan(config_path, tmp_path):
    out = tmp_path / "grid"
    code = main(["safeset", "--config", config_path, "--mode", "nl-one",
                 "--scan", "grid", "--resolution", "7", "--out", str(out)])
    assert code == 0
    rows = (out / "scan.csv").read_text().strip().splitlines()
    assert rows[0] == "x,y,status"
    assert len(rows) == 1 + 7 * 7


def test_learn_reports_are_deterministic(config_path, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["learn", "--config", config_path, "--algo", "one",
                 "--seed", "7", "--out", str(out1)]) == 0
    assert main(["learn", "--config", config_path, "--algo", "one",
                 "--seed", "7", "--out", str(out2)]) == 0
    assert (out1 / "report.json").read_text() == (out2 / "report.json").read_text()
    doc = json.loads((out1 / "report.json").read_text())
    assert doc["outcome"] == "recovered"


def test_verify_learn_report(config_path, tmp_path):
    out = tmp_path / "learn"
    main(["learn", "--config", config_path, "--algo", "one", "--out", str(out)])
    code = main(["verify", "--config", config_path,
                 "--report", str(out / "report.json"),
                 "--samples", "20", "--horizon", "1"])
    assert code == 0


def test_fit_command(config_path, tmp_path):
    out = tmp_path / "fit"
    code = main(["fit", "--config", config_path, "--points", "6",
                 "--fit-points", "6", "--test-points", "50",
                 "--constrained", "both", "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "fit.json").read_text())
    assert set(doc) >= {"rmse_ls", "rmse_sos"}


def test_malformed_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"safety": {"normals": [[1, 0]]}}))
    assert main(["safeset", "--config", str(bad), "--mode", "one"]) == 2


def test_missing_file_exits_2(tmp_path):
    assert main(["safeset", "--config", str(tmp_path / "nope.json"),
                 "--mode", "one"]) == 2


def test_repro_fast_target(tmp_path):
    code = main(["repro", "sec3.6", "--out", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "sec3_6" / "report.json").read_text())
    assert doc["pass"] is True
    assert len(doc["checks"]) == 3


def test_solver_tol_env_override(config_path, tmp_path, monkeypatch):
    monkeypatch.setenv("SAFELEARN_SOLVER_TOL", "1e-6")
    assert main(["learn", "--config", config_path, "--algo", "one",
                 "--out", str(tmp_path / "o")]) == 0
    monkeypatch.setenv("SAFELEARN_SOLVER_TOL", "not-a-number")
    assert main(["learn", "--config", config_path, "--algo", "one",
                 "--out", str(tmp_path / "p")]) == 2
