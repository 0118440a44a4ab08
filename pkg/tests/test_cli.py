import csv
import fcntl
import json
import os

import pytest

from loopgauge import cli
from loopgauge.config import ConfigError, load, parse_grid
from loopgauge.constants import CONSTANTS

FAST_ALGEBRA = {"samples": 500, "bracket_samples": 5}


def _config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_algebra_check_passes(tmp_path):
    out = tmp_path / "alg"
    code = cli.main(["algebra-check", "--config", _config(tmp_path, FAST_ALGEBRA), "--out", str(out)])
    assert code == cli.EXIT_OK
    rows = _rows(out / "algebra_check.csv")
    assert all(r["status"] == "pass" for r in rows)
    thresholds = {r["identity"]: float(r["threshold"]) for r in rows}
    assert thresholds["jacobi_exact"] == CONSTANTS.jacobi_exact_tol
    assert thresholds["malcev"] == CONSTANTS.malcev_tol
    assert thresholds["norm_multiplicativity"] == CONSTANTS.algebra_tol
    assert (out / "config.json").exists()


def test_algebra_check_quaternion_associator_rows(tmp_path):
    out = tmp_path / "q"
    code = cli.main(["algebra-check", "--instance", "quaternion", "--config",
                     _config(tmp_path, FAST_ALGEBRA), "--out", str(out)])
    assert code == cli.EXIT_OK
    rows = {r["identity"]: r for r in _rows(out / "algebra_check.csv")}
    assert float(rows["associator_zero"]["max_residual"]) < 1e-14
    assert float(rows["associator_path_zero"]["max_residual"]) < 1e-14


def test_corrupted_structure_is_caught(tmp_path):
    out = tmp_path / "bad"
    code = cli.main(["algebra-check", "--corrupt-structure", "--config",
                     _config(tmp_path, FAST_ALGEBRA), "--out", str(out)])
    assert code == cli.EXIT_INVARIANT
    failed = [r["identity"] for r in _rows(out / "algebra_check.csv") if r["status"] == "fail"]
    assert "norm_multiplicativity" in failed and "moufang" in failed


def test_coulomb_solve_writes_outputs(tmp_path):
    out = tmp_path / "cs"
    code = cli.main(["coulomb-solve", "--grid", "32x32", "--out", str(out)])
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["report"]["converged"]
    assert "wall_time" not in rep["report"] and "out" not in rep["config"]
    for name in ("section_initial.lgf", "section_final.lgf", "torsion_initial.lgf",
                 "torsion_final.lgf", "xi.lgf", "trace.csv", "norms.csv"):
        assert (out / name).exists(), name
    trace = _rows(out / "trace.csv")
    assert float(trace[-1]["G"]) < CONSTANTS.tol_outer


def test_coulomb_solve_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["coulomb-solve", "--grid", "24x24", "--seed", "7", "--out", str(a)]) == 0
    assert cli.main(["coulomb-solve", "--grid", "24x24", "--seed", "7", "--out", str(b)]) == 0
    for name in ("report.json", "trace.csv", "norms.csv", "section_final.lgf", "xi.lgf"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_no_convergence_exit_code(tmp_path):
    out = tmp_path / "nc"
    cfg = _config(tmp_path, {"max_steps": 1, "tol_outer": 1e-30})
    code = cli.main(["coulomb-solve", "--grid", "16x16", "--config", cfg, "--out", str(out)])
    assert code == cli.EXIT_NO_CONVERGENCE
    rep = json.loads((out / "report.json").read_text())
    assert not rep["report"]["converged"]
    assert len(_rows(out / "trace.csv")) == 2


@pytest.mark.parametrize("argv", [
    ["coulomb-solve", "--grid", "3x3"],
    ["coulomb-solve", "--grid", "ax4"],
    ["coulomb-solve", "--eps", "-1"],
    ["g2-solve", "--grid", "8x8"],
    ["nonsense"],
])
def test_usage_errors(tmp_path, argv):
    assert cli.main(argv + ["--out", str(tmp_path / "u")]) == cli.EXIT_USAGE


def test_unknown_config_key(tmp_path):
    cfg = _config(tmp_path, {"gird": [8, 8]})
    assert cli.main(["coulomb-solve", "--config", cfg, "--out", str(tmp_path / "k")]) == cli.EXIT_USAGE


def test_unreadable_config(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert cli.main(["coulomb-solve", "--config", str(path), "--out", str(tmp_path / "k")]) == cli.EXIT_USAGE


def test_held_lock_refuses_second_run(tmp_path):
    out = tmp_path / "locked"
    os.makedirs(out)
    with open(out / ".lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        assert cli.main(["coulomb-solve", "--grid", "16x16", "--out", str(out)]) == cli.EXIT_USAGE
    assert not (out / "report.json").exists()


def test_config_precedence(tmp_path):
    cfg = _config(tmp_path, {"eps": 0.1, "seed": 3})
    c = load("coulomb-solve", cfg, {"seed": 9, "eps": None})
    assert c.eps == 0.1 and c.seed == 9
    g = load("g2-solve")
    assert g.grid == (4,) * 7 and g.residual == "direct"
    assert parse_grid("64x64") == parse_grid("64,64") == (64, 64)
    with pytest.raises(ConfigError):
        parse_grid("")


def test_help_exits_cleanly(capsys):
    assert cli.main(["--help"]) == cli.EXIT_OK
    assert "coulomb-solve" in capsys.readouterr().out
