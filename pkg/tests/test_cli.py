import json
import math
import os

import pytest

from gcf import cli


def write(tmp_path, name, d):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


SPHERE = {"grid": {"n": 1, "resolution": 64}, "initial": {"kind": "constant", "radius": 1.0},
          "obstacle": None, "alpha": 1.0, "t_end": 0.1, "cadence": 0.02,
          "checks": ["sphere_exactness", "euler_formula"], "expect": {"tol": 1e-2}}
CONTACT = {"grid": {"n": 1, "resolution": 64}, "initial": {"kind": "constant", "radius": 1.0},
           "obstacle": {"family": "homothetic", "phi0": {"kind": "constant", "radius": 0.9},
                        "a_inf": 0.5555555555555556, "rate": 2.0},
           "alpha": 1.0, "delta": 0.05, "t_end": 0.3, "cadence": 0.03}


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["run", write(tmp_path, "s.json", SPHERE), "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == 0 and {c["id"] for c in rep["checks"]} == {"sphere_exactness", "euler_formula"}
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,min_K,max_K,min_gap,min_beta,min_lambda,max_lambda,max_speed"
    assert len(rows) == 7
    assert sorted(f for f in os.listdir(out) if f.startswith("snap_"))[0] == "snap_00000.csv"


def test_all_checks_on_contact(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", write(tmp_path, "c.json", CONTACT), "--out", str(out)]) == 0
    ids = {c["id"] for c in json.loads((out / "report.json").read_text())["checks"]}
    assert {"penalty_bounds", "speed_monotone", "gauss_bounds", "speed_upper",
            "principal_bounds", "euler_formula"} <= ids


def test_check_failure_exit_code(tmp_path):
    d = dict(CONTACT, checks=["penalty_bounds"], faults=[{"kind": "inject_beta"}])
    assert cli.main(["run", write(tmp_path, "c.json", d), "--out", str(tmp_path / "o")]) == 2


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", write(tmp_path, "c.json", dict(SPHERE, alpha=-1)),
                     "--out", str(tmp_path / "o")]) == 4
    assert "alpha" in capsys.readouterr().err
    p = tmp_path / "broken.json"
    p.write_text("{\n oops")
    assert cli.main(["run", str(p)]) == 4


def test_inadmissible_obstacle_is_config_error(tmp_path):
    d = dict(CONTACT, obstacle=dict(CONTACT["obstacle"], a_inf=0.1, rate=5.0))
    assert cli.main(["run", write(tmp_path, "c.json", d), "--out", str(tmp_path / "o")]) == 4


def test_solver_error_exit_code(tmp_path):
    # a rippled field under a step far above the stability limit loses convexity
    (tmp_path / "u0.csv").write_text("node_index,u\n" + "".join(
        f"{k},{1 + 5e-4 * math.cos(30 * 2 * math.pi * k / 64)!r}\n" for k in range(64)))
    d = dict(SPHERE, dt=0.05)
    d["initial"] = {"kind": "table", "file": "u0.csv"}
    assert cli.main(["run", write(tmp_path, "s.json", d), "--out", str(tmp_path / "o")]) == 3


def test_validate_obstacle(tmp_path, capsys):
    assert cli.main(["validate-obstacle", write(tmp_path, "c.json", CONTACT)]) == 0
    assert json.loads(capsys.readouterr().out)["pass"] is True
    bad = dict(CONTACT, obstacle=dict(CONTACT["obstacle"], a_inf=0.1, rate=5.0))
    assert cli.main(["validate-obstacle", write(tmp_path, "b.json", bad)]) == 2
    assert cli.main(["validate-obstacle", write(tmp_path, "s.json", SPHERE)]) == 4


def test_probe_requires_probe_section(tmp_path):
    assert cli.main(["probe", write(tmp_path, "c.json", CONTACT)]) == 4


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("GCF_THREADS", "1")
    assert cli.main(["run", write(tmp_path, "s.json", SPHERE), "--out", str(tmp_path / "o")]) == 0


def test_fixtures_are_shipped():
    names = {os.path.basename(p) for p in cli.fixture_paths()}
    assert {"sphere_n1.json", "contact.json", "free_boundary.json"} <= names
    assert sum(n.startswith("neg_") for n in names) >= 8
