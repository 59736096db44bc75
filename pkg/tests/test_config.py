import json

import numpy as np
import pytest

from gcf.config import load_config, parse_config
from gcf.errors import ParseError, ValidationError

BASE = {
    "grid": {"n": 1, "resolution": 64},
    "initial": {"kind": "constant", "radius": 1.0},
    "obstacle": {"family": "homothetic", "phi0": {"kind": "constant", "radius": 0.9},
                 "a_inf": 0.5, "rate": 1.0},
    "alpha": 1.0,
    "t_end": 0.5,
}


def doc(**over):
    d = json.loads(json.dumps(BASE))
    d.update(over)
    return json.dumps(d)


def test_defaults():
    cfg = parse_config(doc(), name="x")
    assert cfg.deltas == [pytest.approx(0.05)]
    assert cfg.cadence == pytest.approx(0.005)
    assert cfg.checks == "all" and cfg.penalty == "c11"
    assert cfg.output == "x_out" and cfg.name == "x"


def test_no_obstacle_has_no_penalty_width():
    cfg = parse_config(doc(obstacle=None))
    assert cfg.deltas == [0.0]


def test_malformed_json_reports_line():
    text = '{\n  "alpha": 1.0,\n  "t_end": ,\n}'
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == 3


def test_wrong_type_reports_field():
    with pytest.raises(ParseError) as info:
        parse_config(doc(alpha="one"))
    assert info.value.field == "alpha"


def test_all_violations_collected():
    bad = doc(alpha=-1.0, t_end=0.0, cadence=-1.0, delta=[0.01, 0.02], checks=["nope"],
              grid={"n": 3, "resolution": 4})
    with pytest.raises(ValidationError) as info:
        parse_config(bad)
    v = " ".join(info.value.violations)
    for key in ("alpha", "t_end", "cadence", "delta", "checks", "grid.n"):
        assert key in v
    assert len(info.value.violations) >= 6


def test_delta_must_fit_in_initial_gap():
    with pytest.raises(ValidationError):
        parse_config(doc(delta=[0.2]))


def test_missing_table_file(tmp_path):
    with pytest.raises(ValidationError) as info:
        parse_config(doc(initial={"kind": "table", "file": "nope.csv"}), base_dir=str(tmp_path))
    assert "does not exist" in info.value.violations[0]


def test_table_fields(tmp_path):
    th = 2 * np.pi * np.arange(64) / 64
    (tmp_path / "u0.csv").write_text(
        "node_index,u\n" + "".join(f"{k},{1 + 0.01 * np.cos(2 * t)}\n" for k, t in enumerate(th)))
    (tmp_path / "ob.csv").write_text(
        "node_index,phi0,phi_inf\n" + "".join(f"{k},0.8,0.4\n" for k in range(64)))
    d = dict(BASE, initial={"kind": "table", "file": "u0.csv"},
             obstacle={"family": "interpolating", "table": "ob.csv"})
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    cfg = load_config(str(p))
    grid, u0, ob = cfg.build()
    assert u0[0] == pytest.approx(1.01) and ob.family == "interpolating"
    assert np.allclose(ob.phi_inf, 0.4)
    assert cfg.name == "s"


def test_probe_section():
    probe = {"z_c": [1.0, 0.0], "r_patch": 0.4, "window": [0.1, 0.3], "points": [0.2]}
    cfg = parse_config(doc(probe=probe))
    assert cfg.probe.radii == [0.1, 0.2] and cfg.probe.zoom == [0.1, 0.05]
    with pytest.raises(ValidationError):
        parse_config(doc(probe=dict(probe, window=[0.3, 0.1])))
    with pytest.raises(ParseError):
        parse_config(doc(probe=dict(probe, bogus=1)))


def test_unknown_fault():
    with pytest.raises(ValidationError):
        parse_config(doc(faults=[{"kind": "explode"}]))
