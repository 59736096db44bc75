"""Scenario configuration: JSON documents describing one flow experiment.

A minimal document only needs ``grid``, ``alpha`` and ``t_end``::

    {"grid": {"n": 1, "resolution": 256}, "alpha": 1.0, "t_end": 0.375}

Field shapes (``initial`` and the obstacle's ``phi0`` / ``phi_inf``)::

    {"kind": "constant", "radius": 1.0}
    {"kind": "ball", "radius": 0.55, "center": [0.25, 0.0]}
    {"kind": "ellipse", "axes": [2.0, 1.0]}          # ellipsoid for n=2
    {"kind": "table", "file": "u0.csv"}              # node_index,u

Obstacles are ``null`` or one of::

    {"family": "homothetic", "phi0": <shape>, "a_inf": 0.5, "rate": 1.0}
    {"family": "interpolating", "phi0": <shape>, "phi_inf": <shape>}
    {"family": ..., "table": "obstacle.csv", ...}    # node_index,phi0[,phi_inf]
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GCFError, ParseError, ValidationError
from .obstacle import make_homothetic, make_interpolating
from .sphere import build_grid, support_ball, support_ellipsoid

CHECKS = (
    "sphere_exactness",
    "penalty_bounds",
    "speed_monotone",
    "gauss_bounds",
    "speed_upper",
    "principal_bounds",
    "euler_formula",
    "evolution_residual",
    "coincidence_time",
    "continuation",
    "free_boundary",
)

FAULTS = (
    "inject_beta",
    "inject_speed",
    "reverse_time",
    "flatten_snapshot",
    "corrupt_snapshot",
    "corrupt_curvature",
    "cap_patch",
)

SHAPES = ("constant", "ball", "ellipse", "table")


@dataclass
class ProbeSpec:
    """Free-boundary probe settings."""

    z_c: list
    r_patch: float
    window: list
    points: list
    radii: list = field(default_factory=lambda: [0.1, 0.2])
    zoom: list = field(default_factory=lambda: [0.1, 0.05])
    kappa: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    samples: Optional[int] = None
    tol_c: Optional[float] = None
    side: float = 1.0


@dataclass
class ScenarioConfig:
    name: str
    n: int
    resolution: object
    initial: dict
    obstacle: Optional[dict]
    alpha: float
    deltas: list
    t_end: float
    cadence: float
    dt: Optional[float]
    penalty: str
    checks: list
    probe: Optional[ProbeSpec]
    output: str
    faults: list
    expect: dict
    coincidence_tol: float
    snapshot_stride: int
    base_dir: str = "."

    def build(self):
        """Return ``(grid, u0, obstacle)``."""
        grid = build_grid(self.n, self.resolution)
        u0 = _field(self.initial, grid, self.base_dir, "initial")
        ob = None
        if self.obstacle is not None:
            ob = _obstacle(self.obstacle, grid, self.base_dir)
        return grid, u0, ob


def _read_table(path, grid, columns):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {c: np.empty(grid.size) for c in columns}
    if len(rows) != grid.size:
        raise ValidationError([f"{path}: expected {grid.size} rows, found {len(rows)}"])
    for row in rows:
        k = int(row["node_index"])
        for c in columns:
            out[c][k] = float(row[c])
    return {c: v.reshape(grid.shape) for c, v in out.items()}


def _field(spec, grid, base_dir, where):
    kind = spec.get("kind")
    if kind == "constant":
        return np.full(grid.shape, float(spec["radius"]))
    if kind == "ball":
        return support_ball(grid, float(spec["radius"]), spec.get("center"))
    if kind == "ellipse":
        return support_ellipsoid(grid, spec["axes"])
    if kind == "table":
        path = os.path.join(base_dir, spec["file"])
        return _read_table(path, grid, [spec.get("column", "u")])[spec.get("column", "u")]
    raise ValidationError([f"{where}: unknown shape kind {kind!r}"])


def _obstacle(spec, grid, base_dir):
    fam = spec["family"]
    if "table" in spec:
        cols = ["phi0"] + (["phi_inf"] if fam == "interpolating" else [])
        tab = _read_table(os.path.join(base_dir, spec["table"]), grid, cols)
        phi0, phi_inf = tab["phi0"], tab.get("phi_inf")
    else:
        phi0 = _field(spec["phi0"], grid, base_dir, "obstacle.phi0")
        phi_inf = _field(spec["phi_inf"], grid, base_dir, "obstacle.phi_inf") if "phi_inf" in spec else None
    if fam == "homothetic":
        return make_homothetic(phi0, grid, float(spec["a_inf"]), float(spec["rate"]))
    return make_interpolating(phi0, phi_inf, grid)


def _num(d, key, where, errors, default=None, required=False):
    if key not in d or d[key] is None:
        if required:
            errors.append(f"{where}{key}: required")
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"field {where}{key} must be a number, got {val!r}", field=where + key)
    return float(val)


def _check_shape(spec, where, base_dir, errors, n):
    if not isinstance(spec, dict):
        raise ParseError(f"field {where} must be an object", field=where)
    kind = spec.get("kind")
    if kind not in SHAPES:
        errors.append(f"{where}.kind: must be one of {SHAPES}, got {kind!r}")
    elif kind == "constant":
        r = _num(spec, "radius", where + ".", errors, required=True)
        if r is not None and r <= 0:
            errors.append(f"{where}.radius: must be positive")
    elif kind == "ball":
        r = _num(spec, "radius", where + ".", errors, required=True)
        if r is not None and r <= 0:
            errors.append(f"{where}.radius: must be positive")
        c = spec.get("center")
        if c is not None and len(c) != n + 1:
            errors.append(f"{where}.center: needs {n + 1} components")
    elif kind == "ellipse":
        ax = spec.get("axes")
        if not isinstance(ax, list) or len(ax) != n + 1 or any(a <= 0 for a in ax):
            errors.append(f"{where}.axes: needs {n + 1} positive semi-axes")
    elif kind == "table":
        f = spec.get("file")
        if not f or not os.path.exists(os.path.join(base_dir, f)):
            errors.append(f"{where}.file: file {f!r} does not exist")


def parse_config(text: str, base_dir: str = ".", name: str = "scenario") -> ScenarioConfig:
    """Parse and validate a scenario document, filling in defaults.

    Raises
    ------
    ParseError
        Malformed JSON (with line number) or a field of the wrong type.
    ValidationError
        Every semantic violation found, listed together.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", line=1)
    errors = []

    g = doc.get("grid")
    n, res = None, None
    if not isinstance(g, dict):
        errors.append("grid: required object with n and resolution")
    else:
        n = g.get("n")
        res = g.get("resolution")
        if n not in (1, 2):
            errors.append(f"grid.n: must be 1 or 2, got {n!r}")
        if n == 1 and not (isinstance(res, int) and res >= 8):
            errors.append("grid.resolution: n=1 needs an integer >= 8")
        if n == 2 and not (isinstance(res, list) and len(res) == 2 and res[0] >= 4 and res[1] >= 8
                           and res[1] % 2 == 0):
            errors.append("grid.resolution: n=2 needs [N_theta >= 4, even N_psi >= 8]")

    alpha = _num(doc, "alpha", "", errors, required=True)
    if alpha is not None and alpha <= 0:
        errors.append("alpha: must be positive")
    t_end = _num(doc, "t_end", "", errors, required=True)
    if t_end is not None and t_end <= 0:
        errors.append("t_end: must be positive")
    cadence = _num(doc, "cadence", "", errors)
    if cadence is not None and cadence <= 0:
        errors.append("cadence: must be positive")
    dt = _num(doc, "dt", "", errors)
    if dt is not None and dt <= 0:
        errors.append("dt: must be positive")

    initial = doc.get("initial", {"kind": "constant", "radius": 1.0})
    _check_shape(initial, "initial", base_dir, errors, n or 1)

    ob = doc.get("obstacle")
    if ob is not None:
        if not isinstance(ob, dict):
            raise ParseError("field obstacle must be an object or null", field="obstacle")
        fam = ob.get("family")
        if fam not in ("homothetic", "interpolating"):
            errors.append(f"obstacle.family: unknown family {fam!r}")
        if "table" in ob:
            if not os.path.exists(os.path.join(base_dir, ob["table"])):
                errors.append(f"obstacle.table: file {ob['table']!r} does not exist")
        else:
            if "phi0" not in ob:
                errors.append("obstacle.phi0: required")
            else:
                _check_shape(ob["phi0"], "obstacle.phi0", base_dir, errors, n or 1)
            if fam == "interpolating":
                if "phi_inf" not in ob:
                    errors.append("obstacle.phi_inf: required for the interpolating family")
                else:
                    _check_shape(ob["phi_inf"], "obstacle.phi_inf", base_dir, errors, n or 1)
        if fam == "homothetic":
            a = _num(ob, "a_inf", "obstacle.", errors, required=True)
            r = _num(ob, "rate", "obstacle.", errors, required=True)
            if a is not None and not 0 < a < 1:
                errors.append("obstacle.a_inf: must lie in (0, 1)")
            if r is not None and r <= 0:
                errors.append("obstacle.rate: must be positive")

    deltas = doc.get("delta")
    if deltas is not None:
        if isinstance(deltas, (int, float)) and not isinstance(deltas, bool):
            deltas = [float(deltas)]
        if not isinstance(deltas, list) or not all(
            isinstance(d, (int, float)) and not isinstance(d, bool) for d in deltas
        ):
            raise ParseError("field delta must be a number or a list of numbers", field="delta")
        if not deltas:
            errors.append("delta: schedule must not be empty")
        if any(d <= 0 for d in deltas):
            errors.append("delta: entries must be positive")
        if any(b >= a for a, b in zip(deltas, deltas[1:])):
            errors.append("delta: schedule must be strictly decreasing")
        deltas = [float(d) for d in deltas]

    penalty = doc.get("penalty", "c11")
    if penalty not in ("c11", "smooth"):
        errors.append(f"penalty: unknown variant {penalty!r}")

    checks = doc.get("checks", "all")
    if checks != "all":
        if not isinstance(checks, list):
            raise ParseError("field checks must be 'all' or a list", field="checks")
        bad = [c for c in checks if c not in CHECKS]
        if bad:
            errors.append(f"checks: unknown checks {bad}")

    faults = doc.get("faults", [])
    if not isinstance(faults, list):
        raise ParseError("field faults must be a list", field="faults")
    for f in faults:
        if not isinstance(f, dict) or f.get("kind") not in FAULTS:
            errors.append(f"faults: unknown fault {f!r}")

    probe = None
    if doc.get("probe") is not None:
        p = doc["probe"]
        try:
            probe = ProbeSpec(**p)
        except TypeError as exc:
            raise ParseError(f"probe: {exc}", field="probe") from None
        if n is not None and len(probe.z_c) != n + 1:
            errors.append(f"probe.z_c: needs {n + 1} components")
        if probe.r_patch <= 0:
            errors.append("probe.r_patch: must be positive")
        if len(probe.window) != 2 or probe.window[1] <= probe.window[0]:
            errors.append("probe.window: needs [t_start, t_stop] with t_stop > t_start")
        if len(probe.zoom) > 1 and any(b >= a for a, b in zip(probe.zoom, probe.zoom[1:])):
            errors.append("probe.zoom: radii must decrease")

    stride = doc.get("snapshot_stride", 1)
    if not isinstance(stride, int) or stride < 0:
        errors.append("snapshot_stride: must be a non-negative integer (0 disables)")

    if errors:
        raise ValidationError(errors)

    cfg = ScenarioConfig(
        name=str(doc.get("name", name)),
        n=n,
        resolution=res,
        initial=initial,
        obstacle=ob,
        alpha=alpha,
        deltas=deltas,
        t_end=t_end,
        cadence=cadence if cadence is not None else t_end / 100.0,
        dt=dt,
        penalty=penalty,
        checks=checks,
        probe=probe,
        output=str(doc.get("output", name + "_out")),
        faults=faults,
        expect=dict(doc.get("expect", {})),
        coincidence_tol=float(doc.get("coincidence_tol", 1e-3)),
        snapshot_stride=stride,
        base_dir=base_dir,
    )
    if ob is not None:
        try:
            grid, u0, obst = cfg.build()
        except GCFError as exc:
            raise ValidationError([f"obstacle: {exc}"]) from None
        gap = float(np.min(u0 - obst.phi0))
        if gap <= 0:
            raise ValidationError(["initial: must enclose the obstacle (u0 > phi0)"])
        if cfg.deltas is None:
            cfg.deltas = [0.5 * gap]
        elif cfg.deltas[0] > gap * (1.0 + 1e-12):
            raise ValidationError([f"delta: first width must not exceed min(u0 - phi0) = {gap}"])
    elif cfg.deltas is None:
        cfg.deltas = [0.0]
    return cfg


def load_config(path: str) -> ScenarioConfig:
    with open(path) as fh:
        text = fh.read()
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)), name=stem)
