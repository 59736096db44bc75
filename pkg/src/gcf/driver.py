"""Scenario runner behind the ``gcf`` command line.

:func:`run_scenario` integrates a configured flow, applies any injected
faults, runs the requested checks and writes

* ``trajectory.csv``: per output interval, extremes of the per-step statistics;
* ``report.json``: ``{"scenario", "status", "checks": [...], "metrics": {...}}``;
* ``snap_<index>.csv``: embedded point clouds of the snapshots;
* ``patch.csv``: the sampled free-boundary patch, when probed.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as dg
from . import free_boundary as fb
from .config import ScenarioConfig
from .errors import ConfigError, DegenerateObstacle, GCFError, ObstacleInvalid
from .flow import coincidence_bound, continuation, run
from .obstacle import default_times, validate
from .sphere import write_point_cloud

EXIT_OK = 0
EXIT_CHECK_FAILED = 2
EXIT_SOLVER_ERROR = 3
EXIT_CONFIG_ERROR = 4

TRAJECTORY_COLUMNS = (
    "t", "min_K", "max_K", "min_gap", "min_beta", "min_lambda", "max_lambda", "max_speed",
)
BOUND_CHECKS = ("penalty_bounds", "speed_monotone", "gauss_bounds", "speed_upper",
                "principal_bounds")
FB_CHECK_IDS = ("fb_growth", "fb_nondegeneracy", "fb_speed_continuity", "fb_lipschitz")


@dataclass
class ScenarioResult:
    status: int
    checks: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self, name: str) -> dict:
        return {
            "scenario": name,
            "status": self.status,
            "message": self.message,
            "checks": [c.to_dict() for c in self.checks],
            "metrics": self.metrics,
        }


# ------------------------------------------------------------------ output


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def write_report(path, name: str, result: ScenarioResult) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(result.to_dict(name)), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def trajectory_rows(traj) -> list:
    """One row per snapshot; later rows aggregate the steps since the previous one."""
    steps = traj.steps
    t_steps = steps["t"]
    rows = []
    st = traj.state(0)
    gap0 = np.inf
    beta0 = 0.0
    if traj.obstacle is not None:
        gap0 = float(np.min(st.u - st.obstacle_values[0]))
        beta0 = float(np.min(st.beta()))
    rows.append([0.0, st.K.min(), st.K.max(), gap0, beta0, st.lam_min.min(), st.lam_max.max(),
                 float(np.max(st.speed()))])
    lo = 0
    for m in range(1, len(traj.times)):
        hi = int(np.searchsorted(t_steps, traj.times[m], side="right"))
        sl = slice(lo, max(hi, lo + 1))
        rows.append([
            traj.times[m], steps["min_K"][sl].min(), steps["max_K"][sl].max(),
            steps["min_gap"][sl].min(), steps["min_beta"][sl].min(),
            steps["min_lambda"][sl].min(), steps["max_lambda"][sl].max(),
            steps["max_speed"][sl].max(),
        ])
        lo = hi
    return rows


def write_trajectory_csv(path, traj) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in trajectory_rows(traj):
            w.writerow([_fmt(x) for x in row])


def write_snapshots(out_dir, traj, stride: int) -> list:
    if stride <= 0:
        return []
    idx = list(range(0, len(traj.times), stride))
    if idx[-1] != len(traj.times) - 1:
        idx.append(len(traj.times) - 1)
    paths = []
    for m in idx:
        p = os.path.join(out_dir, f"snap_{m:05d}.csv")
        write_point_cloud(p, traj.snapshots[m], traj.grid)
        paths.append(os.path.basename(p))
    return paths


# ------------------------------------------------------------------ checks


def resolve_checks(cfg: ScenarioConfig, obstacle, u0, alpha) -> list:
    """Concrete check list; ``"all"`` means every check that applies."""
    if cfg.checks != "all":
        return list(cfg.checks)
    out = []
    if obstacle is None:
        if cfg.initial.get("kind") == "constant":
            out.append("sphere_exactness")
        out.append("euler_formula")
    else:
        out += list(BOUND_CHECKS) + ["euler_formula"]
        T_star, _ = coincidence_bound(u0, obstacle, alpha)
        if cfg.t_end >= T_star * (1.0 - 1e-12):
            out.append("coincidence_time")
        if len(cfg.deltas) > 1:
            out.append("continuation")
    if cfg.probe is not None:
        out.append("free_boundary")
    return out


def _faults(cfg, kind):
    return [f for f in cfg.faults if f["kind"] == kind]


def apply_trajectory_faults(cfg: ScenarioConfig, traj, bounds):
    """Return a corrupted copy of ``traj`` (or ``traj`` itself if no fault applies)."""
    kinds = {f["kind"] for f in cfg.faults} - {"corrupt_curvature", "cap_patch"}
    if not kinds:
        return traj
    traj = copy.deepcopy(traj)
    steps = traj.steps
    mid_step = len(steps["t"]) // 2
    for f in cfg.faults:
        k = f["kind"]
        m = int(f.get("index", len(traj.times) // 2))
        if k == "inject_beta":
            C0 = traj.penalty.c0 if traj.penalty is not None else 1.0
            steps["min_beta"][mid_step] = f.get("value", -2.0 * C0)
        elif k == "inject_speed":
            C = bounds.C if bounds is not None else 1.0
            steps["max_speed"][mid_step] = f.get("value", 2.0 * C)
        elif k == "reverse_time":
            traj.snapshots = traj.snapshots[::-1].copy()
            traj.speeds = traj.speeds[::-1].copy()
        elif k == "flatten_snapshot":
            m = int(f.get("index", -1))
            traj.snapshots[m] = traj.snapshots[m] * float(f.get("factor", 100.0))
        elif k == "corrupt_snapshot":
            node = int(f.get("node", 0))
            traj.snapshots[m].flat[node] += float(f.get("amplitude", 1e-3))
    return traj


def _fb_checks(cfg, traj, obstacle, out_dir, metrics):
    p = cfg.probe
    patch = fb.extract_patch(traj, obstacle, p.z_c, p.r_patch, tuple(p.window), p.samples,
                             tol_c=p.tol_c)
    for f in _faults(cfg, "cap_patch"):
        patch = fb.cap_patch(patch, float(f.get("cap", 1e-4)))
    report = fb.coincidence_set(patch)
    direction = np.atleast_1d(np.asarray(p.side, dtype=float))
    checks = []

    # the coincidence set only grows
    grow = report.mask[:-1] & ~report.mask[1:]
    lost = int(grow.sum())
    first = np.argwhere(grow)
    checks.append(dg.CheckReport(
        "fb_growth", lost == 0, -float(lost) if lost else 0.0,
        None, float(patch.times[first[0][0] + 1]) if lost else None,
        {"lost_cells": lost, "slices": len(patch.times)},
    ))

    points = [(fb.boundary_point(patch, t, direction), float(t)) for t in p.points]
    nd, worst, where = [], np.inf, None
    for x0, t0 in points:
        a = int(np.argmin(np.abs(patch.times - t0)))
        X0 = (x0, float(patch.times[a]))
        ms = fb.nondegeneracy_probe(patch, report, X0, p.radii)
        nd.append({"x0": x0.tolist(), "t0": X0[1], "margins": ms})
        if min(ms) < worst:
            worst, where = min(ms), X0
    checks.append(dg.CheckReport(
        "fb_nondegeneracy", worst >= 0, float(worst),
        None if where is None else where[0].tolist(), None if where is None else where[1],
        {"theta": patch.theta, "c": patch.c, "radii": list(p.radii), "points": nd},
    ))

    sc = fb.speed_continuity(patch, report)
    dec = [a - b for a, b in zip(sc, sc[1:])]
    m_sc = min(dec) if dec else np.inf
    checks.append(dg.CheckReport(
        "fb_speed_continuity", bool(np.isfinite(sc).all()) and m_sc > 0, float(m_sc), None, None,
        {"d_cells": [4, 2, 1], "max_speed": sc},
    ))

    mid = points[len(points) // 2]
    a = int(np.argmin(np.abs(patch.times - mid[1])))
    X0 = (mid[0], float(patch.times[a]))
    zooms = [fb.rescale(patch, X0, r) for r in p.zoom]
    try:
        lip = fb.lipschitz_estimate(zooms)
    except GCFError:
        lip = fb.lipschitz_estimate(zooms, e1=direction)
    dl = [a_ - b_ for a_, b_ in zip(lip, lip[1:])]
    m_l = min(dl) if dl else np.inf
    checks.append(dg.CheckReport(
        "fb_lipschitz", m_l > 0, float(m_l), X0[0].tolist(), X0[1],
        {"zoom_radii": list(p.zoom), "lipschitz": lip},
    ))

    extra = {"tol_c": patch.tol_c, "theta": patch.theta, "c": patch.c,
             "out_of_hypothesis": patch.out_of_hypothesis(),
             "coincidence_fraction": report.to_dict()["coincidence_fraction"]}
    try:
        extra["thickness"] = fb.thickness(patch, report, X0[0], X0[1], p.zoom[-1])
    except GCFError as exc:
        extra["thickness"] = str(exc)
    try:
        mono = fb.monotonicity_probe(zooms[-1], p.kappa)
        extra["monotonicity_min_margin"] = mono["min_margin"]
        extra["monotonicity"] = mono["levels"]
    except GCFError as exc:
        extra["monotonicity"] = str(exc)
    try:
        extra["blowup"] = fb.blowup_fit(fb.rescale(zooms[0], (np.zeros(patch.n), 0.0), 0.5))
    except GCFError as exc:
        extra["blowup"] = str(exc)
    metrics["free_boundary"] = extra
    if out_dir is not None:
        fb.write_patch_csv(os.path.join(out_dir, "patch.csv"), patch)
    return checks


def run_checks(cfg, names, trajs, cont, obstacle, u0, grid, out_dir, metrics):
    """Evaluate every named check; bound checks run on each width's trajectory."""
    reports = []
    final = trajs[-1]
    bounds = None
    if obstacle is not None:
        try:
            bounds = dg.ledger(u0, grid, obstacle, cfg.alpha, cfg.t_end)
            metrics["ledger"] = bounds.to_dict()
        except DegenerateObstacle as exc:
            metrics["ledger"] = str(exc)
    faulty = {id(tr): apply_trajectory_faults(cfg, tr, bounds) for tr in trajs}
    for name in names:
        if name == "sphere_exactness":
            R0 = float(cfg.expect.get("R0", cfg.initial.get("radius", 1.0)))
            tol = float(cfg.expect.get("tol", 1e-3))
            reports.append(dg.check_sphere_exactness(faulty[id(final)], R0, tol))
        elif name == "euler_formula":
            for tr in trajs:
                reports.append(dg.check_euler_formula(faulty[id(tr)]))
            for f in _faults(cfg, "corrupt_curvature"):
                st = final.state(len(final.times) - 1)
                st = replace(st, lam_min=st.lam_min * float(f.get("factor", 2.0)))
                reports.append(dg.check_euler_formula(st))
        elif name == "evolution_residual":
            C_res = cfg.expect.get("C_res")
            if C_res is None:
                C_res = dg.calibrate_residual_constant(grid.n, cfg.alpha, t_end=cfg.t_end)
            reports.append(dg.check_evolution_residual(faulty[id(final)], float(C_res)))
        elif name in BOUND_CHECKS:
            if obstacle is None or (bounds is None and name != "penalty_bounds"
                                    and name != "speed_monotone"):
                reports.append(dg.CheckReport(name, False, -np.inf, None, None,
                                              {"reason": "needs an admissible obstacle"}))
                continue
            for tr in trajs:
                t = faulty[id(tr)]
                if name == "penalty_bounds":
                    r = dg.check_penalty_bounds(t)
                elif name == "speed_monotone":
                    r = dg.check_speed_monotone(t, obstacle)
                elif name == "gauss_bounds":
                    r = dg.check_gauss_bounds(t, bounds)
                elif name == "speed_upper":
                    r = dg.check_speed_upper(t, bounds)
                else:
                    r = dg.check_principal_bounds(t, bounds)
                r.constants["delta"] = tr.delta
                reports.append(r)
        elif name == "coincidence_time":
            r = dg.check_coincidence(faulty[id(final)], cfg.coincidence_tol)
            r.constants["delta"] = final.delta
            reports.append(r)
        elif name == "continuation":
            reports.append(dg.check_continuation(cont))
        elif name == "free_boundary":
            try:
                reports += _fb_checks(cfg, faulty[id(final)], obstacle, out_dir, metrics)
            except GCFError as exc:
                reports.append(dg.CheckReport("free_boundary", False, -np.inf, None, None,
                                              {"error": f"{type(exc).__name__}: {exc}"}))
    return reports


# ------------------------------------------------------------------ runner


def _integrate(cfg, grid, u0, obstacle):
    variant = cfg.penalty
    if obstacle is None:
        tr = run(u0, grid, None, cfg.alpha, None, cfg.t_end, cfg.cadence, cfg.dt, variant)
        return [tr], None
    if len(cfg.deltas) > 1:
        if cfg.dt is not None:
            trajs = [run(u0, grid, obstacle, cfg.alpha, d, cfg.t_end, cfg.cadence, cfg.dt, variant,
                         check_obstacle=(i == 0)) for i, d in enumerate(cfg.deltas)]
            return trajs, None
        cont = continuation(u0, grid, obstacle, cfg.alpha, cfg.deltas, cfg.t_end, cfg.cadence,
                            variant)
        return cont.trajectories, cont
    tr = run(u0, grid, obstacle, cfg.alpha, cfg.deltas[0], cfg.t_end, cfg.cadence, cfg.dt, variant)
    return [tr], None


def _run_metrics(cfg, trajs, cont, obstacle, u0):
    final = trajs[-1]
    m = {
        "n": final.grid.n,
        "shape": list(final.grid.shape),
        "alpha": cfg.alpha,
        "t_end": float(final.times[-1]),
        "snapshots": len(final.times),
        "steps": [int(len(tr.steps["t"])) for tr in trajs],
        "deltas": [tr.delta for tr in trajs],
        "final_min_u": float(final.final.min()),
        "final_max_u": float(final.final.max()),
    }
    if obstacle is not None:
        T_star, rho = coincidence_bound(u0, obstacle, cfg.alpha)
        m["T_star"] = T_star
        m["rho"] = rho
    if cont is not None:
        m["continuation"] = {
            "distances": cont.distances.tolist(),
            "final_distances": cont.final_distances.tolist(),
            "residuals": cont.residuals.tolist(),
            "min_gaps": cont.min_gaps.tolist(),
        }
    return m


def run_scenario(cfg: ScenarioConfig, out_dir=None, only=None) -> ScenarioResult:
    """Integrate, check and (if ``out_dir``) write outputs; never raises GCFError."""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    try:
        grid, u0, obstacle = cfg.build()
    except ConfigError as exc:
        return ScenarioResult(EXIT_CONFIG_ERROR, message=str(exc))
    except GCFError as exc:
        return ScenarioResult(EXIT_CONFIG_ERROR, message=f"{type(exc).__name__}: {exc}")
    try:
        trajs, cont = _integrate(cfg, grid, u0, obstacle)
    except ObstacleInvalid as exc:
        return ScenarioResult(EXIT_CONFIG_ERROR, message=f"ObstacleInvalid: {exc}")
    except GCFError as exc:
        return ScenarioResult(EXIT_SOLVER_ERROR, message=f"{type(exc).__name__}: {exc}")
    metrics = _run_metrics(cfg, trajs, cont, obstacle, u0)
    names = only if only is not None else resolve_checks(cfg, obstacle, u0, cfg.alpha)
    try:
        reports = run_checks(cfg, names, trajs, cont, obstacle, u0, grid, out_dir, metrics)
    except GCFError as exc:
        return ScenarioResult(EXIT_SOLVER_ERROR, metrics=metrics,
                              message=f"{type(exc).__name__} during checks: {exc}")
    metrics["checks_run"] = names
    if out_dir is not None:
        write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), trajs[-1])
        metrics["snapshot_files"] = write_snapshots(out_dir, trajs[-1], cfg.snapshot_stride)
    ok = all(r.passed for r in reports)
    return ScenarioResult(EXIT_OK if ok else EXIT_CHECK_FAILED, reports, metrics,
                          "all checks passed" if ok else "check failure")


def validate_obstacle(cfg: ScenarioConfig):
    """``(exit_code, report_dict)`` for the configured obstacle."""
    try:
        grid, u0, obstacle = cfg.build()
    except GCFError as exc:
        return EXIT_CONFIG_ERROR, {"error": f"{type(exc).__name__}: {exc}"}
    if obstacle is None:
        return EXIT_CONFIG_ERROR, {"error": "scenario has no obstacle"}
    rep = validate(obstacle, grid, u0, cfg.alpha, default_times(obstacle, cfg.t_end))
    d = rep.to_dict()
    return (EXIT_OK if rep.passed else EXIT_CHECK_FAILED), d

