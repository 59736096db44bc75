"""End-to-end acceptance criteria, each at its stated tolerance."""

import filecmp
import os
import time

import numpy as np
import pytest

from gcf import cli
from gcf import diagnostics as dg
from gcf.config import load_config
from gcf.driver import run_scenario
from gcf.flow import continuation, run, sphere_radius
from gcf.sphere import build_grid, codazzi_residual, curvatures, second_fundamental_form

from conftest import contact_setup, record
from test_sphere import ellipsoid_oracle

CONTACT_SCHEDULE = (0.1, 0.05, 0.025, 0.0125)
T_CONTACT = 1.805


def fixture(name):
    return os.path.join(cli.fixture_dir(), name + ".json")


def sphere_error(n, res, alpha, t_end, cadence):
    g = build_grid(n, res)
    start = time.perf_counter()
    tr = run(np.ones(g.shape), g, None, alpha, None, t_end, cadence)
    elapsed = time.perf_counter() - start
    R = sphere_radius(1.0, t_end, n, alpha)
    return tr, float(np.max(np.abs(tr.final - R))), elapsed


@pytest.fixture(scope="module")
def sphere2():
    return sphere_error(2, (32, 64), 1.0, 0.2916, 0.02916)


@pytest.fixture(scope="module")
def contact():
    grid, u0, ob = contact_setup(256)
    cont = continuation(u0, grid, ob, 1.0, CONTACT_SCHEDULE, T_CONTACT, T_CONTACT / 100)
    bounds = dg.ledger(u0, grid, ob, 1.0, T_CONTACT)
    return cont, bounds


@pytest.fixture(scope="module")
def suite_runs(tmp_path_factory):
    """The shipped fixture suite run twice into separate directories."""
    out = []
    for k in range(2):
        root = tmp_path_factory.mktemp(f"suite{k}")
        codes = {}
        for path in cli.fixture_paths():
            name = os.path.splitext(os.path.basename(path))[0]
            codes[name] = cli.cmd_run(path, str(root / name))
        out.append((root, codes))
    return out


def test_criterion_01_circle_exactness():
    _, err, elapsed = sphere_error(1, 256, 1.0, 0.375, 0.0375)
    ok = err <= 1e-3 and elapsed < 5.0
    assert record(1, ok, f"n=1 sphere error {err:.2e} <= 1e-3, {elapsed:.2f}s < 5s")


def test_criterion_02_sphere_exactness(sphere2):
    _, err, elapsed = sphere2
    ok = err <= 5e-3 and elapsed < 60.0
    assert record(2, ok, f"n=2 sphere error {err:.2e} <= 5e-3, {elapsed:.1f}s < 60s")


def test_criterion_03_fractional_power():
    _, err, elapsed = sphere_error(1, 256, 0.5, 0.375, 0.0375)
    assert record(3, err <= 1e-3, f"alpha=1/2 circle error {err:.2e} <= 1e-3 ({elapsed:.2f}s)")


def test_criterion_04_penalty_bounds(contact):
    cont, _ = contact
    reps = [dg.check_penalty_bounds(tr) for tr in cont.trajectories]
    margin = min(r.margin for r in reps)
    gap = float(np.min(cont.min_gaps))
    ok = all(r.passed for r in reps) and gap > 0
    assert record(4, ok, f"-C0-1e-9 <= beta <= 0 (margin {margin:.2e}), min gap {gap:.2e} > 0")


def test_criterion_05_monotone_speed_and_gauss_floor(contact):
    cont, bounds = contact
    mono = [dg.check_speed_monotone(tr) for tr in cont.trajectories]
    gauss = [dg.check_gauss_bounds(tr, bounds) for tr in cont.trajectories]
    kmin = min(r.constants["min_K"] for r in gauss)
    ok = all(r.passed for r in mono + gauss) and kmin >= 0.95 * bounds.c_T
    assert record(5, ok, f"d_t(u-phi) <= 1e-8 dt (margin {min(r.margin for r in mono):.2e}), "
                         f"min K {kmin:.4f} >= 0.95 c_T = {0.95 * bounds.c_T:.4f}")


def test_criterion_06_speed_upper_bounds(contact):
    cont, bounds = contact
    reps = [dg.check_speed_upper(tr, bounds) for tr in cont.trajectories]
    worst = min(reps, key=lambda r: r.margin)
    ok = all(r.passed for r in reps)
    assert record(6, ok, f"speed {worst.constants['max_speed']:.3f} <= C = {bounds.C:.1f}, "
                         f"K^a {worst.constants['max_K_alpha']:.3f} <= C+C0, interior-max test "
                         f"margin {worst.margin:.3f}")


def test_criterion_07_coincidence_time(contact):
    cont, _ = contact
    r = dg.check_coincidence(cont.trajectories[-1], 1e-3)
    assert record(7, r.passed, f"coincidence at t={r.time} <= T* = {r.constants['T_star']:.4f}")


def test_criterion_08_continuation(contact):
    cont, _ = contact
    r = dg.check_continuation(cont)
    d = ", ".join(f"{x:.4f}" for x in cont.distances)
    assert record(8, r.passed, f"distances [{d}] decreasing, residual {cont.residuals[-1]:.4f} "
                               f"<= {0.5 * cont.residuals[0]:.4f}")


def test_criterion_09_geometry_order():
    errs = []
    for res in [(16, 32), (32, 64)]:
        g = build_grid(2, res)
        u, K = ellipsoid_oracle(g, 1.5, 1.0, 0.8)
        errs.append(np.max(np.abs(curvatures(second_fundamental_form(u, g), g).K - K)))
    order = float(np.log2(errs[0] / errs[1]))
    assert record(9, order >= 1.8, f"K error order {order:.2f} >= 1.8")


def test_criterion_10_codazzi():
    res = []
    for r in [(16, 32), (32, 64)]:
        g = build_grid(2, r)
        th, ps = g.theta[:, None], g.psi[None, :]
        res.append(codazzi_residual(1 + 0.1 * np.cos(th) ** 2
                                    + 0.05 * np.sin(th) ** 2 * np.cos(2 * ps), g))
    factor = res[0] / res[1]
    assert record(10, factor >= 3.0, f"Codazzi residual drops by {factor:.2f} >= 3")


def test_criterion_11_euler_formula(sphere2):
    tr, _, _ = sphere2
    r = dg.check_euler_formula(tr)
    assert record(11, r.passed, f"Euler bound at all {tr.snapshots[0].size} nodes x "
                                f"{len(tr.times)} snapshots (margin {r.margin:.1e})")


def test_criterion_12_evolution_residual():
    C = dg.calibrate_residual_constant(1, 1.0, (32, 64))
    vals, ok = [], True
    for N, div in [(64, 1), (128, 4)]:
        g = build_grid(1, N)
        dt = 0.1 * (2 * np.pi / 64) ** 2 / div
        k = int(round(0.05 / dt))
        tr = run(np.ones(N), g, None, 1.0, None, k * dt, dt, dt=dt)
        r = dg.check_evolution_residual(tr, C)
        ok = ok and r.passed
        vals.append(r.constants["max_residual"])
    factor = vals[0] / vals[1]
    assert record(12, ok and factor >= 3.0, f"residual {vals[0]:.2e} -> {vals[1]:.2e}, "
                                            f"factor {factor:.2f} >= 3")


def test_criterion_13_free_boundary():
    start = time.perf_counter()
    res = run_scenario(load_config(fixture("free_boundary")), None)
    elapsed = time.perf_counter() - start
    by_id = {c.id: c for c in res.checks}
    parts = [by_id[k] for k in ("fb_growth", "fb_nondegeneracy", "fb_speed_continuity",
                                "fb_lipschitz")]
    npts = len(by_id["fb_nondegeneracy"].constants["points"])
    ok = all(c.passed for c in parts) and npts == 5 and elapsed < 120.0
    lip = by_id["fb_lipschitz"].constants["lipschitz"]
    sc = by_id["fb_speed_continuity"].constants["max_speed"]
    assert record(13, ok, f"growth ok, non-degeneracy min {by_id['fb_nondegeneracy'].margin:.2e} "
                          f"at {npts} points, speed {[round(float(x), 3) for x in sc]}, Lipschitz "
                          f"{[round(float(x), 3) for x in lip]}, {elapsed:.1f}s < 120s")


def test_criterion_14_negative_controls(suite_runs):
    _, codes = suite_runs[0]
    neg = {k: v for k, v in codes.items() if k.startswith("neg_")}
    pos = {k: v for k, v in codes.items() if not k.startswith("neg_")}
    ok = len(neg) >= 8 and all(v == 2 for v in neg.values()) and all(v == 0 for v in pos.values())
    assert record(14, ok, f"{len(neg)} corrupted fixtures exit 2, {len(pos)} scenarios exit 0")


def _tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root)
                  for d, _, files in os.walk(root) for f in files)


def test_criterion_15_determinism(suite_runs):
    (a, _), (b, _) = suite_runs
    files_a, files_b = _tree(a), _tree(b)
    same = files_a == files_b and all(
        filecmp.cmp(a / f, b / f, shallow=False) for f in files_a)
    assert record(15, same, f"{len(files_a)} output files byte-identical across two suite runs")
