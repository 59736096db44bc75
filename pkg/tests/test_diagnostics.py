import copy
import json
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcf import diagnostics as dg
from gcf.errors import DegenerateObstacle, InvalidParameter
from gcf.flow import run
from gcf.obstacle import Obstacle
from gcf.sphere import build_grid

from conftest import contact_setup


@pytest.fixture(scope="module")
def bounds(contact_parts):
    grid, u0, ob = contact_parts
    return dg.ledger(u0, grid, ob, 1.0, 0.6)


def test_ledger_closed_form(contact_parts):
    grid, u0, ob = contact_parts
    T = 1.805
    b = dg.ledger(u0, grid, ob, 1.0, T)
    c_T = 0.9 * 2.0 * (4.0 / 9.0) * np.exp(-2.0 * T)
    assert b.c_T == pytest.approx(c_T)
    assert b.rho_0 == pytest.approx(0.25)
    # max(K0, (n a + 1)/(n a rho_0)) / rho_0 with K0 = 1
    assert b.C_1 == pytest.approx(8.0 / 0.25)
    assert b.C == pytest.approx(32.0)
    assert b.C_0 == pytest.approx(2.0)
    assert b.K_upper == pytest.approx(34.0)
    assert b.chi == pytest.approx(1.0 / c_T)


@settings(max_examples=25)
@given(T1=st.floats(0.0, 3.0), T2=st.floats(0.0, 3.0), alpha=st.sampled_from([0.5, 1.0, 2.0]))
def test_ledger_monotone_in_horizon(contact_parts, T1, T2, alpha):
    grid, u0, ob = contact_parts
    lo, hi = sorted((T1, T2))
    a, b = dg.ledger(u0, grid, ob, alpha, lo), dg.ledger(u0, grid, ob, alpha, hi)
    assert b.c_T <= a.c_T and b.chi >= a.chi
    assert a.C == b.C and a.K_upper == b.K_upper


def test_ledger_rejects(contact_parts):
    grid, u0, ob = contact_parts
    with pytest.raises(InvalidParameter):
        dg.ledger(u0, grid, ob, 1.0, -1.0)
    bad = Obstacle("interpolating", grid, ob.phi0, np.zeros(grid.shape))
    with pytest.raises(DegenerateObstacle):
        dg.ledger(u0, grid, bad, 1.0, 1.0)


def test_all_bounds_hold_on_contact_run(contact_traj, bounds):
    reps = [
        dg.check_penalty_bounds(contact_traj),
        dg.check_speed_monotone(contact_traj),
        dg.check_gauss_bounds(contact_traj, bounds),
        dg.check_speed_upper(contact_traj, bounds),
        dg.check_principal_bounds(contact_traj, bounds),
        dg.check_euler_formula(contact_traj),
    ]
    for r in reps:
        assert r.passed, (r.id, r.margin, r.constants)
    d = reps[0].to_dict()
    assert set(d) == {"id", "pass", "margin", "node", "time", "constants"}
    json.loads(dg.reports_to_json(reps))


def _corrupt(traj):
    return copy.deepcopy(traj)


def test_penalty_check_catches_injected_value(contact_traj):
    tr = _corrupt(contact_traj)
    tr.steps["min_beta"][5] = -2.0 * tr.penalty.c0
    r = dg.check_penalty_bounds(tr)
    assert not r.passed and r.margin == pytest.approx(-tr.penalty.c0)


def test_monotone_check_catches_reversed_time(contact_traj):
    tr = _corrupt(contact_traj)
    tr.snapshots = tr.snapshots[::-1].copy()
    assert not dg.check_speed_monotone(tr).passed


def test_gauss_and_principal_checks_catch_flattening(contact_traj, bounds):
    tr = _corrupt(contact_traj)
    tr.snapshots[-1] *= 100.0
    assert not dg.check_gauss_bounds(tr, bounds).passed
    assert not dg.check_principal_bounds(tr, bounds).passed


def test_speed_check_catches_injected_speed(contact_traj, bounds):
    tr = _corrupt(contact_traj)
    tr.steps["max_speed"][3] = 2.0 * bounds.C
    r = dg.check_speed_upper(tr, bounds)
    assert not r.passed and r.margin == pytest.approx(-1.0)


def test_euler_check_on_states(contact_traj):
    st0 = contact_traj.state(len(contact_traj.times) - 1)
    assert dg.check_euler_formula(st0).passed
    bad = replace(st0, lam_min=2.0 * st0.lam_min)
    r = dg.check_euler_formula(bad)
    assert not r.passed and r.node is not None


def test_euler_formula_on_ellipse_is_tight_somewhere():
    # on an ellipse the theta direction is principal, so equality is attained
    g = build_grid(1, 64)
    from gcf.sphere import support_ellipsoid
    tr = run(support_ellipsoid(g, [1.2, 1.0]), g, None, 1.0, None, 0.01, 0.005)
    r = dg.check_euler_formula(tr)
    assert r.passed and r.margin == pytest.approx(1e-8, abs=1e-9)


def test_evolution_residual_converges_and_catches_bump():
    C = dg.calibrate_residual_constant(1, 1.0, (32, 64), t_end=0.02)
    out = []
    for N in (32, 64):
        g = build_grid(1, N)
        dt = 0.1 * g.h_theta**2
        k = int(round(0.02 / dt))
        tr = run(np.ones(N), g, None, 1.0, None, k * dt, dt, dt=dt)
        r = dg.check_evolution_residual(tr, C)
        assert r.passed
        out.append(r.constants["max_residual"])
    assert out[0] / out[1] >= 3.0
    tr.snapshots[len(tr.times) // 2][0] += 1e-3
    assert not dg.check_evolution_residual(tr, C).passed


def test_evolution_residual_needs_neighbours(contact_traj):
    with pytest.raises(InvalidParameter):
        dg.evolution_residual(contact_traj, 0)


def test_sphere_exactness_check():
    g = build_grid(1, 128)
    tr = run(np.ones(128), g, None, 1.0, None, 0.2, 0.05)
    assert dg.check_sphere_exactness(tr, 1.0, 1e-3).passed
    assert not dg.check_sphere_exactness(tr, 1.01, 1e-3).passed


def test_coincidence_check_fails_without_contact(contact_traj):
    r = dg.check_coincidence(contact_traj)
    assert not r.passed and r.constants["T_star"] == pytest.approx(1.805)


def _cont(distances, gaps, residuals, deltas=(0.1, 0.05, 0.025)):
    return SimpleNamespace(
        deltas=np.array(deltas), distances=np.array(distances),
        final_distances=np.array(distances), residuals=np.array(residuals),
        min_gaps=np.array(gaps),
    )


def test_continuation_check_logic():
    assert dg.check_continuation(_cont([0.02, 0.01], [0.01] * 3, [0.1, 0.07, 0.04])).passed
    assert not dg.check_continuation(_cont([0.01, 0.02], [0.01] * 3, [0.1, 0.07, 0.04])).passed
    assert not dg.check_continuation(_cont([0.02, 0.01], [0.01, -0.3, 0.0], [0.1, 0.07, 0.04])).passed
    assert not dg.check_continuation(_cont([0.02, 0.01], [0.01] * 3, [0.1, 0.07, 0.06])).passed
