import numpy as np
import pytest

from gcf import obstacle as obs
from gcf.errors import (
    GridMismatch, InvalidProfile, NegativeTime, NotPositive, ObstacleInvalid, OrderingViolated,
)
from gcf.sphere import build_grid, support_ball, support_ellipsoid


@pytest.fixture
def grid():
    return build_grid(1, 64)


def test_homothetic_values(grid):
    ob = obs.make_homothetic(np.full(64, 0.9), grid, 5 / 9, 2.0)
    phi, dphi = ob.evaluate(0.0)
    assert np.allclose(phi, 0.9) and np.allclose(dphi, -0.9 * 2 * (4 / 9))
    phi, dphi = ob.evaluate(50.0)
    assert np.allclose(phi, 0.5) and np.allclose(dphi, 0.0, atol=1e-30)
    t = 0.3
    e = 1e-6
    fd = (ob.evaluate(t + e)[0] - ob.evaluate(t - e)[0]) / (2 * e)
    assert np.allclose(ob.evaluate(t)[1], fd, atol=1e-8)
    assert ob.c0(1.0) == pytest.approx(2.0)
    assert ob.c0(0.5) == pytest.approx(np.sqrt(2.0))


def test_interpolating_values(grid):
    p0 = support_ellipsoid(grid, [0.9, 0.8])
    pi = support_ball(grid, 0.4)
    ob = obs.make_interpolating(p0, pi, grid)
    phi, dphi = ob.evaluate(np.log(2.0))
    assert np.allclose(phi, 0.5 * (p0 + pi))
    assert np.allclose(dphi, -0.5 * (p0 - pi))
    assert obs.evaluate(ob, grid, 0.0)[0] == pytest.approx(p0)


def test_constructor_errors(grid):
    one = np.ones(64)
    with pytest.raises(OrderingViolated):
        obs.make_interpolating(0.5 * one, one, grid)
    with pytest.raises(NotPositive):
        obs.make_interpolating(one, 0 * one, grid)
    with pytest.raises(InvalidProfile):
        obs.make_homothetic(one, grid, 1.2, 1.0)
    with pytest.raises(InvalidProfile):
        obs.make_homothetic(one, grid, 0.5, -1.0)
    with pytest.raises(NotPositive):
        obs.make_homothetic(-one, grid, 0.5, 1.0)
    ob = obs.make_homothetic(one, grid, 0.5, 1.0)
    with pytest.raises(NegativeTime):
        ob.evaluate(-1.0)
    with pytest.raises(GridMismatch):
        obs.evaluate(ob, build_grid(1, 32), 0.0)


def test_speed_floor_is_attained_at_final_time(grid):
    ob = obs.make_homothetic(np.full(64, 0.9), grid, 5 / 9, 2.0)
    T = 1.805
    assert ob.speed_floor(T) == pytest.approx(0.8 * np.exp(-2 * T))


def test_contact_obstacle_is_admissible(grid):
    ob = obs.make_homothetic(np.full(64, 0.9), grid, 5 / 9, 2.0)
    rep = obs.validate(ob, grid, np.ones(64), 1.0, obs.default_times(ob, 1.805))
    assert rep.passed, rep.failures()
    assert rep.enclosure == pytest.approx(0.1)
    d = rep.to_dict()
    assert d["pass"] is True and set(obs.ObstacleReport.MARGINS) <= set(d)


def test_fast_obstacle_violates_compatibility(grid):
    # the obstacle initially shrinks faster than the flow can follow
    ob = obs.make_homothetic(np.full(64, 0.9), grid, 0.1, 5.0)
    rep = obs.validate(ob, grid, np.ones(64), 1.0)
    assert not rep.passed
    assert "compat_initial" in rep.failures()
    with pytest.raises(ObstacleInvalid):
        obs.require_valid(ob, grid, np.ones(64), 1.0)


def test_enclosure_violation(grid):
    ob = obs.make_homothetic(np.full(64, 0.9), grid, 5 / 9, 2.0)
    rep = obs.validate(ob, grid, np.full(64, 0.85), 1.0)
    assert rep.enclosure < 0 and not rep.passed
