import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcf._kernels import beta_profile, penalized_update
from gcf.errors import InvalidParameter
from gcf.penalty import beta, make_penalty

finite = st.floats(-5.0, 5.0, allow_nan=False)
widths = st.floats(1e-3, 1.0)
depths = st.floats(1e-2, 50.0)
variants = st.sampled_from(["c11", "smooth"])


@given(x=finite, delta=widths, c0=depths, variant=variants)
def test_penalty_range_and_support(x, delta, c0, variant):
    p = make_penalty(delta, c0, variant)
    v = float(p(x))
    assert v <= 0.0
    if x >= delta:
        assert v == 0.0
    if x >= 0:
        assert v >= -c0 * (1 + 1e-12)


@given(a=finite, b=finite, variant=variants)
def test_profile_nondecreasing(a, b, variant):
    lo, hi = min(a, b), max(a, b)
    assert beta(lo, variant)[0] <= beta(hi, variant)[0] + 1e-15


@given(a=finite, b=finite, s=st.floats(0.0, 1.0), variant=variants)
def test_profile_concave(a, b, s, variant):
    mid = s * a + (1 - s) * b
    lhs = beta(mid, variant)[0]
    rhs = s * beta(a, variant)[0] + (1 - s) * beta(b, variant)[0]
    assert lhs >= rhs - 1e-12


@pytest.mark.parametrize("variant", ["c11", "smooth"])
def test_derivative_matches_finite_difference(variant):
    x = np.linspace(-0.5, 1.5, 401)
    x = x[np.abs(x) > 1e-3]
    x = x[np.abs(x - 1) > 1e-3]
    e = 1e-6
    fd = (beta(x + e, variant)[0] - beta(x - e, variant)[0]) / (2 * e)
    assert np.allclose(beta(x, variant)[1], fd, atol=1e-6)


def test_smooth_bridge_is_c2_at_both_ends():
    # second differences match across 0 and 1
    e = 1e-4
    for x0, left, right in [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]:
        d2l = (beta(x0 - 2 * e, "smooth")[1] - beta(x0 - e, "smooth")[1]) / -e
        d2r = (beta(x0 + 2 * e, "smooth")[1] - beta(x0 + e, "smooth")[1]) / e
        assert abs(d2l - d2r) < 1e-2


def test_c11_bridge_has_curvature_jump():
    e = 1e-4
    d2l = (beta(-e, "c11")[1] - beta(-2 * e, "c11")[1]) / e
    d2r = (beta(2 * e, "c11")[1] - beta(e, "c11")[1]) / e
    assert d2l == pytest.approx(0.0, abs=1e-8)
    assert d2r == pytest.approx(-2.0, rel=1e-6)


@given(x=finite, variant=variants)
def test_kernel_profile_matches_vectorised(x, variant):
    code = 0 if variant == "c11" else 1
    v, d = beta_profile(x, code)
    vv, dd = beta(x, variant)
    assert v == pytest.approx(float(vv), abs=1e-14)
    assert d == pytest.approx(float(dd), abs=1e-14)


@settings(max_examples=50)
@given(base=st.lists(st.floats(-1.0, 2.0), min_size=1, max_size=20), dt=st.floats(1e-5, 1.0),
       delta=widths, c0=depths, variant=variants)
def test_implicit_update_solves_scalar_equation(base, dt, delta, c0, variant):
    b = np.array(base)
    phi = np.zeros_like(b)
    out = np.empty_like(b)
    bo = np.empty_like(b)
    code = 0 if variant == "c11" else 1
    fails = penalized_update(b, phi, dt, delta, c0, code, 1e-12 * max(1, c0), out, bo)
    assert fails == 0
    p = make_penalty(delta, c0, variant)
    resid = out + dt * p(out - phi) - b
    assert np.max(np.abs(resid)) <= 1e-9 * max(1.0, c0)
    # the penalty only pushes outward
    assert np.all(out >= b - 1e-15)
    assert np.allclose(bo, p(out - phi))


@pytest.mark.parametrize("args", [(0.0, 1.0), (-1.0, 1.0), (0.1, 0.0), (np.inf, 1.0)])
def test_make_penalty_rejects(args):
    with pytest.raises(InvalidParameter):
        make_penalty(*args)
    with pytest.raises(InvalidParameter):
        make_penalty(0.1, 1.0, "quintic")
