"""Fused numba loops for the time-stepping hot path.

These compute the same stencils as :mod:`gcf.sphere` and
:mod:`gcf.penalty` node by node without temporaries.  The test-suite checks
them against the vectorised reference implementations.
"""

import math

import numba
import numpy as np

C11 = 0
SMOOTH = 1


@numba.njit(cache=True)
def curv1(u, h, K, lmin, lmax):
    """Curvature on S^1. Returns the first non-convex node or -1."""
    N = u.shape[0]
    ih2 = 1.0 / (h * h)
    for k in range(N):
        r = (u[(k + 1) % N] - 2.0 * u[k] + u[k - 1]) * ih2 + u[k]
        if not r > 0.0:
            return k
        K[k] = 1.0 / r
        lmin[k] = K[k]
        lmax[k] = K[k]
    return -1


@numba.njit(cache=True)
def curv2(u, ht, hp, s, c, K, lmin, lmax):
    """Curvature on S^2. Returns the first non-convex flat index or -1."""
    nt, npsi = u.shape
    half = npsi // 2
    iht2 = 1.0 / (ht * ht)
    ihp2 = 1.0 / (hp * hp)
    i2t = 0.5 / ht
    i2p = 0.5 / hp
    for i in range(nt):
        si = s[i]
        ci = c[i]
        for j in range(npsi):
            jp = (j + 1) % npsi
            jm = (j - 1) % npsi
            # neighbours in theta, reading across the pole when needed
            if i == 0:
                ja = (j + half) % npsi
                up_ = u[0, ja]
                upp = u[0, (jp + half) % npsi]
                upm = u[0, (jm + half) % npsi]
            else:
                up_ = u[i - 1, j]
                upp = u[i - 1, jp]
                upm = u[i - 1, jm]
            if i == nt - 1:
                ja = (j + half) % npsi
                dn = u[i, ja]
                dnp = u[i, (jp + half) % npsi]
                dnm = u[i, (jm + half) % npsi]
            else:
                dn = u[i + 1, j]
                dnp = u[i + 1, jp]
                dnm = u[i + 1, jm]
            u0 = u[i, j]
            u_t = (dn - up_) * i2t
            u_tt = (dn - 2.0 * u0 + up_) * iht2
            u_p = (u[i, jp] - u[i, jm]) * i2p
            u_pp = (u[i, jp] - 2.0 * u0 + u[i, jm]) * ihp2
            u_tp = ((dnp - dnm) - (upp - upm)) * i2t * i2p
            a = u_tt + u0
            b = (u_tp - ci / si * u_p) / si
            d = (u_pp + si * ci * u_t) / (si * si) + u0
            det = a * d - b * b
            if not (det > 0.0 and a > 0.0):
                return i * npsi + j
            rb = 0.5 * (a + d) + math.sqrt(0.25 * (a - d) * (a - d) + b * b)
            K[i, j] = 1.0 / det
            lmin[i, j] = 1.0 / rb
            lmax[i, j] = rb / det
    return -1


@numba.njit(cache=True)
def beta_profile(x, variant):
    """Unscaled penalty profile and its derivative."""
    if x >= 1.0:
        return 0.0, 0.0
    if x < 0.0:
        return -1.0 + 2.0 * x, 2.0
    if variant == C11:
        return -(1.0 - x) * (1.0 - x), 2.0 * (1.0 - x)
    x3 = x * x * x
    return -1.0 + 2.0 * x - 2.0 * x3 + x3 * x, 2.0 * (1.0 - x) * (1.0 - x) * (1.0 + 2.0 * x)


@numba.njit(cache=True)
def penalized_update(base, phi, dt, delta, c0, variant, tol, out, beta_out):
    """Solve x + dt*beta_delta(x - phi) = base node by node.

    The map is increasing and concave, so Newton from ``base`` (where the
    residual is <= 0) increases monotonically to the root.  A bisection
    fallback covers the case Newton does not settle.  Returns the number
    of nodes that failed both.
    """
    flat_b = base.ravel()
    flat_p = phi.ravel()
    flat_o = out.ravel()
    flat_beta = beta_out.ravel()
    scale = c0 / delta
    failures = 0
    for k in range(flat_b.shape[0]):
        b = flat_b[k]
        p = flat_p[k]
        x = b
        ok = False
        for _ in range(100):
            bv, bd = beta_profile((x - p) / delta, variant)
            g = x + dt * c0 * bv - b
            if abs(g) <= tol:
                ok = True
                break
            x = x - g / (1.0 + dt * scale * bd)
        if not ok:
            bv, bd = beta_profile((b - p) / delta, variant)
            lo = b
            hi = b - dt * c0 * bv
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                bv, bd = beta_profile((mid - p) / delta, variant)
                g = mid + dt * c0 * bv - b
                if abs(g) <= tol:
                    ok = True
                    break
                if g < 0.0:
                    lo = mid
                else:
                    hi = mid
            x = 0.5 * (lo + hi)
            if not ok:
                bv, bd = beta_profile((x - p) / delta, variant)
                if abs(x + dt * c0 * bv - b) <= 10.0 * tol:
                    ok = True
        if not ok:
            failures += 1
        flat_o[k] = x
        bv, bd = beta_profile((x - p) / delta, variant)
        flat_beta[k] = c0 * bv
    return failures


def curvature_arrays(u, grid):
    """Run the matching curvature kernel; returns (bad_index, K, lam_min, lam_max)."""
    K = np.empty(grid.shape)
    lmin = np.empty(grid.shape)
    lmax = np.empty(grid.shape)
    if grid.n == 1:
        bad = curv1(u, grid.h_theta, K, lmin, lmax)
    else:
        bad = curv2(
            u, grid.h_theta, grid.h_psi, np.sin(grid.theta), np.cos(grid.theta), K, lmin, lmax
        )
    return int(bad), K, lmin, lmax


# obstacle family codes understood by ``advance``
NO_OBSTACLE = 0
INTERPOLATING = 1
HOMOTHETIC = 2

# columns of the per-step statistics table
STAT_COLUMNS = (
    "t",
    "dt",
    "min_K",
    "max_K",
    "min_gap",
    "min_beta",
    "min_lambda",
    "max_lambda",
    "max_speed",
    "max_gap_increase",
    "max_u_increase",
)


@numba.njit(cache=True)
def _curv_flat(u, n, nt, npsi, ht, hp, s, c, K, lmin, lmax):
    if n == 1:
        return curv1(u, ht, K, lmin, lmax)
    return curv2(
        u.reshape((nt, npsi)),
        ht,
        hp,
        s,
        c,
        K.reshape((nt, npsi)),
        lmin.reshape((nt, npsi)),
        lmax.reshape((nt, npsi)),
    )


@numba.njit(cache=True)
def _obstacle_at(family, phi0, phi_inf, rate, a_inf, t, phi, dphi):
    e = math.exp(-rate * t)
    if family == HOMOTHETIC:
        A = a_inf + (1.0 - a_inf) * e
        for k in range(phi0.shape[0]):
            phi[k] = A * phi0[k]
            dphi[k] = -rate * (1.0 - a_inf) * e * phi0[k]
    else:
        for k in range(phi0.shape[0]):
            diff = phi0[k] - phi_inf[k]
            phi[k] = phi_inf[k] + e * diff
            dphi[k] = -e * diff


@numba.njit(cache=True)
def _power(K, alpha, out):
    if alpha == 1.0:
        for k in range(K.shape[0]):
            out[k] = K[k]
    else:
        for k in range(K.shape[0]):
            out[k] = K[k] ** alpha


@numba.njit(cache=True)
def advance(
    u, t, t_target, max_steps,
    n, nt, npsi, ht, hp, s, c, spacing2, alpha,
    family, phi0, phi_inf, rate, a_inf,
    delta, c0, variant, tol, dt_cap, dt_fixed,
    stats, nodes, u_prev,
):
    """Step u (flat, modified in place) from t towards t_target.

    Stops at t_target, after ``max_steps`` steps, or on failure.  Fills
    one row of ``stats`` (see STAT_COLUMNS) and ``nodes`` (argmin of
    beta, argmax of the gap increase) per step and leaves the last
    pre-step field in ``u_prev``.

    Returns (t, steps, status, bad_node) with status 0 ok, 1 non-convex
    after a step, 2 scalar solve failure, 3 non-convex on entry.
    """
    m = u.shape[0]
    K = np.empty(m)
    lmin = np.empty(m)
    lmax = np.empty(m)
    base = np.empty(m)
    unew = np.empty(m)
    bnew = np.empty(m)
    phi = np.empty(m)
    dphi = np.empty(m)
    phi_old = np.empty(m)
    ka = np.empty(m)
    bad = _curv_flat(u, n, nt, npsi, ht, hp, s, c, K, lmin, lmax)
    if bad >= 0:
        return t, 0, 3, bad
    if family != NO_OBSTACLE:
        _obstacle_at(family, phi0, phi_inf, rate, a_inf, t, phi_old, dphi)
    _power(K, alpha, ka)
    steps = 0
    while steps < max_steps and t < t_target:
        if dt_fixed > 0.0:
            dt = dt_fixed
        else:
            dt = np.inf
            for k in range(m):
                cand = spacing2[k] / (2.0 * n * alpha * ka[k] * lmax[k])
                if cand < dt:
                    dt = cand
            dt *= 0.5
            if dt_cap < dt:
                dt = dt_cap
        rem = t_target - t
        if rem <= dt * (1.0 + 1e-9):
            dt = rem
            t_new = t_target
        else:
            t_new = t + dt
        for k in range(m):
            u_prev[k] = u[k]
            base[k] = u[k] - dt * ka[k]
        if family == NO_OBSTACLE:
            for k in range(m):
                unew[k] = base[k]
                bnew[k] = 0.0
        else:
            _obstacle_at(family, phi0, phi_inf, rate, a_inf, t_new, phi, dphi)
            fails = penalized_update(base, phi, dt, delta, c0, variant, tol, unew, bnew)
            if fails > 0:
                return t, steps, 2, -1
        bad = _curv_flat(unew, n, nt, npsi, ht, hp, s, c, K, lmin, lmax)
        if bad >= 0:
            return t, steps, 1, bad
        _power(K, alpha, ka)
        kmin = np.inf
        kmax = -np.inf
        lo = np.inf
        hi = -np.inf
        gap_min = np.inf
        beta_min = np.inf
        beta_node = 0
        speed = 0.0
        ginc = -np.inf
        ginc_node = 0
        uinc = -np.inf
        for k in range(m):
            if K[k] < kmin:
                kmin = K[k]
            if K[k] > kmax:
                kmax = K[k]
            if lmin[k] < lo:
                lo = lmin[k]
            if lmax[k] > hi:
                hi = lmax[k]
            du = unew[k] - u[k]
            if -du / dt > speed:
                speed = -du / dt
            if du > uinc:
                uinc = du
            if family != NO_OBSTACLE:
                gap = unew[k] - phi[k]
                if gap < gap_min:
                    gap_min = gap
                if bnew[k] < beta_min:
                    beta_min = bnew[k]
                    beta_node = k
                gi = gap - (u[k] - phi_old[k])
                if gi > ginc:
                    ginc = gi
                    ginc_node = k
            u[k] = unew[k]
        if family == NO_OBSTACLE:
            gap_min = np.inf
            beta_min = 0.0
            ginc = uinc
        else:
            for k in range(m):
                phi_old[k] = phi[k]
        row = stats[steps]
        row[0] = t_new
        row[1] = dt
        row[2] = kmin
        row[3] = kmax
        row[4] = gap_min
        row[5] = beta_min
        row[6] = lo
        row[7] = hi
        row[8] = speed
        row[9] = ginc
        row[10] = uinc
        nodes[steps, 0] = beta_node
        nodes[steps, 1] = ginc_node
        t = t_new
        steps += 1
    return t, steps, 0, -1
