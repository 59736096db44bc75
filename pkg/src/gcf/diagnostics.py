"""Quantitative a-priori estimates checked against computed trajectories.

Each ``check_*`` function is a pure function of a trajectory (or state)
and explicit constants and returns a :class:`CheckReport` whose ``margin``
is negative exactly when the check fails.  The constants come from
:func:`ledger`, which evaluates closed-form bounds from the data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as kern
from .errors import DegenerateObstacle, InvalidParameter
from .flow import FlowState, Trajectory, coincidence_bound, run, sphere_radius
from .obstacle import Obstacle
from .sphere import SphericalGrid, build_grid, covariant_hessian, curvatures, second_fundamental_form

__all__ = [
    "BoundsLedger",
    "CheckReport",
    "ledger",
    "check_penalty_bounds",
    "check_speed_monotone",
    "check_gauss_bounds",
    "check_speed_upper",
    "check_principal_bounds",
    "check_euler_formula",
    "check_evolution_residual",
    "evolution_residual",
    "calibrate_residual_constant",
    "reports_to_json",
]


@dataclass(frozen=True)
class BoundsLedger:
    """Closed-form constants for a flow on ``[0, T]``.

    Attributes
    ----------
    c_T : float
        Lower bound for K, ``min_{[0,T]} (-d_t phi)^(1/alpha)``.
    rho_0 : float
        Half the smallest value of the limiting obstacle.
    C_1 : float
        Bound for ``(K^alpha + beta)/(u - rho_0)``.
    C : float
        Speed bound ``C_1 max u0``.
    C_0 : float
        Penalty depth ``max K_{phi_inf}^alpha``.
    K_upper : float
        ``(C + C_0)^(1/alpha)``.
    chi : float
        Exponent weight ``1/(alpha c_T^alpha)``.
    """

    n: int
    alpha: float
    T: float
    c_T: float
    rho_0: float
    C_1: float
    C: float
    C_0: float
    K_upper: float
    chi: float
    max_K0: float

    def to_dict(self) -> dict:
        return asdict(self)


def ledger(u0, grid: SphericalGrid, obstacle: Obstacle, alpha: float, T: float) -> BoundsLedger:
    if not np.isfinite(T) or T < 0:
        raise InvalidParameter("T must be finite and non-negative")
    if np.min(obstacle.phi_inf) <= 0:
        raise DegenerateObstacle("limiting obstacle must contain the origin")
    u0 = grid.check(u0)
    n = grid.n
    c_T = obstacle.speed_floor(T) ** (1.0 / alpha)
    rho_0 = 0.5 * float(np.min(obstacle.phi_inf))
    max_K0 = float(np.max(curvatures(second_fundamental_form(u0, grid), grid).K))
    na = n * alpha
    C_1 = max(max_K0**alpha, ((na + 1.0) / (na * rho_0)) ** na) / rho_0
    C = C_1 * float(np.max(u0))
    C_0 = obstacle.c0(alpha)
    return BoundsLedger(
        n, float(alpha), float(T), c_T, rho_0, C_1, C, C_0,
        (C + C_0) ** (1.0 / alpha), 1.0 / (alpha * c_T**alpha), max_K0,
    )


@dataclass
class CheckReport:
    """Outcome of one check; ``passed`` is False only if ``margin < 0``."""

    id: str
    passed: bool
    margin: float
    node: Optional[object] = None
    time: Optional[float] = None
    constants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, (np.floating, float)):
                return float(x)
            if isinstance(x, (np.integer,)):
                return int(x)
            if isinstance(x, tuple):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return x

        return {
            "id": self.id,
            "pass": bool(self.passed),
            "margin": clean(self.margin),
            "node": clean(self.node),
            "time": clean(self.time),
            "constants": clean(self.constants),
        }


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True, allow_nan=True)


def _kernel_curv(u, grid):
    return kern.curvature_arrays(np.ascontiguousarray(u), grid)


# ---------------------------------------------------------------- penalty


def check_penalty_bounds(traj: Trajectory, C_0: Optional[float] = None) -> CheckReport:
    """``-C0 <= beta_delta(u - phi) <= 0`` at every step and snapshot."""
    if C_0 is None:
        C_0 = traj.penalty.c0 if traj.penalty is not None else 0.0
    lower, upper = C_0, 0.0
    where = (None, None)
    wl = (None, None)
    steps = traj.steps
    if len(steps["t"]):
        k = int(np.argmin(steps["min_beta"]))
        lower = float(steps["min_beta"][k]) + C_0
        wl = (traj.node(steps["beta_node"][k]), float(steps["t"][k]))
    for m in range(len(traj.times)):
        b = traj.beta_at(m)
        lo = float(b.min()) + C_0
        if lo < lower:
            lower = lo
            wl = (traj.node(int(b.argmin())), float(traj.times[m]))
        hi = -float(b.max())
        if hi < upper:
            upper = hi
            where = (traj.node(int(b.argmax())), float(traj.times[m]))
    if lower <= upper:
        margin, where = lower, wl
    else:
        margin = upper
    return CheckReport(
        "penalty_bounds", margin >= -1e-9, margin, where[0], where[1],
        {"C_0": C_0, "lower_margin": lower, "upper_margin": upper, "tolerance": 1e-9},
    )


# --------------------------------------------------------------- monotone


def check_speed_monotone(traj: Trajectory, obstacle: Optional[Obstacle] = None) -> CheckReport:
    """Forward differences of ``u - phi`` never exceed ``1e-8 dt``."""
    obstacle = obstacle if obstacle is not None else traj.obstacle
    margin, node, time = np.inf, None, None
    steps = traj.steps
    if traj.obstacle is not None and len(steps["t"]):
        slack = 1e-8 * steps["dt"] - steps["max_gap_increase"]
        k = int(np.argmin(slack))
        margin = float(slack[k])
        node, time = traj.node(steps["gap_node"][k]), float(steps["t"][k])
    prev = None
    for m, t in enumerate(traj.times):
        phi = obstacle.evaluate(t)[0] if obstacle is not None else 0.0
        gap = traj.snapshots[m] - phi
        if prev is not None:
            inc = gap - prev
            slack = 1e-8 * (t - traj.times[m - 1]) - float(inc.max())
            if slack < margin:
                margin, node, time = slack, traj.node(int(inc.argmax())), float(t)
        prev = gap
    return CheckReport(
        "speed_monotone", margin >= 0, margin, node, time, {"epsilon_per_dt": 1e-8}
    )


# ------------------------------------------------------------ Gauss bounds


def _k_extremes(traj: Trajectory):
    kmin, kmax = np.inf, -np.inf
    loc_min = loc_max = (None, None)
    steps = traj.steps
    if len(steps["t"]):
        i, j = int(np.argmin(steps["min_K"])), int(np.argmax(steps["max_K"]))
        kmin, loc_min = float(steps["min_K"][i]), (None, float(steps["t"][i]))
        kmax, loc_max = float(steps["max_K"][j]), (None, float(steps["t"][j]))
    for m, t in enumerate(traj.times):
        bad, K, _, _ = _kernel_curv(traj.snapshots[m], traj.grid)
        if bad >= 0:
            return 0.0, np.inf, (traj.node(bad), float(t)), (traj.node(bad), float(t))
        if K.min() <= kmin:
            kmin, loc_min = float(K.min()), (traj.node(int(K.argmin())), float(t))
        if K.max() >= kmax:
            kmax, loc_max = float(K.max()), (traj.node(int(K.argmax())), float(t))
    return kmin, kmax, loc_min, loc_max


def check_gauss_bounds(traj: Trajectory, bounds: BoundsLedger, tol: float = 0.05) -> CheckReport:
    """``c_T (1 - tol) <= K <= (C + C0)^(1/alpha) (1 + tol)`` everywhere."""
    kmin, kmax, loc_min, loc_max = _k_extremes(traj)
    low = (kmin - bounds.c_T * (1.0 - tol)) / bounds.c_T
    high = (bounds.K_upper * (1.0 + tol) - kmax) / bounds.K_upper
    margin, loc = (low, loc_min) if low <= high else (high, loc_max)
    return CheckReport(
        "gauss_bounds", margin >= 0, margin, loc[0], loc[1],
        {"c_T": bounds.c_T, "K_upper": bounds.K_upper, "min_K": kmin, "max_K": kmax, "tol": tol},
    )


# -------------------------------------------------------------- speed upper


def check_speed_upper(traj: Trajectory, bounds: BoundsLedger, tol: float = 0.05) -> CheckReport:
    """Speed bound ``-du/dt <= C``, ``K^alpha <= C + C0`` and the interior-max test.

    The interior test tracks the running maximum of
    ``w = (K^alpha + beta)/(u - rho_0)``.  Wherever it is renewed at a
    positive time, either ``w <= -d_t phi / (u - rho_0)`` or the mean
    curvature obeys ``H <= (n alpha + 1)/(alpha rho_0)``; the second is
    allowed a relative slack ``tol``.
    """
    n, a, rho0 = traj.grid.n, traj.alpha, bounds.rho_0
    steps = traj.steps
    speeds = [float(np.max(traj.speeds))]
    if len(steps["t"]):
        speeds.append(float(steps["max_speed"].max()))
    max_speed = max(speeds)
    _, kmax, _, loc_kmax = _k_extremes(traj)
    m_speed = (bounds.C - max_speed) / bounds.C
    m_k = (bounds.C + bounds.C_0 - kmax**a) / (bounds.C + bounds.C_0)

    h_bound = (n * a + 1.0) / (a * rho0)
    m_alt = np.inf
    loc_alt = (None, None)
    interior_points = 0
    running = -np.inf
    for m, t in enumerate(traj.times):
        u = traj.snapshots[m]
        st = traj.state(m)
        speed = st.speed()
        w = speed / (u - rho0)
        k = int(np.argmax(w))
        wmax = float(w.flat[k])
        if m > 0 and wmax > running:
            interior_points += 1
            dphi = traj.obstacle.evaluate(t)[1].flat[k]
            alt1 = -wmax - dphi / (u.flat[k] - rho0) >= 0
            if not alt1:
                H = float(st.curvature.H.flat[k])
                mk = (h_bound * (1.0 + tol) - H) / h_bound
                if mk < m_alt:
                    m_alt, loc_alt = mk, (traj.node(k), float(t))
        running = max(running, wmax)

    cands = [
        (m_speed, (None, None)),
        (m_k, loc_kmax),
        (m_alt, loc_alt),
    ]
    margin, loc = min(cands, key=lambda c: c[0])
    return CheckReport(
        "speed_upper", margin >= 0, float(margin), loc[0], loc[1],
        {
            "C": bounds.C, "C_0": bounds.C_0, "max_speed": max_speed,
            "max_K_alpha": kmax**a, "H_bound": h_bound,
            "interior_max_points": interior_points, "tol": tol,
        },
    )


# -------------------------------------------------------- principal bounds


def check_principal_bounds(
    traj: Trajectory, bounds: BoundsLedger, chi: Optional[float] = None,
    tol: float = 0.05, growth: float = 10.0,
) -> CheckReport:
    """Monitor ``W = exp(-chi beta) / lambda_min`` along the trajectory.

    Three things are asserted.

    * Sandwich: ``1/lambda_min <= W`` pointwise, hence
      ``lambda_min >= 1/max W``.
    * Dichotomy: wherever the running maximum of ``W`` is renewed at a
      positive time, ``1/lambda_1 <= max(1/mu_min + u - phi,
      ((n + 1/alpha) mu_max)^(n-1) / c_T)`` up to ``tol``, where ``mu``
      are the obstacle's principal curvatures at that point.
    * No blow-up: ``max 1/lambda_min`` stays within ``growth`` times the
      initial scale ``max(1/lambda_min(0), 1/mu_min(0) + max(u0 - phi_inf))``.

    ``W`` itself is handled in log form since ``chi C0`` can be large.
    """
    chi = bounds.chi if chi is None else chi
    n, a = traj.grid.n, traj.alpha
    m_sand = np.inf
    m_dich = np.inf
    loc_d = (None, None)
    running = -np.inf
    max_inv = 0.0
    loc_inv = (None, None)
    lam_floor = np.inf
    logW_max = -np.inf
    for m, t in enumerate(traj.times):
        bad, K, lmin, lmax = _kernel_curv(traj.snapshots[m], traj.grid)
        if bad >= 0:
            return CheckReport("principal_bounds", False, -np.inf, traj.node(bad), float(t))
        beta = traj.beta_at(m)
        logW = -np.log(lmin) - chi * beta
        m_sand = min(m_sand, float(np.min(logW + np.log(lmin))))
        k = int(np.argmax(logW))
        if m > 0 and logW.flat[k] > running and traj.obstacle is not None:
            phi = traj.obstacle.evaluate(t)[0]
            mu = curvatures(second_fundamental_form(phi, traj.grid), traj.grid).lam
            mu_min, mu_max = mu[..., 0].flat[k], mu[..., -1].flat[k]
            gap = traj.snapshots[m].flat[k] - phi.flat[k]
            B = max(1.0 / mu_min + gap, ((n + 1.0 / a) * mu_max) ** (n - 1) / bounds.c_T)
            md = (B * (1.0 + tol) - 1.0 / lmin.flat[k]) / B
            if md < m_dich:
                m_dich, loc_d = md, (traj.node(k), float(t))
        running = max(running, float(logW.flat[k]))
        logW_max = max(logW_max, float(logW.flat[k]))
        j = int(np.argmax(1.0 / lmin))
        if 1.0 / lmin.flat[j] > max_inv:
            max_inv, loc_inv = float(1.0 / lmin.flat[j]), (traj.node(j), float(t))
        lam_floor = min(lam_floor, float(lmin.min()))

    _, _, lmin0, _ = _kernel_curv(traj.u0, traj.grid)
    scale = float(np.max(1.0 / lmin0))
    if traj.obstacle is not None:
        phi0 = traj.obstacle.phi0
        mu0 = curvatures(second_fundamental_form(phi0, traj.grid), traj.grid).lam[..., 0]
        scale = max(scale, float(np.max(1.0 / mu0 + traj.u0 - traj.obstacle.phi_inf)))
    m_growth = (growth * scale - max_inv) / (growth * scale)
    # lambda_min >= 1/max W, i.e. log(lambda_floor) + log W_max >= 0
    m_ident = min(m_sand, np.log(lam_floor) + logW_max)
    cands = [(m_dich, loc_d), (m_growth, loc_inv)]
    # the sandwich holds by construction; it only enters when rounding is exceeded
    if m_ident < -1e-12:
        cands.append((m_ident, (None, None)))
    margin, loc = min(cands, key=lambda c: c[0])
    return CheckReport(
        "principal_bounds", margin >= 0, float(margin), loc[0], loc[1],
        {
            "chi": chi, "c_T": bounds.c_T, "log_max_W": logW_max, "max_inv_lambda": max_inv,
            "initial_scale": scale, "growth_limit": growth, "min_lambda": lam_floor,
            "floor_exp_minus_chi_C0": float(np.exp(-chi * bounds.C_0)),
            "identity_margin": float(m_ident),
            "tol": tol,
        },
    )


# ------------------------------------------------------------ Euler formula


def _euler_margin(u, grid, lam_min=None):
    h = second_fundamental_form(u, grid)
    if lam_min is None:
        bad, _, lam_min, _ = _kernel_curv(u, grid)
        if bad >= 0:
            lam_min = curvatures(h, grid).lam_min
    inv = 1.0 / lam_min
    if grid.n == 1:
        ratios = [h.comps[..., 0]]
    else:
        ratios = [h.comps[..., 0], h.comps[..., 2] / grid.sin_theta**2]
    worst = np.min([(inv * (1.0 + 1e-8) - r) / inv for r in ratios], axis=0)
    return worst


def check_euler_formula(obj) -> CheckReport:
    """Diagonal entries ``h_ii / g_ii <= 1/lambda_min`` (relative slack 1e-8).

    ``h`` comes from the vectorised stencils and ``lambda_min`` from the
    compiled kernel (the cached values for a :class:`FlowState`), so the
    check also ties the two routes together.  Accepts a :class:`FlowState`
    or a :class:`Trajectory` (all snapshots).
    """
    if isinstance(obj, FlowState):
        items = [(obj.t, obj.u, obj.lam_min)]
    else:
        items = [(t, u, None) for t, u in zip(obj.times, obj.snapshots)]
    grid = obj.grid
    margin, node, time = np.inf, None, None
    for t, u, lam in items:
        w = _euler_margin(u, grid, lam)
        k = int(np.argmin(w))
        if w.flat[k] < margin:
            margin, time = float(w.flat[k]), float(t)
            node = k if grid.n == 1 else tuple(int(i) for i in np.unravel_index(k, grid.shape))
    return CheckReport("euler_formula", margin >= 0, margin, node, time, {"rel_tol": 1e-8})


# ------------------------------------------------------ evolution residual


def _linearised_operator(u, grid, alpha):
    """``alpha K^alpha b^{ij} Hess(u)_ij`` with ``b`` the inverse of h."""
    h = second_fundamental_form(u, grid)
    cb = curvatures(h, grid)
    hess = covariant_hessian(u, grid).matrix()
    hinv = np.linalg.inv(h.matrix())
    return alpha * cb.K**alpha * np.einsum("...ij,...ji->...", hinv, hess), cb


def evolution_residual(traj: Trajectory, m: int) -> np.ndarray:
    """Residual of the evolution equation of u at the snapshot ``m``.

    ``(du/dt)_centred - L u - [alpha K^alpha H u - (n alpha + 1) K^alpha - beta]``.
    """
    if m < 1 or m + 1 >= len(traj.times):
        raise InvalidParameter("need three consecutive snapshots around m")
    grid, a, n = traj.grid, traj.alpha, traj.grid.n
    u = traj.snapshots[m]
    dudt = (traj.snapshots[m + 1] - traj.snapshots[m - 1]) / (traj.times[m + 1] - traj.times[m - 1])
    Lu, cb = _linearised_operator(u, grid, a)
    Ka = cb.K**a
    rhs = a * Ka * cb.H * u - (n * a + 1.0) * Ka - traj.beta_at(m)
    return dudt - Lu - rhs


def _mesh_h(grid):
    return grid.h_theta if grid.n == 1 else max(grid.h_theta, grid.h_psi)


def _max_residual(traj):
    worst, where = 0.0, (None, None)
    for m in range(1, len(traj.times) - 1):
        r = np.abs(evolution_residual(traj, m))
        k = int(np.argmax(r))
        if r.flat[k] > worst:
            worst, where = float(r.flat[k]), (traj.node(k), float(traj.times[m]))
    dts = np.diff(traj.times)
    return worst, where, float(dts.max())


def calibrate_residual_constant(
    n: int = 1, alpha: float = 1.0, resolutions=None, t_end: float = 0.05, headroom: float = 4.0
) -> float:
    """Fit ``C_res`` on shrinking spheres at two resolutions, times ``headroom``."""
    if resolutions is None:
        resolutions = (32, 64) if n == 1 else ((8, 16), (16, 32))
    fits = []
    for res in resolutions:
        grid = build_grid(n, res)
        h = _mesh_h(grid)
        dt = 0.1 * h**2 if n == 1 else 0.05 * np.min(grid.min_spacing_sq())
        steps = max(4, int(round(t_end / dt)))
        traj = run(np.ones(grid.shape), grid, None, alpha, None, steps * dt, dt, dt=dt)
        worst, _, dts = _max_residual(traj)
        fits.append(worst / (dts + h**2))
    return headroom * max(fits)


def check_evolution_residual(traj: Trajectory, C_res: float) -> CheckReport:
    """``|r|_inf <= C_res (dt + h^2)`` over every interior snapshot."""
    worst, where, dt = _max_residual(traj)
    h = _mesh_h(traj.grid)
    bound = C_res * (dt + h**2)
    return CheckReport(
        "evolution_residual", worst <= bound, (bound - worst) / bound, where[0], where[1],
        {"C_res": C_res, "dt": dt, "h": h, "max_residual": worst},
    )


def check_sphere_exactness(traj: Trajectory, R0: float, tol: float) -> CheckReport:
    """Final field against the exact shrinking radius."""
    R = float(sphere_radius(R0, traj.times[-1], traj.grid.n, traj.alpha))
    err = np.abs(traj.final - R)
    k = int(np.argmax(err))
    margin = tol - float(err.flat[k])
    return CheckReport(
        "sphere_exactness", margin >= 0, margin, traj.node(k), float(traj.times[-1]),
        {"exact_radius": R, "max_error": float(err.flat[k]), "tol": tol},
    )


def check_coincidence(traj: Trajectory, tol: float = 1e-3) -> CheckReport:
    """Coincidence within ``tol`` is detected no later than ``T_star``."""
    from .flow import detect_coincidence_time

    res = detect_coincidence_time(traj, traj.obstacle, tol)
    if res.time is None:
        margin = -np.inf
    else:
        margin = res.T_star - res.time
    return CheckReport(
        "coincidence_time", margin >= 0, float(margin), None, res.time,
        {"T_star": res.T_star, "rho": res.rho, "tol": tol},
    )


def check_continuation(cont, tol_ratio: float = 0.5) -> CheckReport:
    """Distances decrease, gaps stay above ``-2 delta``, residual halves."""
    d = cont.distances
    m_dist = float(np.min(d[:-1] - d[1:])) if d.size > 1 else np.inf
    m_gap = float(np.min(cont.min_gaps + 2.0 * cont.deltas))
    r = cont.residuals
    m_res = float(tol_ratio * r[0] - r[-1])
    margin = min(m_dist, m_gap, m_res)
    return CheckReport(
        "continuation", margin >= 0, margin, None, None,
        {
            "deltas": cont.deltas.tolist(), "distances": d.tolist(),
            "final_distances": cont.final_distances.tolist(),
            "residuals": r.tolist(), "min_gaps": cont.min_gaps.tolist(),
        },
    )
