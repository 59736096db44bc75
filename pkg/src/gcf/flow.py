"""Time integration of the penalised alpha-Gauss curvature flow.

The support function evolves by

    -du/dt = K(u)^alpha + beta_delta(u - phi(t)),

with the curvature term frozen at the start of each step (explicit) and the
penalty taken at the end of the step (implicit, one scalar equation per
node).  Because the penalty never couples neighbouring nodes, its stiffness
O(C0/delta) does not enter the CFL restriction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from . import _kernels as kern
from .errors import (
    InvalidParameter,
    NotConvex,
    NotConvexAfterStep,
    ScalarSolveFailed,
)
from .obstacle import Obstacle, default_times, require_valid
from .penalty import PenaltyFunction, make_penalty
from .sphere import SphericalGrid, curvatures, gradient_norm, second_fundamental_form

__all__ = [
    "FlowState",
    "Trajectory",
    "ContinuationResult",
    "CoincidenceResult",
    "make_state",
    "stable_dt",
    "step",
    "run",
    "continuation",
    "complementarity_residual",
    "detect_coincidence_time",
    "sphere_radius",
]

# penalty-zone time step cap is PENALTY_DT_FACTOR * delta / C0
PENALTY_DT_FACTOR = 0.125
CFL_SAFETY = 0.5
CHUNK = 4096


def sphere_radius(R0: float, t, n: int, alpha: float):
    """Exact radius of a shrinking round sphere."""
    p = n * alpha + 1.0
    return np.power(R0**p - p * np.asarray(t, dtype=float), 1.0 / p)


def _solver_tol(c0: float) -> float:
    return 1e-12 * max(1.0, c0)


@dataclass(eq=False)
class FlowState:
    """Solution at one instant together with cached curvature data."""

    t: float
    u: np.ndarray
    grid: SphericalGrid
    alpha: float
    obstacle: Optional[Obstacle] = None
    penalty: Optional[PenaltyFunction] = None
    K: np.ndarray = field(default=None, repr=False)
    lam_min: np.ndarray = field(default=None, repr=False)
    lam_max: np.ndarray = field(default=None, repr=False)

    @property
    def delta(self):
        return None if self.penalty is None else self.penalty.delta

    @cached_property
    def obstacle_values(self):
        """``(phi, dphi/dt)`` at the current time, or ``None``."""
        return None if self.obstacle is None else self.obstacle.evaluate(self.t)

    @cached_property
    def curvature(self):
        """Full curvature bundle from the vectorised geometry routines."""
        return curvatures(second_fundamental_form(self.u, self.grid), self.grid)

    def beta(self) -> np.ndarray:
        if self.penalty is None:
            return np.zeros(self.grid.shape)
        return self.penalty(self.u - self.obstacle_values[0])

    def speed(self) -> np.ndarray:
        """``-du/dt`` as given by the equation."""
        return self.K**self.alpha + self.beta()


def _unravel(grid, flat):
    if grid.n == 1:
        return int(flat)
    return tuple(int(i) for i in np.unravel_index(int(flat), grid.shape))


def make_state(
    u,
    grid: SphericalGrid,
    alpha: float,
    obstacle: Optional[Obstacle] = None,
    delta: Optional[float] = None,
    variant: str = "c11",
    t: float = 0.0,
) -> FlowState:
    """Wrap a field as a flow state; raises NotConvex if h(u) is not positive."""
    if not alpha > 0:
        raise InvalidParameter(f"alpha must be positive, got {alpha}")
    u = np.ascontiguousarray(grid.check(u), dtype=float)
    penalty = None
    if obstacle is not None:
        if delta is None:
            raise InvalidParameter("an obstacle needs a penalty width delta")
        penalty = make_penalty(delta, obstacle.c0(alpha), variant)
    bad, K, lmin, lmax = kern.curvature_arrays(u, grid)
    if bad >= 0:
        node = _unravel(grid, bad)
        raise NotConvex(f"h(u) not positive definite at node {node}", node=node)
    return FlowState(float(t), u, grid, float(alpha), obstacle, penalty, K, lmin, lmax)


def stable_dt(state: FlowState) -> float:
    """Largest explicit step for the curvature term.

    The linearised operator has diffusion coefficient alpha K^alpha b^{ij}
    whose largest eigenvalue is alpha K^alpha lambda_max.
    """
    coef = 2.0 * state.grid.n * state.alpha * state.K**state.alpha * state.lam_max
    return float(CFL_SAFETY * np.min(state.grid.min_spacing_sq() / coef))


def step(state: FlowState, dt: float) -> FlowState:
    """Advance one step of size ``dt`` (explicit curvature, implicit penalty)."""
    if dt < 0:
        raise InvalidParameter("dt must be non-negative")
    if dt == 0:
        return replace(state, u=state.u.copy())
    t_new = state.t + dt
    base = state.u - dt * state.K**state.alpha
    if state.penalty is None:
        u_new = base
    else:
        phi, _ = state.obstacle.evaluate(t_new)
        pen = state.penalty
        u_new = np.empty_like(base)
        beta_new = np.empty_like(base)
        fails = kern.penalized_update(
            base, np.ascontiguousarray(phi), dt, pen.delta, pen.c0, pen.variant_code,
            _solver_tol(pen.c0), u_new, beta_new,
        )
        if fails:
            raise ScalarSolveFailed(f"penalty solve failed at {fails} nodes")
    try:
        return make_state(
            u_new, state.grid, state.alpha, state.obstacle, state.delta,
            state.penalty.variant if state.penalty else "c11", t_new,
        )
    except NotConvex as exc:
        raise NotConvexAfterStep(
            f"step dt={dt} at t={state.t} lost convexity; retry with a smaller dt",
            node=exc.node,
        ) from exc


@dataclass(eq=False)
class Trajectory:
    """Output of :func:`run`.

    Attributes
    ----------
    times : ndarray
        Snapshot times, strictly increasing, starting at 0.
    snapshots : ndarray
        ``(m,) + grid.shape`` support functions at ``times``.
    speeds : ndarray
        Discrete ``-du/dt`` over the step ending at each snapshot (the
        equation's right-hand side for the initial snapshot).
    steps : dict
        Per-step statistics keyed by :data:`gcf._kernels.STAT_COLUMNS`,
        plus ``beta_node`` and ``gap_node`` (flat node indices).
    """

    grid: SphericalGrid
    alpha: float
    delta: Optional[float]
    obstacle: Optional[Obstacle]
    penalty: Optional[PenaltyFunction]
    u0: np.ndarray
    times: np.ndarray
    snapshots: np.ndarray
    speeds: np.ndarray
    steps: dict
    dt_policy: dict

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def obstacle_at(self, m: int):
        return self.obstacle.evaluate(self.times[m])

    def beta_at(self, m: int) -> np.ndarray:
        if self.penalty is None:
            return np.zeros(self.grid.shape)
        return self.penalty(self.snapshots[m] - self.obstacle_at(m)[0])

    def state(self, m: int) -> FlowState:
        variant = self.penalty.variant if self.penalty else "c11"
        return make_state(
            self.snapshots[m], self.grid, self.alpha, self.obstacle, self.delta, variant,
            self.times[m],
        )

    def node(self, flat: int):
        return _unravel(self.grid, flat)


def _output_times(t_end: float, cadence: float) -> np.ndarray:
    k = max(1, int(math.ceil(t_end / cadence - 1e-9)))
    out = cadence * np.arange(1, k + 1)
    out[-1] = t_end
    return out


def run(
    u0,
    grid: SphericalGrid,
    obstacle: Optional[Obstacle],
    alpha: float,
    delta: Optional[float],
    t_end: float,
    cadence: Optional[float] = None,
    dt: Optional[float] = None,
    variant: str = "c11",
    check_obstacle: bool = True,
) -> Trajectory:
    """Integrate from ``u0`` up to ``t_end``, storing snapshots every ``cadence``.

    ``obstacle=None`` integrates the unconstrained flow.  ``dt`` fixes the
    step size; otherwise it is the smaller of :func:`stable_dt` and
    ``0.125 * delta / C0``.  Steps are shortened to land on output times.
    """
    if not t_end > 0:
        raise InvalidParameter("t_end must be positive")
    cadence = t_end / 100 if cadence is None else cadence
    if not cadence > 0:
        raise InvalidParameter("cadence must be positive")
    state = make_state(u0, grid, alpha, obstacle, delta, variant)
    u = state.u.ravel().copy()

    if obstacle is not None:
        if check_obstacle:
            require_valid(obstacle, grid, state.u, alpha, default_times(obstacle, t_end))
        gap0 = float(np.min(state.u - obstacle.phi0))
        # delta equal to the initial gap is allowed up to rounding
        if not delta > 0 or delta > gap0 * (1.0 + 1e-12):
            raise InvalidParameter(f"need 0 < delta < min(u0 - phi0) = {gap0}, got {delta}")
        pen = state.penalty
        family = kern.HOMOTHETIC if obstacle.family == "homothetic" else kern.INTERPOLATING
        phi0 = obstacle.phi0.ravel().copy()
        phi_inf = obstacle.phi_inf.ravel().copy()
        rate, a_inf = obstacle.rate, obstacle.a_inf or 0.0
        c0, pv = pen.c0, pen.variant_code
        dt_cap = PENALTY_DT_FACTOR * delta / c0
    else:
        family, rate, a_inf = kern.NO_OBSTACLE, 1.0, 0.0
        phi0 = phi_inf = np.zeros(1)
        delta_, c0, pv = 1.0, 1.0, 0
        dt_cap = np.inf
    d_arg = delta if obstacle is not None else delta_

    nt, npsi = (grid.shape[0], 1) if grid.n == 1 else grid.shape
    hp = grid.h_psi or 1.0
    s = np.sin(grid.theta)
    c = np.cos(grid.theta)
    spacing2 = grid.min_spacing_sq().ravel().copy()
    dt_fixed = float(dt) if dt is not None else 0.0

    times = [0.0]
    snaps = [state.u.copy()]
    speeds = [state.speed()]
    stat_blocks, node_blocks = [], []
    stats = np.empty((CHUNK, len(kern.STAT_COLUMNS)))
    nodes = np.empty((CHUNK, 2), dtype=np.int64)
    u_prev = np.empty_like(u)
    t = 0.0
    for target in _output_times(t_end, cadence):
        last_dt = None
        while t < target:
            t, nsteps, status, bad = kern.advance(
                u, t, target, CHUNK,
                grid.n, nt, npsi, grid.h_theta, hp, s, c, spacing2, alpha,
                family, phi0, phi_inf, rate, a_inf,
                d_arg, c0, pv, _solver_tol(c0), dt_cap, dt_fixed,
                stats, nodes, u_prev,
            )
            if nsteps:
                stat_blocks.append(stats[:nsteps].copy())
                node_blocks.append(nodes[:nsteps].copy())
                last_dt = stats[nsteps - 1, 1]
            if status == 1:
                raise NotConvexAfterStep(
                    f"lost convexity near t={t}; reduce dt", node=_unravel(grid, bad)
                )
            if status == 2:
                raise ScalarSolveFailed(f"penalty solve failed near t={t}")
            if status == 3:
                raise NotConvex("state not convex", node=_unravel(grid, bad))
        times.append(t)
        snaps.append(u.reshape(grid.shape).copy())
        speeds.append(((u_prev - u) / last_dt).reshape(grid.shape))

    table = np.concatenate(stat_blocks) if stat_blocks else np.empty((0, len(kern.STAT_COLUMNS)))
    nodes_all = np.concatenate(node_blocks) if node_blocks else np.empty((0, 2), dtype=np.int64)
    steps = {name: table[:, i].copy() for i, name in enumerate(kern.STAT_COLUMNS)}
    steps["beta_node"] = nodes_all[:, 0].copy()
    steps["gap_node"] = nodes_all[:, 1].copy()
    policy = {
        "safety": CFL_SAFETY,
        "penalty_cap": None if obstacle is None else dt_cap,
        "fixed": dt,
        "cadence": cadence,
    }
    return Trajectory(
        grid, float(alpha), delta if obstacle is not None else None, obstacle, state.penalty,
        state.u.copy(), np.array(times), np.array(snaps), np.array(speeds), steps, policy,
    )


def complementarity_residual(traj: Trajectory) -> float:
    """``max |min(du/dt + K^alpha, u - phi)|`` over all snapshots."""
    if traj.obstacle is None:
        return 0.0
    worst = 0.0
    for m in range(len(traj.times)):
        u = traj.snapshots[m]
        _, K, _, _ = kern.curvature_arrays(np.ascontiguousarray(u), traj.grid)
        phi = traj.obstacle_at(m)[0]
        r = np.minimum(-traj.speeds[m] + K**traj.alpha, u - phi)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


@dataclass
class ContinuationResult:
    """Runs for a decreasing penalty-width schedule.

    ``distances[k]`` is the space-time sup-distance between the runs for
    ``deltas[k]`` and ``deltas[k+1]`` over the shared output times;
    ``final_distances`` the same at the final time only.
    """

    deltas: np.ndarray
    times: np.ndarray
    finals: list
    distances: np.ndarray
    final_distances: np.ndarray
    residuals: np.ndarray
    min_gaps: np.ndarray
    trajectories: list = field(repr=False)

    def rates(self) -> np.ndarray:
        """Empirical convergence orders from successive distance ratios."""
        d = self.distances
        ratio = self.deltas[:-1] / self.deltas[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(d[:-1] / d[1:]) / np.log(ratio[:-1])


def continuation(
    u0,
    grid: SphericalGrid,
    obstacle: Optional[Obstacle],
    alpha: float,
    schedule,
    t_end: float,
    cadence: Optional[float] = None,
    variant: str = "c11",
) -> ContinuationResult:
    """Independent runs from ``u0`` for each width in a decreasing schedule."""
    deltas = np.asarray(schedule, dtype=float)
    if deltas.ndim != 1 or deltas.size == 0:
        raise InvalidParameter("schedule must be a non-empty list")
    if np.any(np.diff(deltas) >= 0):
        raise InvalidParameter("schedule must be strictly decreasing")
    trajs = []
    for d in deltas:
        if obstacle is None:
            trajs.append(run(u0, grid, None, alpha, None, t_end, cadence, variant=variant))
        else:
            trajs.append(run(u0, grid, obstacle, alpha, float(d), t_end, cadence, variant=variant))
    times = trajs[0].times
    dist, fdist = [], []
    for a, b in zip(trajs[:-1], trajs[1:]):
        diff = np.abs(a.snapshots - b.snapshots)
        dist.append(float(diff.max()))
        fdist.append(float(diff[-1].max()))
    residuals = np.array([complementarity_residual(tr) for tr in trajs])
    gaps = []
    for tr in trajs:
        if obstacle is None:
            gaps.append(np.inf)
        else:
            gaps.append(min(float(np.min(tr.snapshots[m] - tr.obstacle_at(m)[0]))
                            for m in range(len(tr.times))))
    return ContinuationResult(
        deltas, times, [tr.final.copy() for tr in trajs], np.array(dist), np.array(fdist),
        residuals, np.array(gaps), trajs,
    )


@dataclass
class CoincidenceResult:
    time: Optional[float]
    T_star: float
    rho: float


def enclosing_radius(obstacle: Obstacle) -> float:
    """Bound ``max phi0 + max |grad phi0|`` on enclosing-ball radii of the obstacle."""
    g = obstacle.grid
    return float(np.max(obstacle.phi0) + np.max(gradient_norm(obstacle.phi0, g)))


def coincidence_bound(u0, obstacle: Obstacle, alpha: float) -> tuple:
    """``(T_star, rho)`` with ``T_star = (|u0|_inf + rho)^(n alpha+1)/(n alpha+1)``."""
    p = obstacle.grid.n * alpha + 1.0
    rho = enclosing_radius(obstacle)
    return (float(np.max(np.abs(u0))) + rho) ** p / p, rho


def detect_coincidence_time(traj: Trajectory, obstacle: Obstacle, tol: float) -> CoincidenceResult:
    """First snapshot time with ``|u - phi|_inf <= tol`` (``None`` if never)."""
    T_star, rho = coincidence_bound(traj.u0, obstacle, traj.alpha)
    hit = None
    for m, t in enumerate(traj.times):
        phi = obstacle.evaluate(t)[0]
        if np.max(np.abs(traj.snapshots[m] - phi)) <= tol:
            hit = float(t)
            break
    return CoincidenceResult(hit, T_star, rho)
