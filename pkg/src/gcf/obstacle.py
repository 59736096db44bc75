"""Time-dependent obstacles that shrink towards a limiting convex body.

Two families are supported, both given by support functions on the grid:

interpolating
    ``phi(t) = exp(-t) phi0 + (1 - exp(-t)) phi_inf`` with ``phi0 > phi_inf > 0``.
homothetic
    ``phi(t) = A(t) phi0`` with ``A(t) = a_inf + (1 - a_inf) exp(-c t)``,
    ``0 < a_inf < 1`` and ``c > 0``.

The flow is well posed when the obstacle speed is negative and
non-increasing, the limit body contains the origin, the principal
curvatures grow monotonically, the obstacle is itself a supersolution
and the initial data are compatible.  :func:`validate` measures each of
these as a signed margin.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegenerateObstacle,
    GridMismatch,
    InvalidProfile,
    NegativeTime,
    NotConvex,
    NotPositive,
    ObstacleInvalid,
    OrderingViolated,
)
from .sphere import SphericalGrid, curvatures, second_fundamental_form

FAMILIES = ("interpolating", "homothetic")


@dataclass(frozen=True, eq=False)
class Obstacle:
    """A shrinking obstacle on a fixed grid.

    Attributes
    ----------
    family : str
        ``"interpolating"`` or ``"homothetic"``.
    phi0, phi_inf : ndarray
        Initial and limiting support functions.
    rate : float
        Exponential rate (1 for the interpolating family).
    a_inf : float or None
        Limiting scale factor of the homothetic family.
    """

    family: str
    grid: SphericalGrid
    phi0: np.ndarray
    phi_inf: np.ndarray
    rate: float = 1.0
    a_inf: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def evaluate(self, t: float):
        """Return ``(phi(t), d/dt phi(t))``."""
        if t < 0:
            raise NegativeTime(f"obstacle evaluated at t={t}")
        e = np.exp(-self.rate * t)
        if self.family == "homothetic":
            A = self.a_inf + (1.0 - self.a_inf) * e
            return A * self.phi0, -self.rate * (1.0 - self.a_inf) * e * self.phi0
        diff = self.phi0 - self.phi_inf
        return self.phi_inf + e * diff, -e * diff

    def limit_gauss_max(self) -> float:
        """max K of the limiting body."""
        if "kmax" not in self._cache:
            try:
                c = curvatures(second_fundamental_form(self.phi_inf, self.grid), self.grid)
            except NotConvex as exc:
                raise DegenerateObstacle("limiting obstacle is not uniformly convex") from exc
            self._cache["kmax"] = float(np.max(c.K))
        return self._cache["kmax"]

    def c0(self, alpha: float) -> float:
        """Penalty depth ``C0 = max K_{phi_inf}^alpha``."""
        return self.limit_gauss_max() ** alpha

    def speed_floor(self, T: float) -> float:
        """``min_{[0,T] x S^n} (-d/dt phi)``; the speed is non-increasing in t."""
        return float(np.min(-self.evaluate(T)[1]))


def make_interpolating(phi0, phi_inf, grid: SphericalGrid) -> Obstacle:
    phi0 = grid.check(phi0)
    phi_inf = grid.check(phi_inf)
    if np.any(phi_inf <= 0):
        raise NotPositive("limiting obstacle must contain the origin in its interior")
    if np.any(phi0 <= phi_inf):
        raise OrderingViolated("need phi0 > phi_inf at every node")
    return Obstacle("interpolating", grid, phi0.copy(), phi_inf.copy(), 1.0, None)


def make_homothetic(phi0, grid: SphericalGrid, a_inf: float, rate: float) -> Obstacle:
    phi0 = grid.check(phi0)
    if not (0.0 < a_inf < 1.0):
        raise InvalidProfile(f"a_inf must lie in (0, 1), got {a_inf}")
    if not (rate > 0.0 and np.isfinite(rate)):
        raise InvalidProfile(f"rate must be positive, got {rate}")
    if np.any(phi0 <= 0):
        raise NotPositive("obstacle must contain the origin in its interior")
    return Obstacle("homothetic", grid, phi0.copy(), a_inf * phi0, float(rate), float(a_inf))


def evaluate(obstacle: Obstacle, grid: SphericalGrid, t: float):
    """Obstacle support function and its time derivative at time ``t``."""
    if grid is not obstacle.grid and grid.shape != obstacle.grid.shape:
        raise GridMismatch("obstacle lives on a different grid")
    return obstacle.evaluate(t)


@dataclass
class ObstacleReport:
    """Signed margins of the admissibility conditions (pass iff all > 0)."""

    speed_negative: float
    speed_nonincreasing: float
    limit_interior: float
    curvature_monotone: float
    supersolution: float
    compat_initial: float
    compat_obstacle: float
    enclosure: float
    c0: float
    times: list

    MARGINS = (
        "speed_negative",
        "speed_nonincreasing",
        "limit_interior",
        "curvature_monotone",
        "supersolution",
        "compat_initial",
        "compat_obstacle",
        "enclosure",
    )

    @property
    def passed(self) -> bool:
        return all(getattr(self, m) > 0 for m in self.MARGINS)

    def failures(self) -> list:
        return [m for m in self.MARGINS if not getattr(self, m) > 0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = self.passed
        return d


def default_times(obstacle: Obstacle, t_end: float = 0.0, samples: int = 41) -> np.ndarray:
    return np.linspace(0.0, max(t_end, 5.0 / obstacle.rate), samples)


def validate(obstacle: Obstacle, grid: SphericalGrid, u0, alpha: float, times=None) -> ObstacleReport:
    """Measure every admissibility condition at the sample ``times``.

    Monotonicity conditions are checked between consecutive samples, so
    they are only as fine as the sampling.
    """
    u0 = grid.check(u0)
    if grid.shape != obstacle.grid.shape:
        raise GridMismatch("obstacle lives on a different grid")
    times = np.sort(np.asarray(default_times(obstacle) if times is None else times, dtype=float))
    if times[0] < 0:
        raise NegativeTime("validation times must be non-negative")

    speeds, mus, superm = [], [], []
    for t in times:
        phi, dphi = obstacle.evaluate(t)
        try:
            cb = curvatures(second_fundamental_form(phi, grid), grid)
        except NotConvex as exc:
            raise DegenerateObstacle(f"obstacle not uniformly convex at t={t}") from exc
        speeds.append(-dphi)
        mus.append(cb.lam)
        superm.append(np.min(cb.K**alpha + dphi))
    speeds = np.array(speeds)
    mus = np.array(mus)

    phi0, dphi0 = obstacle.evaluate(0.0)
    k_obs0 = curvatures(second_fundamental_form(phi0, grid), grid).K
    try:
        k_init = curvatures(second_fundamental_form(u0, grid), grid).K
    except NotConvex:
        k_init = np.zeros(grid.shape)
    top_speed = float(np.max(-dphi0))

    if len(times) > 1:
        nonincr = float(np.min(speeds[:-1] - speeds[1:]))
        mono = float(np.min(mus[1:] - mus[:-1]))
    else:
        nonincr = mono = float("inf")
    return ObstacleReport(
        speed_negative=float(np.min(speeds)),
        speed_nonincreasing=nonincr,
        limit_interior=float(np.min(obstacle.phi_inf)),
        curvature_monotone=mono,
        supersolution=float(min(superm)),
        compat_initial=float(np.min(k_init**alpha) - top_speed),
        compat_obstacle=float(np.min(k_obs0**alpha) - top_speed),
        enclosure=float(np.min(u0 - phi0)),
        c0=obstacle.c0(alpha),
        times=[float(t) for t in times],
    )


def require_valid(obstacle, grid, u0, alpha, times=None) -> ObstacleReport:
    rep = validate(obstacle, grid, u0, alpha, times)
    if not rep.passed:
        raise ObstacleInvalid("obstacle fails: " + ", ".join(rep.failures()))
    return rep
