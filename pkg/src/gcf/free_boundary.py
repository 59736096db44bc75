"""Contact region analysis in a local graph representation.

Near a direction ``z_c`` both the evolving surface and the obstacle are
graphs over the supporting hyperplane: with tangent coordinates
``x = <P, e_i>`` and depth ``-<P, z_c>``, the surface gives a convex
function ``w(x, t)`` that increases in time and the obstacle a function
``phi_g(x, t) >= w``.  Their difference ``v = phi_g - w`` vanishes on the
coincidence set.  The routines here sample ``w``, ``phi_g`` on a uniform
space-time box and measure the free boundary ``{v = 0}``.

Spatial dimension of a patch equals the sphere dimension ``n``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CloughTocher2DInterpolator, CubicSpline, RegularGridInterpolator
from scipy.ndimage import distance_transform_edt
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateProfile,
    EmptySet,
    InsufficientSnapshots,
    InvalidParameter,
    NotGraphable,
    NotGraphLike,
    OutOfPatch,
)
from .sphere import SphericalGrid, embed

__all__ = [
    "GraphPatch",
    "FreeBoundaryReport",
    "extract_patch",
    "coincidence_set",
    "minimal_diameter",
    "thickness",
    "nondegeneracy_probe",
    "rescale",
    "boundary_point",
    "cap_patch",
    "monotonicity_probe",
    "lipschitz_estimate",
    "speed_continuity",
    "blowup_fit",
    "synthetic_patch",
    "write_patch_csv",
]


@dataclass(eq=False)
class GraphPatch:
    """Sampled graphs over a space-time box.

    Arrays ``w``, ``phi``, ``v`` and ``dphi`` have shape
    ``(len(times),) + (M,) * n`` and are indexed ``[t, x1, (x2)]``.

    Attributes
    ----------
    axes : list of ndarray
        Coordinates of the spatial samples along each tangent direction.
    theta : float
        Ellipticity of the frozen operator, ``theta^{-1} <= F^{ij} <= theta``.
    c : float
        Smallest value of the forcing term over the patch.
    tol_c : float
        Default coincidence threshold in the patch's units.
    chain : list
        Rescalings applied so far, one ``{"x0", "t0", "r"}`` dict each.
    """

    n: int
    axes: list
    times: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    theta: float
    c: float
    alpha: float
    tol_c: float
    z_c: Optional[np.ndarray] = None
    frame: Optional[np.ndarray] = None
    chain: list = field(default_factory=list)

    @property
    def v(self) -> np.ndarray:
        return self.phi - self.w

    @property
    def spacing(self) -> float:
        return float(self.axes[0][1] - self.axes[0][0])

    def coords(self) -> np.ndarray:
        """Spatial coordinates, shape ``(M,)*n + (n,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def interpolator(self, values, method="linear"):
        return RegularGridInterpolator(
            (self.times, *self.axes), values, method=method, bounds_error=False, fill_value=None
        )

    def out_of_hypothesis(self) -> bool:
        """The frozen operator is only known to be concave when alpha <= 1/n."""
        return self.alpha > 1.0 / self.n + 1e-12


@dataclass
class FreeBoundaryReport:
    """Coincidence mask, free-boundary cells and per-slice minimal diameters."""

    mask: np.ndarray
    gamma: np.ndarray
    tol_c: float
    md: np.ndarray
    thickness: dict = field(default_factory=dict)
    nondegeneracy: dict = field(default_factory=dict)
    monotonicity: dict = field(default_factory=dict)
    lipschitz: list = field(default_factory=list)

    @property
    def gamma_cells(self) -> list:
        return [tuple(int(i) for i in idx) for idx in np.argwhere(self.gamma)]

    def to_dict(self) -> dict:
        return {
            "tol_c": self.tol_c,
            "coincidence_fraction": [float(f) for f in self.mask.reshape(len(self.mask), -1).mean(1)],
            "gamma_count": int(self.gamma.sum()),
            "md": [None if not np.isfinite(x) else float(x) for x in self.md],
            "thickness": {k: float(v) for k, v in self.thickness.items()},
            "nondegeneracy": {k: [float(m) for m in v] for k, v in self.nondegeneracy.items()},
            "monotonicity": self.monotonicity,
            "lipschitz": [float(x) for x in self.lipschitz],
        }


# ------------------------------------------------------------------ graphs


def _frame(z_c) -> np.ndarray:
    z = np.asarray(z_c, dtype=float)
    z = z / np.linalg.norm(z)
    if z.size == 2:
        return np.array([[-z[1], z[0]]])
    a = np.eye(3)[int(np.argmin(np.abs(z)))]
    e1 = a - (a @ z) * z
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(z, e1)
    return np.stack([e1, e2])


def _graph_sampler(u, grid: SphericalGrid, z_c, E, cos_limit=0.1):
    """Return a callable mapping tangent points (P, n) to graph depths."""
    X = embed(u, grid)
    z = grid.normals().reshape(-1, grid.n + 1)
    facing = z @ z_c > cos_limit
    if facing.sum() < 4 * grid.n:
        raise NotGraphable("too few nodes face the frame direction")
    x = X[facing] @ E.T
    y = -(X[facing] @ z_c)
    if grid.n == 1:
        ang = np.arctan2(z[facing] @ E[0], z[facing] @ z_c)
        order = np.argsort(ang)
        xs, ys = x[order, 0], y[order]
        if np.any(np.diff(xs) <= 0):
            raise NotGraphable("surface is not a graph over the frame (normal-cone test)")
        spline = CubicSpline(xs, ys)

        def sample(p):
            p = np.asarray(p)[..., 0]
            if p.min() < xs[0] or p.max() > xs[-1]:
                raise NotGraphable("patch exceeds the graphable region")
            return spline(p)

        return sample

    interp = CloughTocher2DInterpolator(x, y)

    def sample(p):
        out = interp(p)
        if np.any(~np.isfinite(out)):
            raise NotGraphable("patch exceeds the graphable region")
        return out

    return sample


def _hessian(f, axes):
    """Spatial gradient and Hessian of f[..., x1, (x2)] by centred differences."""
    n = len(axes)
    lead = f.ndim - n
    grads = np.gradient(f, *axes, axis=tuple(range(lead, lead + n)))
    if n == 1:
        grads = [grads]
    H = np.empty(f.shape + (n, n))
    for i, g in enumerate(grads):
        gg = np.gradient(g, *axes, axis=tuple(range(lead, lead + n)))
        if n == 1:
            gg = [gg]
        for j in range(n):
            H[..., i, j] = gg[j]
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    return np.stack(grads, axis=-1), H


def _ellipticity_and_forcing(axes, times, w, phi, dphi, alpha):
    n = len(axes)
    Dw, D2w = _hessian(w, axes)
    _, D2p = _hessian(phi, axes)
    e = ((n + 2) * alpha - 1.0) / 2.0
    Q = (1.0 + np.sum(Dw**2, axis=-1)) ** e
    ev = np.linalg.eigvalsh(D2w)
    ok = ev[..., 0] > 0
    if not np.any(ok):
        raise NotGraphable("surface graph is not convex on the patch")
    det = np.prod(ev, axis=-1)
    Fe = alpha * np.abs(det)[..., None] ** alpha / (Q[..., None] * np.where(ok[..., None], ev, np.inf))
    theta = float(np.max(np.maximum(Fe[ok].max(-1), 1.0 / Fe[ok].min(-1))))
    detp = np.clip(np.linalg.det(D2p), 0.0, None)
    f = -dphi + detp**alpha / Q
    return theta, float(np.min(f))


def extract_patch(
    traj,
    obstacle,
    z_c,
    r_patch: float,
    window,
    samples: Optional[int] = None,
    center=None,
    tol_c: Optional[float] = None,
) -> GraphPatch:
    """Sample the surface and obstacle graphs over ``center + [-r, r]^n``.

    Parameters
    ----------
    traj : Trajectory
    obstacle : Obstacle
    z_c : array_like
        Frame direction (need not be normalised).
    r_patch : float
        Half-width of the spatial box.
    window : (float, float)
        Time window; every snapshot inside it is used.
    samples : int, optional
        Points per spatial axis (default 101 for n=1, 41 for n=2).
    center : array_like, optional
        Tangent coordinates of the box centre (default: the origin's projection).
    tol_c : float, optional
        Coincidence threshold stored on the patch (default ``traj.delta / 2``).
    """
    grid = traj.grid
    n = grid.n
    z = np.asarray(z_c, dtype=float)
    if z.shape != (n + 1,):
        raise InvalidParameter(f"frame direction must have {n + 1} components")
    z = z / np.linalg.norm(z)
    E = _frame(z)
    t_lo, t_hi = window
    idx = [m for m, t in enumerate(traj.times) if t_lo - 1e-12 <= t <= t_hi + 1e-12]
    if len(idx) < 3:
        raise InsufficientSnapshots(f"only {len(idx)} snapshots inside the window {window}")
    M = samples or (101 if n == 1 else 41)
    ctr = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    axes = [ctr[i] + np.linspace(-r_patch, r_patch, M) for i in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    times = traj.times[idx]
    w = np.empty((len(idx),) + (M,) * n)
    phi = np.empty_like(w)
    for a, m in enumerate(idx):
        w[a] = _graph_sampler(traj.snapshots[m], grid, z, E)(pts).reshape((M,) * n)
        phi_m = obstacle.evaluate(times[a])[0]
        phi[a] = _graph_sampler(phi_m, grid, z, E)(pts).reshape((M,) * n)
    dphi = np.gradient(phi, times, axis=0)
    theta, c = _ellipticity_and_forcing(axes, times, w, phi, dphi, traj.alpha)
    if tol_c is None:
        tol_c = 0.5 * traj.delta if traj.delta else 1e-6
    return GraphPatch(n, axes, times, w, phi, dphi, theta, c, traj.alpha, float(tol_c), z, E)


def synthetic_patch(v_fn, n=1, half=1.0, samples=81, times=None, theta=1.0, c=1.0, alpha=1.0,
                    tol_c=1e-6, phi_fn=None) -> GraphPatch:
    """Patch from analytic functions ``v(x, t)`` (and optionally ``phi``).

    ``x`` is passed with shape ``(..., n)``.  ``w`` is set to ``phi - v``.
    """
    times = np.linspace(-1.0, 0.0, 11) if times is None else np.asarray(times, dtype=float)
    axes = [np.linspace(-half, half, samples) for _ in range(n)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    v = np.stack([v_fn(X, t) for t in times])
    phi = np.stack([phi_fn(X, t) for t in times]) if phi_fn else np.zeros_like(v)
    dphi = np.gradient(phi, times, axis=0) if len(times) > 1 else np.zeros_like(phi)
    return GraphPatch(n, axes, times, phi - v, phi, dphi, theta, c, alpha, tol_c)


# ------------------------------------------------------- coincidence / MD


def coincidence_set(patch: GraphPatch, tol_c: Optional[float] = None) -> FreeBoundaryReport:
    """``Lambda = {v <= tol_c}`` and the cells where it meets its complement."""
    tol = patch.tol_c if tol_c is None else tol_c
    if not tol > 0:
        raise InvalidParameter("tol_c must be positive")
    mask = patch.v <= tol
    gamma = np.zeros_like(mask)
    for ax in range(mask.ndim):
        sl_a = [slice(None)] * mask.ndim
        sl_b = [slice(None)] * mask.ndim
        sl_a[ax] = slice(1, None)
        sl_b[ax] = slice(None, -1)
        diff = mask[tuple(sl_a)] != mask[tuple(sl_b)]
        gamma[tuple(sl_a)] |= diff
        gamma[tuple(sl_b)] |= diff
    X = patch.coords().reshape(-1, patch.n)
    md = np.full(len(patch.times), np.nan)
    for a in range(len(patch.times)):
        sel = mask[a].reshape(-1)
        if sel.any():
            md[a] = minimal_diameter(X[sel])
    return FreeBoundaryReport(mask, gamma, float(tol), md)


def _width(P, ang):
    d = np.array([math.cos(ang), math.sin(ang)])
    proj = P @ d
    return float(proj.max() - proj.min())


def minimal_diameter(points) -> float:
    """Least distance between two parallel hyperplanes enclosing the points."""
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        raise EmptySet("minimal diameter of an empty set")
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[1] == 1:
        return float(P.max() - P.min())
    if P.shape[1] != 2:
        raise InvalidParameter("only sets in R^1 and R^2 are supported")
    try:
        P = P[ConvexHull(P).vertices]
    except (QhullError, ValueError):
        pass  # degenerate (collinear or tiny) sets: scan all points
    angles = np.deg2rad(np.arange(180.0))
    widths = [_width(P, a) for a in angles]
    k = int(np.argmin(widths))
    lo, hi = angles[k] - np.deg2rad(1.0), angles[k] + np.deg2rad(1.0)
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = hi - g * (hi - lo), lo + g * (hi - lo)
    fa, fb = _width(P, a), _width(P, b)
    for _ in range(60):
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - g * (hi - lo)
            fa = _width(P, a)
        else:
            lo, a, fa = a, b, fb
            b = lo + g * (hi - lo)
            fb = _width(P, b)
    return float(min(widths[k], fa, fb))


def _check_space(patch, x0, r):
    for i, ax in enumerate(patch.axes):
        if x0[i] - r < ax[0] - 1e-12 or x0[i] + r > ax[-1] + 1e-12:
            raise OutOfPatch(f"ball of radius {r} around {x0.tolist()} leaves the patch")


def thickness(patch: GraphPatch, report: FreeBoundaryReport, x0, t0: float, r: float) -> float:
    """``inf_{|t - t0| <= r^2} MD(Lambda^t cap B_r(x0)) / r``.

    Slices where the contact set misses the ball count as zero width.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    _check_space(patch, x0, r)
    if t0 - r * r < patch.times[0] - 1e-12 or t0 + r * r > patch.times[-1] + 1e-12:
        raise OutOfPatch("time interval of the cylinder leaves the patch")
    X = patch.coords().reshape(-1, patch.n)
    inside = np.linalg.norm(X - x0, axis=1) <= r * (1.0 + 1e-12)
    best = np.inf
    for a, t in enumerate(patch.times):
        if abs(t - t0) > r * r * (1.0 + 1e-9):
            continue
        sel = inside & report.mask[a].reshape(-1)
        md = minimal_diameter(X[sel]) if sel.any() else 0.0
        best = min(best, md / r)
    value = float(best)
    report.thickness[f"x0={x0.tolist()},t0={t0:.17g},r={r:.17g}"] = value
    return value


# ---------------------------------------------------------- non-degeneracy


def _parabolic_boundary(patch, x0, t0, r, ns=64, nt=32):
    n = patch.n
    ts = np.linspace(t0 - r * r, t0, nt)
    if n == 1:
        lat = np.array([[t, x0[0] + s * r] for t in ts for s in (-1.0, 1.0)])
        bot = np.array([[t0 - r * r, x] for x in x0[0] + np.linspace(-r, r, ns)])
    else:
        ang = np.linspace(0.0, 2 * np.pi, ns, endpoint=False)
        ring = x0 + r * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        lat = np.array([[t, *p] for t in ts for p in ring])
        g = np.linspace(-r, r, ns // 2)
        disc = np.array([[a, b] for a in g for b in g if a * a + b * b <= r * r]) + x0
        bot = np.column_stack([np.full(len(disc), t0 - r * r), disc])
    return np.vstack([lat, bot])


def nondegeneracy_probe(patch: GraphPatch, report: Optional[FreeBoundaryReport], X0, radii) -> list:
    """``sup_{parabolic boundary of Q_r(X0)} v - v(X0) - c r^2 / (2 n theta + 1)`` per radius."""
    x0 = np.atleast_1d(np.asarray(X0[0], dtype=float))
    t0 = float(X0[1])
    interp = patch.interpolator(patch.v)
    v0 = float(interp([[t0, *x0]])[0])
    denom = 2.0 * patch.n * patch.theta + 1.0
    margins = []
    for r in radii:
        _check_space(patch, x0, r)
        if t0 - r * r < patch.times[0] - 1e-12 or t0 > patch.times[-1] + 1e-12:
            raise OutOfPatch("cylinder leaves the time window")
        pts = _parabolic_boundary(patch, x0, t0, r)
        sup = float(np.max(interp(pts)))
        margins.append(sup - v0 - patch.c * r * r / denom)
    if report is not None:
        report.nondegeneracy[f"x0={x0.tolist()},t0={t0:.17g}"] = margins
    return margins


def boundary_point(patch: GraphPatch, t: float, direction, samples: int = 2001) -> np.ndarray:
    """First crossing of ``v = tol_c`` on the ray from the patch centre along ``direction``.

    Uses the snapshot nearest to ``t``.  Raises EmptySet if the ray never
    leaves (or never meets) the coincidence set inside the box.
    """
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if d.shape != (patch.n,) or not np.linalg.norm(d) > 0:
        raise InvalidParameter(f"direction must be a non-zero {patch.n}-vector")
    d = d / np.linalg.norm(d)
    a = int(np.argmin(np.abs(patch.times - t)))
    ctr = np.array([0.5 * (ax[0] + ax[-1]) for ax in patch.axes])
    half = min(0.5 * (ax[-1] - ax[0]) for ax in patch.axes)
    s = np.linspace(0.0, half, samples)
    P = ctr + s[:, None] * d
    vals = RegularGridInterpolator(tuple(patch.axes), patch.v[a], method="linear")(P)
    cr = _crossings(vals, patch.tol_c)
    if not cr:
        raise EmptySet(f"no free-boundary crossing along {d.tolist()} at t={patch.times[a]}")
    i = cr[0]
    return ctr + (s[int(i)] + (i - int(i)) * (s[1] - s[0])) * d


# ---------------------------------------------------------------- rescale


def rescale(patch: GraphPatch, X0, r: float, s_range=(-1.0, 0.0), method: str = "cubic") -> GraphPatch:
    """Parabolic blow-up ``v_r(y, s) = (v(x0 + r y, t0 + r^2 s) - v(X0)) / r^2``.

    The target box is ``[-1, 1]^n x s_range`` sampled with as many spatial
    points as the source; ``w`` and ``phi`` are rescaled the same way.
    """
    if not r > 0:
        raise InvalidParameter("r must be positive")
    x0 = np.atleast_1d(np.asarray(X0[0], dtype=float))
    t0 = float(X0[1])
    _check_space(patch, x0, r)
    s_lo, s_hi = s_range
    t_lo, t_hi = t0 + r * r * s_lo, t0 + r * r * s_hi
    if t_lo < patch.times[0] - 1e-12 or t_hi > patch.times[-1] + 1e-12:
        raise OutOfPatch("rescaled time window leaves the patch")
    M = len(patch.axes[0])
    y = np.linspace(-1.0, 1.0, M)
    inside = np.sum((patch.times >= t_lo - 1e-12) & (patch.times <= t_hi + 1e-12))
    ns = max(5, int(inside))
    s = np.linspace(s_lo, s_hi, ns)
    T = np.clip(t0 + r * r * s, patch.times[0], patch.times[-1])
    grids = np.meshgrid(T, *[x0[i] + r * y for i in range(patch.n)], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    shape = (ns,) + (M,) * patch.n
    m = method if min(len(patch.times), M) >= 4 else "linear"

    def sample(values):
        return patch.interpolator(values, m)(pts).reshape(shape)

    base = np.array([[t0, *x0]])
    w0 = float(patch.interpolator(patch.w, m)(base)[0])
    p0 = float(patch.interpolator(patch.phi, m)(base)[0])
    v0 = p0 - w0
    w_r = (sample(patch.w) - w0) / (r * r)
    phi_r = (sample(patch.phi) - p0) / (r * r)
    dphi_r = sample(patch.dphi)
    chain = patch.chain + [{"x0": x0.tolist(), "t0": t0, "r": float(r)}]
    return replace(
        patch,
        axes=[y.copy() for _ in range(patch.n)],
        times=s,
        w=w_r,
        phi=phi_r,
        dphi=dphi_r,
        tol_c=(patch.tol_c - v0) / (r * r),
        chain=chain,
    )


# ----------------------------------------------------------- monotonicity


def _gamma_adjacent(patch, report):
    if report is None:
        report = coincidence_set(patch)
    return report, report.gamma


def preferred_direction(patch: GraphPatch, report: Optional[FreeBoundaryReport] = None) -> np.ndarray:
    """Dominant eigenvector of ``D^2 v`` averaged over free-boundary cells.

    The sign is chosen so that ``v`` grows along it on average there.
    """
    report, gam = _gamma_adjacent(patch, report)
    if not gam.any():
        raise DegenerateProfile("no free-boundary cells to estimate a direction from")
    Dv, D2v = _hessian(patch.v, patch.axes)
    H = D2v[gam].mean(axis=0)
    ev, vec = np.linalg.eigh(H)
    k = int(np.argmax(np.abs(ev)))
    if abs(ev[k]) <= 1e-12 or (patch.n > 1 and abs(ev[k]) <= 1.05 * abs(ev[1 - k])):
        raise DegenerateProfile("averaged Hessian has no dominant direction")
    e1 = vec[:, k]
    if float(np.mean(Dv[gam] @ e1)) < 0:
        e1 = -e1
    return e1


def _direction_fan(e1, kappa, count=16):
    """Unit space-time directions ``(e_space, e_t)`` with ``e . (e1, 0) >= kappa``."""
    n = e1.size
    amax = math.acos(kappa)
    if n == 1:
        return [np.array([math.cos(a) * e1[0], math.sin(a)]) for a in np.linspace(-amax, amax, count)]
    perp = np.array([-e1[1], e1[0]])
    dirs = []
    k = int(round(math.sqrt(count)))
    for a in np.linspace(amax / k, amax, k):
        for b in np.linspace(0.0, 2 * np.pi, k, endpoint=False):
            side = math.sin(a) * (math.cos(b) * np.append(perp, 0.0) + math.sin(b) * np.array([0.0, 0.0, 1.0]))
            dirs.append(math.cos(a) * np.append(e1, 0.0) + side)
    return dirs


def monotonicity_probe(
    patch: GraphPatch,
    kappa,
    C_kappa: Optional[float] = None,
    e1=None,
    report: Optional[FreeBoundaryReport] = None,
    count: int = 16,
    tol: float = 1e-6,
) -> dict:
    """Margins ``min_{Q_1/2} (C_kappa d_e v - v)`` over a cone of directions.

    ``Q_1/2`` is ``|x| <= 1/2, -1/4 <= t <= 0`` in the patch's own
    coordinates, so this is meant for rescaled patches centred on the
    free boundary.  ``kappa`` may be a scalar or a list.
    """
    kappas = [kappa] if np.isscalar(kappa) else list(kappa)
    e1 = preferred_direction(patch, report) if e1 is None else np.asarray(e1, dtype=float)
    e1 = e1 / np.linalg.norm(e1)
    Dv, _ = _hessian(patch.v, patch.axes)
    vt = np.gradient(patch.v, patch.times, axis=0)
    X = patch.coords()
    in_ball = np.linalg.norm(X, axis=-1) <= 0.5 + 1e-12
    in_time = (patch.times >= -0.25 - 1e-12) & (patch.times <= 1e-12)
    Q = in_time.reshape((-1,) + (1,) * patch.n) & in_ball[None]
    if not Q.any():
        raise OutOfPatch("patch does not contain Q_1/2")
    out = {"e1": e1.tolist(), "alpha_out_of_hypothesis": patch.out_of_hypothesis(), "levels": []}
    overall = np.inf
    for kap in kappas:
        if not 0 < kap < 1:
            raise InvalidParameter("kappa must lie in (0, 1)")
        ck = 2.0 / kap if C_kappa is None else C_kappa
        margins = []
        for e in _direction_fan(e1, kap, count):
            dv = Dv @ e[:-1] + e[-1] * vt
            margins.append(float(np.min((ck * dv - patch.v)[Q])))
        failing = [i for i, m in enumerate(margins) if m < -tol]
        overall = min(overall, min(margins))
        out["levels"].append({"kappa": kap, "C_kappa": ck, "margins": margins, "failing": failing})
    out["min_margin"] = overall
    if report is not None:
        report.monotonicity = out
    return out


# ------------------------------------------------------------- Lipschitz


def _signed_sqrt(x):
    return np.sign(x) * np.sqrt(np.abs(x))


def _crossings(line, level):
    # v grows quadratically off the contact set, so its signed square root
    # is close to linear there and interpolates the crossing accurately
    s = _signed_sqrt(np.asarray(line, dtype=float)) - _signed_sqrt(level)
    idx = np.flatnonzero(np.signbit(s[:-1]) != np.signbit(s[1:]))
    return [i + s[i] / (s[i] - s[i + 1]) for i in idx]


def _boundary_graph(patch: GraphPatch, e1, level):
    """Free boundary as ``xi = g(eta, t)`` along lines parallel to e1."""
    n = patch.n
    h = patch.spacing
    M = len(patch.axes[0])
    if n == 1:
        sign = 1.0 if e1[0] > 0 else -1.0
        lines = [(0.0, lambda a: patch.v[a][:: int(sign)], patch.axes[0][:: int(sign)] * sign)]
    else:
        perp = np.array([-e1[1], e1[0]])
        half = patch.axes[0][-1] - patch.axes[0][0]
        etas = np.linspace(-half / 2, half / 2, M)
        xi = np.linspace(-half / 2, half / 2, 2 * M)
        lines = []
        for eta in etas:
            P = eta * perp + xi[:, None] * e1 + np.array([ax.mean() for ax in patch.axes])
            lines.append((eta, P, xi))
    g = {}
    for a, t in enumerate(patch.times):
        if n == 1:
            eta, fetch, coord = lines[0]
            cr = _crossings(fetch(a), level)
            if len(cr) > 1:
                raise NotGraphLike(f"free boundary crosses a line {len(cr)} times at t={t}")
            if cr:
                i = cr[0]
                g[(0, a)] = coord[int(i)] + (i - int(i)) * (coord[1] - coord[0])
            continue
        interp = RegularGridInterpolator(tuple(patch.axes), patch.v[a], bounds_error=False, fill_value=None)
        nodes = patch.coords().reshape(-1, n)
        node_v = patch.v[a].reshape(-1)
        for j, (eta, P, coord) in enumerate(lines):
            inside = np.all([(P[:, i] >= patch.axes[i][0]) & (P[:, i] <= patch.axes[i][-1])
                             for i in range(n)], axis=0)
            if inside.sum() < 2:
                continue
            vals = interp(P[inside])
            cr = _crossings(vals, level)
            if len(cr) > 1:
                raise NotGraphLike(f"free boundary crosses a line {len(cr)} times at t={t}")
            if cr:
                cc = coord[inside]
                i = cr[0]
                crude = cc[int(i)] + (i - int(i)) * (cc[1] - cc[0])
                side = 1.0 if vals[-1] > vals[0] else -1.0
                fine = _refine_crossing(nodes, node_v, P[0] - coord[0] * e1, e1, perp,
                                        crude, side, level, h)
                if fine is not None:
                    g[(j, a)] = fine
    return g, (etas if n > 1 else np.zeros(1))


def _refine_crossing(nodes, node_v, origin, e1, perp, crude, side, level, h):
    """Re-locate a crossing on the line ``origin + xi e1`` from nearby grid values.

    Bilinear sampling snaps the level set towards cell edges where the
    contact boundary cuts a cell.  Off the contact set ``v`` is smooth, so
    fit a quadratic in (xi, eta) to the grid nodes lying 2 to 8 cells
    beyond the crude crossing and within 2 cells of the line, then take
    the root of its restriction to the line at ``level``.  Returns None
    when too few nodes are available (lines near the patch edge).
    """
    rel = nodes - origin
    xi = rel @ e1 - crude
    eta = rel @ perp
    sel = (side * xi >= 2.0 * h) & (side * xi <= 8.0 * h) & (np.abs(eta) <= 2.0 * h)
    if sel.sum() < 12:
        return None
    x, y = xi[sel], eta[sel]
    A = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coef, *_ = np.linalg.lstsq(A, node_v[sel], rcond=None)
    c0, c1, c2 = coef[0], coef[1], coef[3]
    if c2 <= 0:
        return None
    disc = c1 * c1 - 4.0 * c2 * (c0 - level)
    # a tiny level can sit below the fitted minimum; the vertex is then the crossing
    x0 = (-c1 + side * math.sqrt(max(disc, 0.0))) / (2.0 * c2)
    if abs(x0) > 2.0 * h:
        return None
    return float(crude + x0)


def _lipschitz_one(patch, e1, level):
    g, etas = _boundary_graph(patch, e1, level)
    if not g:
        raise NotGraphLike("no free boundary crossings in the patch")
    slope = 0.0
    for (j, a), val in g.items():
        if (j + 1, a) in g:
            slope = max(slope, abs(g[(j + 1, a)] - val) / abs(etas[j + 1] - etas[j]))
        if (j, a + 1) in g:
            slope = max(slope, abs(g[(j, a + 1)] - val) / abs(patch.times[a + 1] - patch.times[a]))
    return slope


def lipschitz_estimate(levels: Sequence, e1=None, tol_c: Optional[float] = None) -> list:
    """Largest slope of the free boundary as a graph over ``e1^perp`` x time.

    ``levels`` is a sequence of patches (typically successive zooms) or
    ``(patch, report)`` pairs.  Spatial slopes use neighbouring lines,
    temporal slopes neighbouring time slices, both in the patch's units.
    """
    out = []
    for item in levels:
        patch, report = item if isinstance(item, tuple) else (item, None)
        if e1 is None:
            d = preferred_direction(patch, report)
        else:
            d = np.asarray(e1, dtype=float)
            d = d / np.linalg.norm(d)
        level = patch.tol_c if tol_c is None else tol_c
        val = _lipschitz_one(patch, d, level)
        out.append(val)
        if report is not None:
            report.lipschitz.append(val)
    return out


# -------------------------------------------------- speed / blowup checks


def speed_continuity(patch: GraphPatch, report: Optional[FreeBoundaryReport] = None, d_cells=(4, 2, 1)) -> list:
    """``max |d_t v|`` over non-contact cells within ``d`` cells of the free boundary."""
    report, gam = _gamma_adjacent(patch, report)
    vt = np.abs(np.gradient(patch.v, patch.times, axis=0))
    out = []
    dist = np.stack([distance_transform_edt(~gam[a]) if gam[a].any() else np.full(gam[a].shape, np.inf)
                     for a in range(len(patch.times))])
    omega = ~report.mask
    for d in d_cells:
        sel = omega & (dist <= d)
        out.append(float(vt[sel].max()) if sel.any() else float("nan"))
    return out


def blowup_fit(patch: GraphPatch, e1=None, report: Optional[FreeBoundaryReport] = None) -> dict:
    """Least-squares fit ``v ~ (gamma/2) (y.e1)_+^2 + tau s + k`` on the patch.

    Returns ``gamma``, ``tau`` and ``ratio = |tau| / |gamma|``.
    """
    e1 = preferred_direction(patch, report) if e1 is None else np.asarray(e1, dtype=float)
    X = patch.coords()
    eta = np.maximum(X @ e1, 0.0)
    S = np.broadcast_to(patch.times.reshape((-1,) + (1,) * patch.n), patch.v.shape)
    A = np.column_stack([
        0.5 * np.broadcast_to(eta**2, patch.v.shape).ravel(),
        S.ravel(),
        np.ones(patch.v.size),
    ])
    coef, *_ = np.linalg.lstsq(A, patch.v.ravel(), rcond=None)
    gamma, tau = float(coef[0]), float(coef[1])
    return {"gamma": gamma, "tau": tau, "ratio": abs(tau) / max(abs(gamma), 1e-300)}


def cap_patch(patch: GraphPatch, cap: float) -> GraphPatch:
    """Negative control: clamp ``v`` at ``cap`` (by lowering phi)."""
    v = np.minimum(patch.v, cap)
    return replace(patch, phi=patch.w + v)


def write_patch_csv(path, patch: GraphPatch) -> None:
    """CSV ``i,j,t_index,w,phi,v`` (``j`` is 0 for one-dimensional patches)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["i", "j", "t_index", "w", "phi", "v"])
        v = patch.v
        for a in range(len(patch.times)):
            for idx in np.ndindex(patch.w.shape[1:]):
                i, j = (idx[0], 0) if patch.n == 1 else idx
                k = (a,) + idx
                wr.writerow([i, j, a, f"{patch.w[k]:.17g}", f"{patch.phi[k]:.17g}", f"{v[k]:.17g}"])
