"""Finite-difference calculus for support functions on S^1 and S^2.

A convex body is described by its support function ``u`` sampled on a grid
of outward normals.  The second fundamental form in these coordinates is

    h_ij = Hess(u)_ij + u g_ij

whose eigenvalues with respect to the round metric ``g`` are the radii of
curvature 1/lambda_i.  Everything here is vectorised numpy; the solver uses
fused kernels from :mod:`gcf._kernels` that are checked against these
functions in the test-suite.

Grid conventions
----------------
n = 1
    ``N`` nodes at ``theta_k = 2 pi k / N``; fields have shape ``(N,)``.
n = 2
    ``N_theta`` colatitude rings at ``theta_i = (i + 1/2) pi / N_theta``
    times ``N_psi`` azimuths ``psi_j = 2 pi j / N_psi``; fields have shape
    ``(N_theta, N_psi)``.  No node sits on a pole.  Colatitude stencils at
    the first and last ring read across the pole from the antipodal
    azimuth ``psi + pi`` (so ``N_psi`` must be even).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GridMismatch, NotConvex, ResolutionTooSmall, UnsupportedDimension

__all__ = [
    "SphericalGrid",
    "SymTensorField",
    "CurvatureBundle",
    "build_grid",
    "covariant_hessian",
    "second_fundamental_form",
    "curvatures",
    "embed",
    "codazzi_residual",
    "gradient_norm",
    "support_ball",
    "support_ellipsoid",
    "write_point_cloud",
]


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    """Discretisation of S^n for n in {1, 2}.

    Attributes
    ----------
    n : int
        Dimension of the sphere.
    shape : tuple
        Array shape of a scalar field on this grid.
    theta, psi : ndarray
        Node angles.  ``psi`` is ``None`` when ``n == 1``.
    h_theta, h_psi : float
        Mesh spacings (``h_psi`` is ``None`` when ``n == 1``).
    """

    n: int
    shape: tuple
    theta: np.ndarray
    psi: Optional[np.ndarray]
    h_theta: float
    h_psi: Optional[float]
    antipode: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def sin_theta(self) -> np.ndarray:
        """sin(theta) broadcastable against fields (n=2 only)."""
        return np.sin(self.theta)[:, None]

    @property
    def cos_theta(self) -> np.ndarray:
        return np.cos(self.theta)[:, None]

    def metric(self) -> np.ndarray:
        """Metric components per node, shape ``shape + (n, n)``."""
        g = np.zeros(self.shape + (self.n, self.n))
        g[..., 0, 0] = 1.0
        if self.n == 2:
            g[..., 1, 1] = np.broadcast_to(self.sin_theta**2, self.shape)
        return g

    def metric_det(self) -> np.ndarray:
        if self.n == 1:
            return np.ones(self.shape)
        return np.broadcast_to(self.sin_theta**2, self.shape).copy()

    def normals(self) -> np.ndarray:
        """Unit normals z of every node, shape ``shape + (n+1,)``."""
        if self.n == 1:
            return np.stack([np.cos(self.theta), np.sin(self.theta)], axis=-1)
        th, ps = np.meshgrid(self.theta, self.psi, indexing="ij")
        return np.stack(
            [np.sin(th) * np.cos(ps), np.sin(th) * np.sin(ps), np.cos(th)], axis=-1
        )

    def min_spacing_sq(self) -> np.ndarray:
        """Smallest squared mesh spacing per node (azimuth scaled by sin theta)."""
        if self.n == 1:
            return np.full(self.shape, self.h_theta**2)
        az = (self.h_psi * self.sin_theta) ** 2
        return np.broadcast_to(np.minimum(self.h_theta**2, az), self.shape).copy()

    def check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise GridMismatch(f"field of shape {u.shape} does not live on grid {self.shape}")
        return u


def build_grid(n: int, resolution) -> SphericalGrid:
    """Build a grid on S^n.

    ``resolution`` is ``N`` for n=1 and ``(N_theta, N_psi)`` for n=2.
    """
    if n not in (1, 2):
        raise UnsupportedDimension(f"only n=1 and n=2 are implemented, got n={n}")
    if n == 1:
        N = int(np.atleast_1d(resolution)[0])
        if N < 8:
            raise ResolutionTooSmall(f"need at least 8 nodes per period, got {N}")
        h = 2.0 * np.pi / N
        theta = h * np.arange(N)
        return SphericalGrid(1, (N,), theta, None, h, None)

    try:
        nt, npsi = (int(r) for r in resolution)
    except TypeError:
        raise ResolutionTooSmall("n=2 needs a (N_theta, N_psi) resolution") from None
    if npsi < 8 or nt < 4:
        raise ResolutionTooSmall(
            f"need N_psi >= 8 and N_theta >= 4 (8 nodes per period), got {nt}x{npsi}"
        )
    if npsi % 2:
        raise ResolutionTooSmall("N_psi must be even for the antipodal pole rule")
    ht = np.pi / nt
    hp = 2.0 * np.pi / npsi
    theta = (np.arange(nt) + 0.5) * ht
    psi = hp * np.arange(npsi)
    antipode = (np.arange(npsi) + npsi // 2) % npsi
    return SphericalGrid(2, (nt, npsi), theta, psi, ht, hp, antipode)


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Symmetric n x n tensor per node; only the upper triangle is stored.

    ``comps[..., k]`` runs over (tt) for n=1 and (tt, tp, pp) for n=2.
    """

    grid: SphericalGrid
    comps: np.ndarray

    def matrix(self) -> np.ndarray:
        if self.grid.n == 1:
            return self.comps[..., None]
        m = np.empty(self.grid.shape + (2, 2))
        m[..., 0, 0] = self.comps[..., 0]
        m[..., 0, 1] = m[..., 1, 0] = self.comps[..., 1]
        m[..., 1, 1] = self.comps[..., 2]
        return m

    def __add__(self, other):
        if not isinstance(other, SymTensorField) or other.grid is not self.grid:
            return NotImplemented
        return SymTensorField(self.grid, self.comps + other.comps)


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    """Gauss curvature K, sorted principal curvatures and mean curvature H."""

    K: np.ndarray
    lam: np.ndarray
    H: np.ndarray

    @property
    def lam_min(self) -> np.ndarray:
        return self.lam[..., 0]

    @property
    def lam_max(self) -> np.ndarray:
        return self.lam[..., -1]


def _pad_rings(grid: SphericalGrid, f: np.ndarray, parity: float = 1.0) -> np.ndarray:
    """Add one ghost ring across each pole (values from the antipodal azimuth).

    ``parity`` is -1 for tensor components carrying a single theta index,
    since d/dtheta flips sign when continued through the pole.
    """
    top = parity * f[0, grid.antipode]
    bot = parity * f[-1, grid.antipode]
    return np.concatenate([top[None], f, bot[None]], axis=0)


def _dtheta(grid, fp):
    return (fp[2:] - fp[:-2]) / (2.0 * grid.h_theta)


def _dpsi(grid, f):
    return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2.0 * grid.h_psi)


def _periodic_d1(f, h):
    return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * h)


def _periodic_d2(f, h):
    return (np.roll(f, -1) - 2.0 * f + np.roll(f, 1)) / (h * h)


def _first_derivatives(u: np.ndarray, grid: SphericalGrid):
    if grid.n == 1:
        return (_periodic_d1(u, grid.h_theta),)
    up = _pad_rings(grid, u)
    return _dtheta(grid, up), _dpsi(grid, u)


def covariant_hessian(u, grid: SphericalGrid) -> SymTensorField:
    """Second-order centred covariant Hessian of a scalar field."""
    u = grid.check(u)
    if grid.n == 1:
        return SymTensorField(grid, _periodic_d2(u, grid.h_theta)[..., None])
    ht, hp = grid.h_theta, grid.h_psi
    s, c = grid.sin_theta, grid.cos_theta
    up = _pad_rings(grid, u)
    u_t = _dtheta(grid, up)
    u_tt = (up[2:] - 2.0 * u + up[:-2]) / (ht * ht)
    u_p = _dpsi(grid, u)
    u_pp = (np.roll(u, -1, axis=1) - 2.0 * u + np.roll(u, 1, axis=1)) / (hp * hp)
    u_tp = _dtheta(grid, _dpsi(grid, up))
    comps = np.stack([u_tt, u_tp - (c / s) * u_p, u_pp + s * c * u_t], axis=-1)
    return SymTensorField(grid, comps)


def second_fundamental_form(u, grid: SphericalGrid) -> SymTensorField:
    """h = Hess(u) + u g."""
    u = grid.check(u)
    hess = covariant_hessian(u, grid)
    comps = hess.comps.copy()
    comps[..., 0] += u
    if grid.n == 2:
        comps[..., 2] += u * grid.sin_theta**2
    return SymTensorField(grid, comps)


def _radii(h: SymTensorField):
    """Normalised entries (a, b, d) of g^{-1/2} h g^{-1/2} for n=2."""
    s = h.grid.sin_theta
    return h.comps[..., 0], h.comps[..., 1] / s, h.comps[..., 2] / (s * s)


def curvatures(h: SymTensorField, grid: SphericalGrid) -> CurvatureBundle:
    """Gauss, principal and mean curvature from the second fundamental form.

    Raises :class:`NotConvex` if ``h`` fails to be positive definite at a node.
    """
    if h.grid is not grid:
        raise GridMismatch("tensor field lives on a different grid")
    if grid.n == 1:
        r = h.comps[..., 0]
        bad = np.flatnonzero(~(r > 0))
        if bad.size:
            raise NotConvex(f"h <= 0 at node {bad[0]}", node=int(bad[0]))
        K = 1.0 / r
        return CurvatureBundle(K, K[..., None].copy(), K.copy())

    a, b, d = _radii(h)
    det = a * d - b * b
    tr = a + d
    bad = np.flatnonzero(~((det > 0) & (a > 0)))
    if bad.size:
        node = np.unravel_index(bad[0], grid.shape)
        raise NotConvex(f"h not positive definite at node {node}", node=tuple(map(int, node)))
    r_big = 0.5 * tr + np.sqrt((0.5 * (a - d)) ** 2 + b * b)
    r_small = det / r_big
    lam = np.stack([1.0 / r_big, 1.0 / r_small], axis=-1)
    K = 1.0 / det
    return CurvatureBundle(K, lam, lam[..., 0] + lam[..., 1])


def gradient_norm(u, grid: SphericalGrid) -> np.ndarray:
    """|grad u| with respect to the round metric."""
    u = grid.check(u)
    if grid.n == 1:
        return np.abs(_periodic_d1(u, grid.h_theta))
    u_t, u_p = _first_derivatives(u, grid)
    return np.sqrt(u_t**2 + (u_p / grid.sin_theta) ** 2)


def embed(u, grid: SphericalGrid) -> np.ndarray:
    """Points X(z) = grad u(z) + u(z) z, one row per node in C order."""
    u = grid.check(u)
    z = grid.normals()
    if grid.n == 1:
        (u_t,) = _first_derivatives(u, grid)
        e_t = np.stack([-np.sin(grid.theta), np.cos(grid.theta)], axis=-1)
        X = u_t[:, None] * e_t + u[:, None] * z
        return X
    u_t, u_p = _first_derivatives(u, grid)
    th, ps = np.meshgrid(grid.theta, grid.psi, indexing="ij")
    e_t = np.stack([np.cos(th) * np.cos(ps), np.cos(th) * np.sin(ps), -np.sin(th)], axis=-1)
    e_p = np.stack([-np.sin(ps), np.cos(ps), np.zeros_like(ps)], axis=-1)
    X = u_t[..., None] * e_t + (u_p / np.sin(th))[..., None] * e_p + u[..., None] * z
    return X.reshape(-1, 3)


def codazzi_residual(u, grid: SphericalGrid) -> float:
    """Max coordinate-frame defect of total symmetry of grad h.

    The two independent Codazzi defects on S^2 are

        R1 = nabla_t h_pp - nabla_p h_tp
        R2 = nabla_p h_tt - nabla_t h_tp

    written out with the round-sphere Christoffel symbols.  Returns 0 for n=1.
    """
    u = grid.check(u)
    if grid.n == 1:
        return 0.0
    h = second_fundamental_form(u, grid).comps
    s, c = grid.sin_theta, grid.cos_theta
    h_tt, h_tp, h_pp = h[..., 0], h[..., 1], h[..., 2]
    d_t_pp = _dtheta(grid, _pad_rings(grid, h_pp))
    d_t_tp = _dtheta(grid, _pad_rings(grid, h_tp, parity=-1.0))
    r1 = d_t_pp - (c / s) * h_pp - _dpsi(grid, h_tp) - s * c * h_tt
    r2 = _dpsi(grid, h_tt) - (c / s) * h_tp - d_t_tp
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def support_ball(grid: SphericalGrid, radius: float, center=None) -> np.ndarray:
    """Support function <a, z> + r of the ball with centre a and radius r."""
    z = grid.normals()
    u = np.full(grid.shape, float(radius))
    if center is not None:
        u = u + z @ np.asarray(center, dtype=float)
    return u


def support_ellipsoid(grid: SphericalGrid, axes) -> np.ndarray:
    """Support function sqrt(sum a_i^2 z_i^2) of an axis-aligned ellipsoid."""
    axes = np.asarray(axes, dtype=float)
    if axes.shape != (grid.n + 1,):
        raise GridMismatch(f"need {grid.n + 1} semi-axes, got {axes.shape}")
    z = grid.normals()
    return np.sqrt(np.sum((axes * z) ** 2, axis=-1))


def write_point_cloud(path, u, grid: SphericalGrid) -> None:
    """CSV export ``node_index,theta[,psi],x,y[,z]`` with 17 significant digits."""
    X = embed(u, grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if grid.n == 1:
            w.writerow(["node_index", "theta", "x", "y"])
            for k in range(grid.size):
                w.writerow([k, f"{grid.theta[k]:.17g}", f"{X[k, 0]:.17g}", f"{X[k, 1]:.17g}"])
        else:
            w.writerow(["node_index", "theta", "psi", "x", "y", "z"])
            npsi = grid.shape[1]
            for k in range(grid.size):
                i, j = divmod(k, npsi)
                w.writerow(
                    [k, f"{grid.theta[i]:.17g}", f"{grid.psi[j]:.17g}"]
                    + [f"{x:.17g}" for x in X[k]]
                )
