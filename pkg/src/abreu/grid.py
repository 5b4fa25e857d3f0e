"""
Uniform Cartesian grids, domain masks and finite-difference calculus in 2D.

Fields are plain ``numpy`` arrays of shape ``(nx, ny)`` indexed ``[i, j]`` with
``i`` running along ``x1`` and ``j`` along ``x2``. Quantities that need a full
3x3 neighbourhood (Hessians, gradients) are returned with ``NaN`` on the
outermost ring of the grid; callers restrict to ``Domain.interior``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from abreu.errors import DomainError, MaskError


@dataclass(frozen=True)
class Grid:
    """Node-centred uniform grid on ``[a1, b1] x [a2, b2]``."""

    nx: int
    ny: int
    bounds: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)

    def __post_init__(self):
        if self.nx < 5 or self.ny < 5:
            raise MaskError(f"grid needs at least 5 nodes per axis, got {self.nx}x{self.ny}")
        a1, b1, a2, b2 = self.bounds
        if not (b1 > a1 and b2 > a2):
            raise MaskError(f"degenerate bounds {self.bounds}")

    @classmethod
    def square(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> Grid:
        return cls(n, n, (lo, hi, lo, hi))

    @property
    def h1(self) -> float:
        a1, b1, _, _ = self.bounds
        return (b1 - a1) / (self.nx - 1)

    @property
    def h2(self) -> float:
        _, _, a2, b2 = self.bounds
        return (b2 - a2) / (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.h1, self.h2)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        a1, b1, a2, b2 = self.bounds
        return np.linspace(a1, b1, self.nx), np.linspace(a2, b2, self.ny)

    @property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays ``(X1, X2)`` of shape ``(nx, ny)``."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def points(self) -> np.ndarray:
        """Node coordinates stacked on the last axis, shape ``(nx, ny, 2)``."""
        return np.stack(self.coords, axis=-1)

    def evaluate(self, fn) -> np.ndarray:
        """Evaluate ``fn(x1, x2)`` on every node."""
        x1, x2 = self.coords
        return np.broadcast_to(np.asarray(fn(x1, x2), dtype=float), self.shape).copy()

    def index_interior(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m


class NodeClass(IntEnum):
    EXTERIOR = 0
    INTERIOR_OMEGA = 1
    INTERIOR_OMEGA0 = 2
    BOUNDARY_OMEGA = 3
    BOUNDARY_OMEGA0_BAND = 4


# ---------------------------------------------------------------------------
# shapes

_TOL = 1e-10


@dataclass(frozen=True)
class Rectangle:
    a1: float
    b1: float
    a2: float
    b2: float

    def contains(self, x1, x2):
        return (x1 >= self.a1 - _TOL) & (x1 <= self.b1 + _TOL) & (x2 >= self.a2 - _TOL) & (x2 <= self.b2 + _TOL)

    def normal(self, x1, x2):
        """Outward normal at points on the rectangle boundary; corners get the bisector."""
        n1 = np.where(np.abs(x1 - self.b1) < _TOL, 1.0, 0.0) - np.where(np.abs(x1 - self.a1) < _TOL, 1.0, 0.0)
        n2 = np.where(np.abs(x2 - self.b2) < _TOL, 1.0, 0.0) - np.where(np.abs(x2 - self.a2) < _TOL, 1.0, 0.0)
        nrm = np.hypot(n1, n2)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.stack([n1 / nrm, n2 / nrm], axis=-1)

    @property
    def area(self) -> float:
        return (self.b1 - self.a1) * (self.b2 - self.a2)


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def contains(self, x1, x2):
        return np.hypot(x1 - self.center[0], x2 - self.center[1]) <= self.radius + _TOL

    def normal(self, x1, x2):
        d1, d2 = x1 - self.center[0], x2 - self.center[1]
        r = np.hypot(d1, d2)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.stack([d1 / r, d2 / r], axis=-1)

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass(frozen=True)
class Superellipse:
    """``|x1/a|^k + |x2/b|^k <= 1`` around ``center``. ``k = 2`` is an ellipse.

    For ``k > 2`` the boundary curvature vanishes where the curve crosses the axes.
    """

    center: tuple[float, float] = (0.0, 0.0)
    a: float = 1.0
    b: float = 1.0
    k: float = 2.0

    def level(self, x1, x2):
        return np.abs((x1 - self.center[0]) / self.a) ** self.k + np.abs((x2 - self.center[1]) / self.b) ** self.k

    def contains(self, x1, x2):
        return self.level(x1, x2) <= 1.0 + _TOL

    def _derivs(self, x1, x2):
        k, a, b = self.k, self.a, self.b
        y1, y2 = (x1 - self.center[0]) / a, (x2 - self.center[1]) / b
        f1 = k * np.sign(y1) * np.abs(y1) ** (k - 1) / a
        f2 = k * np.sign(y2) * np.abs(y2) ** (k - 1) / b
        f11 = k * (k - 1) * np.abs(y1) ** (k - 2) / a**2
        f22 = k * (k - 1) * np.abs(y2) ** (k - 2) / b**2
        return f1, f2, f11, f22

    def normal(self, x1, x2):
        f1, f2, _, _ = self._derivs(x1, x2)
        nrm = np.hypot(f1, f2)
        return np.stack([f1 / nrm, f2 / nrm], axis=-1)

    def curvature(self, x1, x2):
        """Curvature of the level curve through each point (div of the unit normal)."""
        f1, f2, f11, f22 = self._derivs(x1, x2)
        return (f11 * f2**2 + f22 * f1**2) / np.hypot(f1, f2) ** 3

    @property
    def area(self) -> float:
        k = self.k
        return 4 * self.a * self.b * math.gamma(1 + 1 / k) ** 2 / math.gamma(1 + 2 / k)


_ALLOWED = {(Rectangle, Rectangle), (Rectangle, Disk), (Superellipse, Disk)}


# ---------------------------------------------------------------------------
# domain mask


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Boundary nodes with outward normals and arc-length weights.

    On a rectangle every face is listed separately, so corner nodes appear once
    per adjacent face, each time with that face's normal.
    """

    i: np.ndarray
    j: np.ndarray
    normal: np.ndarray
    weight: np.ndarray
    curvature: np.ndarray

    @property
    def length(self) -> float:
        return float(self.weight.sum())


@dataclass(frozen=True, eq=False)
class Domain:
    grid: Grid
    omega: Rectangle | Superellipse
    omega0: Rectangle | Disk
    node_class: np.ndarray
    normals: np.ndarray
    normals0: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def _is(self, *classes):
        return np.isin(self.node_class, [int(c) for c in classes])

    @property
    def boundary(self) -> np.ndarray:
        return self._is(NodeClass.BOUNDARY_OMEGA)

    @property
    def interior(self) -> np.ndarray:
        return self._is(NodeClass.INTERIOR_OMEGA, NodeClass.INTERIOR_OMEGA0, NodeClass.BOUNDARY_OMEGA0_BAND)

    @property
    def inside(self) -> np.ndarray:
        return self.node_class != NodeClass.EXTERIOR

    @property
    def in_omega0(self) -> np.ndarray:
        """Closed Omega_0: interior nodes plus the boundary band."""
        return self._is(NodeClass.INTERIOR_OMEGA0, NodeClass.BOUNDARY_OMEGA0_BAND)

    @property
    def band(self) -> np.ndarray:
        return self._is(NodeClass.BOUNDARY_OMEGA0_BAND)

    @property
    def outer(self) -> np.ndarray:
        """Nodes of Omega minus Omega_0 (boundary of Omega included)."""
        return self.inside & ~self.in_omega0

    @property
    def is_rectangle(self) -> bool:
        return isinstance(self.omega, Rectangle)

    @property
    def dist_omega0(self) -> float:
        """Distance between the Omega_0 nodes and the boundary nodes of Omega."""
        if "dist" not in self._cache:
            pts = self.grid.points
            tree = cKDTree(pts[self.boundary])
            d, _ = tree.query(pts[self.in_omega0])
            self._cache["dist"] = float(d.min())
        return self._cache["dist"]

    def weights(self) -> np.ndarray:
        """Quadrature weights over Omega (trapezoid on rectangles)."""
        if "w" not in self._cache:
            g = self.grid
            if self.is_rectangle:
                w1 = np.full(g.nx, g.h1)
                w1[[0, -1]] *= 0.5
                w2 = np.full(g.ny, g.h2)
                w2[[0, -1]] *= 0.5
                w = np.outer(w1, w2)
            else:
                w = np.where(self.inside, g.h1 * g.h2, 0.0)
            self._cache["w"] = w
        return self._cache["w"]

    def weights0(self) -> np.ndarray:
        """Quadrature weights over Omega_0 (trapezoid when Omega_0 is a grid-aligned box)."""
        if "w0" not in self._cache:
            g = self.grid
            m = self.in_omega0
            w = np.where(m, g.h1 * g.h2, 0.0)
            if isinstance(self.omega0, Rectangle):
                ii, jj = np.nonzero(m)
                x1, x2 = g.axes
                r = self.omega0
                aligned = (
                    abs(x1[ii.min()] - r.a1) < _TOL
                    and abs(x1[ii.max()] - r.b1) < _TOL
                    and abs(x2[jj.min()] - r.a2) < _TOL
                    and abs(x2[jj.max()] - r.b2) < _TOL
                )
                if aligned:
                    w[[ii.min(), ii.max()], :] *= 0.5
                    w[:, [jj.min(), jj.max()]] *= 0.5
            self._cache["w0"] = w
        return self._cache["w0"]

    def weights_outer(self) -> np.ndarray:
        """Quadrature weights over Omega minus Omega_0."""
        return self.weights() - self.weights0()

    def integrate(self, values, region: str = "omega") -> float:
        w = {"omega": self.weights, "omega0": self.weights0, "outer": self.weights_outer}[region]()
        m = w != 0
        return float(np.sum(w[m] * np.asarray(values)[m]))

    def boundary_quadrature(self) -> BoundaryQuadrature:
        if "bq" not in self._cache:
            self._cache["bq"] = _boundary_quadrature(self)
        return self._cache["bq"]


def build_domain(omega, omega0, grid: Grid) -> Domain:
    """Classify every grid node and attach outward normals.

    Raises
    ------
    MaskError
        If the shape combination is unsupported, Omega_0 resolves to fewer than
        9 interior nodes, or Omega_0 comes within 2 nodes of the boundary.
    """
    if (type(omega), type(omega0)) not in _ALLOWED:
        raise MaskError(f"unsupported domain pair {type(omega).__name__} + {type(omega0).__name__}")
    x1, x2 = grid.coords
    if isinstance(omega, Rectangle):
        if not np.allclose((omega.a1, omega.b1, omega.a2, omega.b2), grid.bounds):
            raise MaskError("a rectangular Omega must coincide with the grid bounds")
        inside = np.ones(grid.shape, dtype=bool)
    else:
        inside = omega.contains(x1, x2)
        if inside[0, :].any() or inside[-1, :].any() or inside[:, 0].any() or inside[:, -1].any():
            raise MaskError("grid bounds must strictly enclose the superellipse")

    # a node is interior when its whole 3x3 neighbourhood lies in Omega
    full = ndimage.binary_erosion(inside, structure=np.ones((3, 3)), border_value=0)
    boundary = inside & ~full

    in0 = omega0.contains(x1, x2) & inside
    inner0 = ndimage.binary_erosion(in0, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    band = in0 & ~inner0

    if inner0.sum() < 9:
        raise MaskError(f"grid too coarse: Omega_0 resolves to {int(inner0.sum())} interior nodes (< 9)")
    near = ndimage.binary_dilation(boundary, structure=np.ones((3, 3)), iterations=2)
    if (in0 & near).any():
        raise MaskError("Omega_0 must stay at least 2 nodes away from the boundary of Omega")

    cls = np.full(grid.shape, int(NodeClass.EXTERIOR), dtype=np.int8)
    cls[full] = NodeClass.INTERIOR_OMEGA
    cls[inner0] = NodeClass.INTERIOR_OMEGA0
    cls[band] = NodeClass.BOUNDARY_OMEGA0_BAND
    cls[boundary] = NodeClass.BOUNDARY_OMEGA

    normals = np.full(grid.shape + (2,), np.nan)
    normals[boundary] = omega.normal(x1[boundary], x2[boundary])
    normals0 = np.full(grid.shape + (2,), np.nan)
    normals0[band] = omega0.normal(x1[band], x2[band])
    return Domain(grid, omega, omega0, cls, normals, normals0)


def standard_domain(n: int = 65) -> Domain:
    """``Omega = [-1, 1]^2`` with ``Omega_0 = [-1/2, 1/2]^2`` on an ``n x n`` grid."""
    return build_domain(Rectangle(-1, 1, -1, 1), Rectangle(-0.5, 0.5, -0.5, 0.5), Grid.square(n))


# ---------------------------------------------------------------------------
# finite-difference calculus


@dataclass(frozen=True)
class Hessian:
    u11: np.ndarray
    u12: np.ndarray
    u22: np.ndarray

    @property
    def det(self) -> np.ndarray:
        return self.u11 * self.u22 - self.u12**2

    @property
    def trace(self) -> np.ndarray:
        return self.u11 + self.u22

    def matrix(self) -> np.ndarray:
        return np.stack([np.stack([self.u11, self.u12], -1), np.stack([self.u12, self.u22], -1)], -2)

    def min_eigenvalue(self) -> np.ndarray:
        half = 0.5 * (self.u11 + self.u22)
        return half - np.sqrt(0.25 * (self.u11 - self.u22) ** 2 + self.u12**2)


@dataclass(frozen=True)
class Cofactor:
    """2D cofactor matrix ``[[u22, -u12], [-u12, u11]]``."""

    c11: np.ndarray
    c12: np.ndarray
    c22: np.ndarray

    @property
    def det(self) -> np.ndarray:
        return self.c11 * self.c22 - self.c12**2

    @property
    def trace(self) -> np.ndarray:
        return self.c11 + self.c22

    def matrix(self) -> np.ndarray:
        return np.stack([np.stack([self.c11, self.c12], -1), np.stack([self.c12, self.c22], -1)], -2)


def _ring(core: np.ndarray) -> np.ndarray:
    out = np.full((core.shape[0] + 2, core.shape[1] + 2), np.nan)
    out[1:-1, 1:-1] = core
    return out


def hessian(u: np.ndarray, grid: Grid) -> Hessian:
    """Centred second differences; ``u12`` uses the 4-point cross stencil."""
    h1, h2 = grid.h1, grid.h2
    c = u[1:-1, 1:-1]
    u11 = (u[2:, 1:-1] - 2 * c + u[:-2, 1:-1]) / h1**2
    u22 = (u[1:-1, 2:] - 2 * c + u[1:-1, :-2]) / h2**2
    u12 = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4 * h1 * h2)
    return Hessian(_ring(u11), _ring(u12), _ring(u22))


def cofactor(H: Hessian) -> Cofactor:
    return Cofactor(H.u22.copy(), -H.u12, H.u11.copy())


def gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Centred first differences, shape ``(2, nx, ny)`` with a NaN ring."""
    d1 = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * grid.h1)
    d2 = (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * grid.h2)
    return np.stack([_ring(d1), _ring(d2)])


def divergence_free_defect(U: Cofactor, grid: Grid) -> np.ndarray:
    """Row divergences ``D_j U^{ij}`` of the cofactor field, shape ``(2, nx, ny)``.

    Only nodes two steps in from the grid edge carry finite values.
    """
    g11, g12, g22 = (gradient(c, grid) for c in (U.c11, U.c12, U.c22))
    return np.stack([g11[0] + g12[1], g12[0] + g22[1]])


DIRECTIONS = ((1, 0), (0, 1), (1, 1), (1, -1))


def directional_second_differences(u: np.ndarray, grid: Grid, directions=DIRECTIONS) -> np.ndarray:
    """Second differences along lattice directions, divided by the step length squared.

    Returns shape ``(len(directions), nx, ny)``; nodes whose stencil leaves the
    grid are NaN.
    """
    nx, ny = u.shape
    out = np.full((len(directions), nx, ny), np.nan)
    for k, (a, b) in enumerate(directions):
        ra, rb = abs(a), abs(b)
        step2 = (a * grid.h1) ** 2 + (b * grid.h2) ** 2
        sl = (slice(ra, nx - ra), slice(rb, ny - rb))
        plus = u[ra + a : nx - ra + a, rb + b : ny - rb + b]
        minus = u[ra - a : nx - ra - a, rb - b : ny - rb - b]
        out[k][sl] = (plus - 2 * u[sl] + minus) / step2
    return out


def check_discrete_convexity(u: np.ndarray, where, tol: float = 1e-8) -> list[tuple[int, int]]:
    """Interior nodes where some axis or diagonal second difference is below ``-tol``.

    ``where`` is a :class:`Domain` (its interior is tested) or a :class:`Grid`.
    """
    grid, mask = (where.grid, where.interior) if isinstance(where, Domain) else (where, where.index_interior())
    sd = directional_second_differences(u, grid)
    with np.errstate(invalid="ignore"):
        bad = (np.nanmin(np.where(np.isnan(sd), np.inf, sd), axis=0) < -tol) & mask
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(bad))]


def cone_linf_bound(u: np.ndarray, domain: Domain) -> dict:
    """Compare ``max|u|`` with ``3/|Omega| * int |u|`` for convex ``u <= 0`` on the boundary."""
    ub = u[domain.boundary]
    scale = max(1.0, float(np.max(np.abs(u[domain.inside]))))
    if ub.max() > 1e-12 * scale:
        raise DomainError(f"u must be <= 0 on the boundary (max {ub.max():.3e})")
    lhs = float(np.max(np.abs(u[domain.inside])))
    area = float(domain.weights().sum())
    rhs = 3.0 / area * domain.integrate(np.abs(np.where(domain.inside, u, 0.0)))
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs * (1 + 10 * domain.grid.h)}


def interior_gradient_bound(u: np.ndarray, domain: Domain) -> dict:
    """Largest centred ``|Du|`` on Omega_0 against the convex-function gradient bound."""
    Du = gradient(u, domain.grid)
    mag = np.hypot(Du[0], Du[1])[domain.in_omega0]
    grad_max = float(mag.max())
    bound = (float(u[domain.boundary].max()) + float(np.max(np.abs(u[domain.inside])))) / domain.dist_omega0
    return {"grad_max": grad_max, "bound": bound, "holds": grad_max <= bound * (1 + 10 * domain.grid.h) + 1e-12}


# ---------------------------------------------------------------------------
# boundary calculus


def _boundary_quadrature(domain: Domain) -> BoundaryQuadrature:
    g = domain.grid
    if domain.is_rectangle:
        parts = []
        faces = [
            (np.zeros(g.ny, int), np.arange(g.ny), (-1.0, 0.0), g.h2),
            (np.full(g.ny, g.nx - 1), np.arange(g.ny), (1.0, 0.0), g.h2),
            (np.arange(g.nx), np.zeros(g.nx, int), (0.0, -1.0), g.h1),
            (np.arange(g.nx), np.full(g.nx, g.ny - 1), (0.0, 1.0), g.h1),
        ]
        for ii, jj, nrm, h in faces:
            w = np.full(ii.size, h)
            w[[0, -1]] *= 0.5
            parts.append((ii, jj, np.tile(nrm, (ii.size, 1)), w))
        i, j, n, w = (np.concatenate(p) for p in zip(*parts))
        return BoundaryQuadrature(i, j, n, w, np.zeros(i.size))

    # curved boundary: order nodes by polar angle, measure arc length on the true curve
    ii, jj = np.nonzero(domain.boundary)
    pts = g.points[ii, jj]
    sh = domain.omega
    c = np.asarray(sh.center)
    theta = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    order = np.argsort(theta)
    ii, jj, theta = ii[order], jj[order], theta[order]
    r = (np.abs(np.cos(theta) / sh.a) ** sh.k + np.abs(np.sin(theta) / sh.b) ** sh.k) ** (-1.0 / sh.k)
    on_curve = c + r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    seg = np.linalg.norm(np.roll(on_curve, -1, axis=0) - on_curve, axis=1)
    w = 0.5 * (seg + np.roll(seg, 1))
    n = sh.normal(on_curve[:, 0], on_curve[:, 1])
    K = sh.curvature(on_curve[:, 0], on_curve[:, 1])
    return BoundaryQuadrature(ii, jj, n, w, K)


def normal_derivative(u: np.ndarray, domain: Domain) -> np.ndarray:
    """One-sided second-order outward normal derivative at each boundary quadrature node."""
    g = domain.grid
    bq = domain.boundary_quadrature()
    if domain.is_rectangle:
        n1 = bq.normal[:, 0].astype(int)
        n2 = bq.normal[:, 1].astype(int)
        h = np.where(n1 != 0, g.h1, g.h2)
        u0 = u[bq.i, bq.j]
        u1 = u[bq.i - n1, bq.j - n2]
        u2 = u[bq.i - 2 * n1, bq.j - 2 * n2]
        return (3 * u0 - 4 * u1 + u2) / (2 * h)
    filled = u.copy()
    outside = ~domain.inside
    if outside.any():
        idx = ndimage.distance_transform_edt(outside, return_distances=False, return_indices=True)
        filled = u[idx[0], idx[1]]
    interp = RegularGridInterpolator(g.axes, filled, method="linear")
    s = 2 * g.h
    x = g.points[bq.i, bq.j]
    u0 = u[bq.i, bq.j]
    u1 = interp(x - s * bq.normal)
    u2 = interp(x - 2 * s * bq.normal)
    return (3 * u0 - 4 * u1 + u2) / (2 * s)


# ---------------------------------------------------------------------------
# CSV field dumps


def dump_field(path, values: np.ndarray, domain: Domain) -> None:
    """Write ``x,y,value,node_class`` rows, x fastest, 17 significant digits."""
    x1, x2 = domain.grid.axes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value", "node_class"])
        for j in range(domain.grid.ny):
            for i in range(domain.grid.nx):
                v = values[i, j] if domain.inside[i, j] else float("nan")
                w.writerow([f"{x1[i]:.17g}", f"{x2[j]:.17g}", f"{v:.17g}", NodeClass(domain.node_class[i, j]).name])


def load_field(path) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Read a dump back; returns ``(values, node_class, (x1_axis, x2_axis))``."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    xs = np.array([float(r["x"]) for r in rows])
    ys = np.array([float(r["y"]) for r in rows])
    ax1, ax2 = np.unique(xs), np.unique(ys)
    vals = np.full((ax1.size, ax2.size), np.nan)
    cls = np.zeros((ax1.size, ax2.size), dtype=np.int8)
    ii = np.searchsorted(ax1, xs)
    jj = np.searchsorted(ax2, ys)
    vals[ii, jj] = [float(r["value"]) for r in rows]
    cls[ii, jj] = [int(NodeClass[r["node_class"]]) for r in rows]
    return vals, cls, (ax1, ax2)
