"""
Lagrangians ``F(x, z, p) = F0(x, z) + F1(x, p)``, gauge functions, and sampling
checks of the structural assumptions used by the solver.

All callbacks are vectorised: ``x`` and ``p`` have shape ``(..., 2)``, ``z`` has
shape ``(...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq

from abreu.errors import DomainError, ProblemError


def _eta_default(r):
    return 1.0 + np.asarray(r, dtype=float)


@dataclass(frozen=True)
class LagrangianModel:
    """Callbacks and structural constants of a Lagrangian.

    ``cross_terms(x, p)`` returns the per-component mixed derivatives
    ``d/dx_i (dF1/dp_i)`` at frozen ``p``, shape ``(..., 2)``; ``crossF1`` is their sum.
    """

    name: str
    F0: Callable
    f0: Callable
    F1: Callable
    gradpF1: Callable
    hesspF1: Callable
    cross_terms: Callable
    rho: float = 0.0
    c0: float = 0.0
    C_star: float = math.inf
    cbar0: float = math.inf
    Cbar_star: float = math.inf
    eta: Callable = _eta_default
    non_convex_F0: bool = False
    params: dict = field(default_factory=dict)

    def crossF1(self, x, p):
        return self.cross_terms(x, p).sum(axis=-1)

    def density(self, x, z, p):
        return self.F0(x, z) + self.F1(x, p)


def _norm2(p):
    return np.sum(np.asarray(p) ** 2, axis=-1)


def _eye_like(p):
    p = np.asarray(p, dtype=float)
    return np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy()


# ---------------------------------------------------------------------------
# density weights for the monopolist model


class _Weight:
    """A positive weight gamma(x) with gradient, from a constant, callable or grid field."""

    def __init__(self, gamma, grad=None, grid=None, fd_step=1e-6):
        self.const = None
        self._grad = grad
        self._step = fd_step
        if np.isscalar(gamma):
            self.const = float(gamma)
            self._fn = lambda x: np.full(np.shape(x)[:-1], self.const)
            self._grad = lambda x: np.zeros(np.shape(x))
        elif callable(gamma):
            self._fn = lambda x: np.asarray(gamma(x[..., 0], x[..., 1]), dtype=float) * np.ones(np.shape(x)[:-1])
        else:
            if grid is None:
                raise ProblemError("a gamma field needs its grid")
            interp = RegularGridInterpolator(grid.axes, np.asarray(gamma, dtype=float), method="cubic")
            self._fn = lambda x: interp(np.reshape(x, (-1, 2))).reshape(np.shape(x)[:-1])

    def __call__(self, x):
        return self._fn(np.asarray(x, dtype=float))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self._grad is not None:
            return np.asarray(self._grad(x), dtype=float)
        s = self._step
        e = np.eye(2)
        return np.stack([(self(x + s * e[k]) - self(x - s * e[k])) / (2 * s) for k in range(2)], axis=-1)


def rochet_chone(gamma=1.0, rho: float = 0.0, gamma_grad=None, grid=None, omega0=None, n_check: int = 41) -> LagrangianModel:
    """Perturbed monopolist Lagrangian.

    ``F0 = gamma z + rho z^2 / 2`` and ``F1 = gamma |p|^2 / 2 - gamma x.p``.

    Parameters
    ----------
    gamma : float, callable ``gamma(x1, x2)``, or array on ``grid``
        Type density; must be positive on Omega_0.
    rho : float
        Strength of the convex perturbation, ``rho >= 0``.
    gamma_grad : callable, optional
        Analytic gradient of ``gamma`` (``x -> (..., 2)``); central differences otherwise.
    omega0 : shape with ``contains``, optional
        When given, constants ``c0, C*, cbar0, Cbar*`` are estimated by sampling a
        ``n_check x n_check`` lattice over its bounding box and boundary, and
        positivity of gamma is checked there.
    """
    if rho < 0:
        raise ProblemError(f"rho must be >= 0, got {rho}")
    g = _Weight(gamma, gamma_grad, grid)

    def F0(x, z):
        return g(x) * z + 0.5 * rho * np.asarray(z) ** 2

    def f0(x, z):
        return g(x) + rho * np.asarray(z)

    def F1(x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return g(x) * (0.5 * _norm2(p) - np.sum(x * p, axis=-1))

    def gradpF1(x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return g(x)[..., None] * (p - x)

    def hesspF1(x, p):
        x = np.asarray(x, float)
        return g(x)[..., None, None] * _eye_like(p)

    def cross_terms(x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return g.grad(x) * (p - x) - g(x)[..., None]

    if g.const is not None:
        if g.const <= 0:
            raise ProblemError("gamma must be positive on Omega_0")
        gmax = g.const
        dgmax = 0.0
        xmax = _xmax(omega0)
        cbar0 = g.const
        Cbar = g.const * xmax
        C_star = g.const
    elif omega0 is not None:
        inner, edge = _omega0_samples(omega0, n_check)
        gi, ge = g(inner), g(edge)
        if np.any(gi[_strictly_inside(omega0, inner)] <= 0) or np.any(ge < -1e-12):
            raise ProblemError("gamma must be positive on Omega_0")
        gmax = float(max(gi.max(), ge.max()))
        dgmax = float(np.linalg.norm(g.grad(inner), axis=-1).max())
        xmax = float(np.linalg.norm(inner, axis=-1).max())
        cbar0 = float(np.abs(ge).max())
        Cbar = float((np.abs(ge) * np.linalg.norm(edge, axis=-1)).max())
        # |gamma_i (p_i - x_i) - gamma| <= |Dgamma| |p| + |Dgamma| |x| + gamma
        C_star = max(gmax, dgmax * xmax + gmax)
    else:
        gmax = dgmax = xmax = cbar0 = Cbar = C_star = math.inf
    A = max(1.0, rho, gmax * max(1.0, xmax))
    return LagrangianModel(
        name="rochet_chone",
        F0=F0,
        f0=f0,
        F1=F1,
        gradpF1=gradpF1,
        hesspF1=hesspF1,
        cross_terms=cross_terms,
        rho=float(rho),
        c0=dgmax,
        C_star=C_star,
        cbar0=cbar0,
        Cbar_star=Cbar,
        eta=lambda r: A * (1.0 + np.asarray(r, float)),
        params={"gamma": gamma, "rho": rho},
    )


def _xmax(omega0):
    if omega0 is None:
        return math.inf
    inner, _ = _omega0_samples(omega0, 11)
    return float(np.linalg.norm(inner, axis=-1).max())


def _bbox(omega0):
    if hasattr(omega0, "radius"):
        (c1, c2), r = omega0.center, omega0.radius
        return c1 - r, c1 + r, c2 - r, c2 + r
    return omega0.a1, omega0.b1, omega0.a2, omega0.b2


def _omega0_samples(omega0, n):
    """Lattice points in Omega_0 and points on its boundary."""
    a1, b1, a2, b2 = _bbox(omega0)
    X1, X2 = np.meshgrid(np.linspace(a1, b1, n), np.linspace(a2, b2, n), indexing="ij")
    keep = omega0.contains(X1, X2)
    inner = np.stack([X1[keep], X2[keep]], axis=-1)
    t = np.linspace(0, 1, 4 * n, endpoint=False)
    if hasattr(omega0, "radius"):
        th = 2 * np.pi * t
        edge = np.asarray(omega0.center) + omega0.radius * np.stack([np.cos(th), np.sin(th)], -1)
    else:
        s = np.linspace(0, 1, n)
        edge = np.concatenate(
            [
                np.stack([a1 + (b1 - a1) * s, np.full(n, a2)], -1),
                np.stack([a1 + (b1 - a1) * s, np.full(n, b2)], -1),
                np.stack([np.full(n, a1), a2 + (b2 - a2) * s], -1),
                np.stack([np.full(n, b1), a2 + (b2 - a2) * s], -1),
            ]
        )
    return inner, edge


def _strictly_inside(omega0, pts):
    a1, b1, a2, b2 = _bbox(omega0)
    if hasattr(omega0, "radius"):
        return np.linalg.norm(pts - np.asarray(omega0.center), axis=-1) < omega0.radius - 1e-9
    return (pts[:, 0] > a1 + 1e-9) & (pts[:, 0] < b1 - 1e-9) & (pts[:, 1] > a2 + 1e-9) & (pts[:, 1] < b2 - 1e-9)


def allen_cahn() -> LagrangianModel:
    """Double-well ``(z^2 - 1)^2 / 4`` plus Dirichlet energy ``|p|^2 / 2``."""
    return LagrangianModel(
        name="allen_cahn",
        F0=lambda x, z: 0.25 * (np.asarray(z) ** 2 - 1) ** 2,
        f0=lambda x, z: np.asarray(z) ** 3 - np.asarray(z),
        F1=lambda x, p: 0.5 * _norm2(p),
        gradpF1=lambda x, p: np.asarray(p, float).copy(),
        hesspF1=lambda x, p: _eye_like(p),
        cross_terms=lambda x, p: np.zeros(np.shape(p)),
        rho=0.0,
        c0=0.0,
        C_star=1.0,
        cbar0=1.0,
        Cbar_star=0.0,
        eta=lambda r: 1.0 + np.asarray(r, float) ** 3,
        non_convex_F0=True,
    )


def power_lagrangian(s: int) -> LagrangianModel:
    """``F1(p) = |p|^s / s`` for an integer ``s >= 2``; no ``x`` or ``z`` dependence."""
    if int(s) != s or s < 2:
        raise ProblemError(f"s must be an integer >= 2, got {s}")
    s = int(s)

    def grad(x, p):
        p = np.asarray(p, float)
        return (_norm2(p) ** ((s - 2) / 2))[..., None] * p

    def hess(x, p):
        p = np.asarray(p, float)
        r2 = _norm2(p)
        out = (r2 ** ((s - 2) / 2))[..., None, None] * _eye_like(p)
        if s > 2:
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.where(r2 > 0, (s - 2) * r2 ** ((s - 4) / 2), 0.0)
            out = out + coef[..., None, None] * p[..., :, None] * p[..., None, :]
        return out

    return LagrangianModel(
        name="power",
        F0=lambda x, z: np.zeros(np.shape(z)),
        f0=lambda x, z: np.zeros(np.shape(z)),
        F1=lambda x, p: _norm2(p) ** (s / 2) / s,
        gradpF1=grad,
        hesspF1=hess,
        cross_terms=lambda x, p: np.zeros(np.shape(p)),
        C_star=1.0 if s == 2 else math.inf,
        cbar0=1.0 if s == 2 else math.inf,
        Cbar_star=0.0 if s == 2 else math.inf,
        eta=lambda r: 1.0 + np.asarray(r, float) ** (s - 1),
        params={"s": s},
    )


def exp_lagrangian() -> LagrangianModel:
    """``F1(p) = exp(|p|^2 / 2)``."""

    def grad(x, p):
        p = np.asarray(p, float)
        return np.exp(0.5 * _norm2(p))[..., None] * p

    def hess(x, p):
        p = np.asarray(p, float)
        e = np.exp(0.5 * _norm2(p))[..., None, None]
        return e * (_eye_like(p) + p[..., :, None] * p[..., None, :])

    return LagrangianModel(
        name="exp",
        F0=lambda x, z: np.zeros(np.shape(z)),
        f0=lambda x, z: np.zeros(np.shape(z)),
        F1=lambda x, p: np.exp(0.5 * _norm2(p)),
        gradpF1=grad,
        hesspF1=hess,
        cross_terms=lambda x, p: np.zeros(np.shape(p)),
        eta=lambda r: (1.0 + np.asarray(r, float)) * np.exp(0.5 * np.asarray(r, float) ** 2),
    )


def tracking_lagrangian(target: Callable, rho: float = 1.0) -> LagrangianModel:
    """``F0 = rho (z - target(x))^2 / 2`` with no gradient term."""

    def q(x):
        x = np.asarray(x, float)
        return np.asarray(target(x[..., 0], x[..., 1]), float)

    return LagrangianModel(
        name="tracking",
        F0=lambda x, z: 0.5 * rho * (np.asarray(z) - q(x)) ** 2,
        f0=lambda x, z: rho * (np.asarray(z) - q(x)),
        F1=lambda x, p: np.zeros(np.shape(p)[:-1]),
        gradpF1=lambda x, p: np.zeros(np.shape(p)),
        hesspF1=lambda x, p: np.zeros(np.shape(p) + (2,)),
        cross_terms=lambda x, p: np.zeros(np.shape(p)),
        rho=float(rho),
        C_star=0.0,
        cbar0=0.0,
        Cbar_star=0.0,
    )


# ---------------------------------------------------------------------------
# gauges


@dataclass(frozen=True)
class Gauge:
    """Link between ``w`` and ``d = det D^2 u``: ``w = G'(d)``.

    ``kind`` is ``"power"`` (``G = t^theta / theta``), ``"log"`` (``theta = 0``)
    or ``"custom"`` (``w = H(d)`` with ``H`` strictly monotone on ``domain``).
    """

    kind: str
    theta: float = 0.0
    H: Callable | None = None
    H_inv: Callable | None = None
    G_fn: Callable | None = None
    domain: tuple[float, float] = (1e-12, 1e12)

    def G(self, d):
        d = np.asarray(d, float)
        if self.kind == "log":
            return np.log(d)
        if self.kind == "power":
            return d**self.theta / self.theta
        if self.G_fn is None:
            raise NotImplementedError("custom gauge has no antiderivative")
        return self.G_fn(d)

    def deriv(self, d):
        d = np.asarray(d, float)
        if self.kind == "log":
            return 1.0 / d
        if self.kind == "power":
            return d ** (self.theta - 1)
        return self.H(d)

    def invert(self, w):
        w = np.asarray(w, float)
        if self.kind == "log":
            return 1.0 / w
        if self.kind == "power":
            return w ** (1.0 / (self.theta - 1))
        if self.H_inv is not None:
            return self.H_inv(w)
        lo, hi = self.domain
        flat = np.array([brentq(lambda d, t=t: self.H(d) - t, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps) for t in w.ravel()])
        return flat.reshape(w.shape)


def power_gauge(theta: float) -> Gauge:
    if not 0 <= theta < 0.5:
        raise ProblemError(f"theta must lie in [0, 1/2) in two dimensions, got {theta}")
    return Gauge("log") if theta == 0 else Gauge("power", theta=float(theta))


def log_gauge() -> Gauge:
    return Gauge("log")


def custom_gauge(H, H_inv=None, G=None, domain=(1e-12, 1e12)) -> Gauge:
    return Gauge("custom", H=H, H_inv=H_inv, G_fn=G, domain=domain)


def gauge_eval(gauge: Gauge, d) -> tuple:
    """Return ``(G(d), G'(d))``; ``G`` is NaN for custom gauges without an antiderivative."""
    d = np.asarray(d, float)
    if np.any(d <= 0):
        raise DomainError("gauge argument must be positive")
    try:
        G = gauge.G(d)
    except NotImplementedError:
        G = np.full(d.shape, np.nan)
    return G, gauge.deriv(d)


def gauge_invert(gauge: Gauge, w):
    w = np.asarray(w, float)
    if np.any(w <= 0):
        raise DomainError("w must be positive to invert the gauge")
    return gauge.invert(w)


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst: float
    witness: dict


@dataclass
class AssumptionReport:
    checks: dict[str, AssumptionCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, key):
        return self.checks[key]


def verify_assumptions(
    model: LagrangianModel,
    omega0=None,
    z_range: float = 2.0,
    p_range: float = 2.0,
    n_samples: int = 2000,
    seed: int = 0,
    tol: float = 1e-9,
    band=None,
) -> AssumptionReport:
    """Sample the monotonicity, Hessian and growth assumptions on ``F0`` and ``F1``.

    ``omega0`` is a shape (``Rectangle`` or ``Disk``); ``band`` optionally gives
    explicit ``(m, 2)`` points for the boundary growth check instead of the shape
    boundary. Returns a report with the worst margin and a witness per check:

    - ``AsF0``: ``(f0(z) - f0(zt)) (z - zt) >= rho |z - zt|^2`` and ``|f0| <= eta(|z|)``
    - ``AsH``: ``0 <= F1_pp <= C* I`` and ``|d_i F1_{p_i}| <= c0 |p| + C*``
    - ``AsH1``: ``|F1_{p_i}| <= cbar0 |p| + Cbar*`` on the boundary of Omega_0
    """
    rng = np.random.default_rng(seed)
    if omega0 is None:
        from abreu.grid import Rectangle

        omega0 = Rectangle(-0.5, 0.5, -0.5, 0.5)
    inner, edge = _omega0_samples(omega0, 15)
    a1, b1, a2, b2 = _bbox(omega0)
    xs = rng.uniform([a1, a2], [b1, b2], size=(4 * n_samples, 2))
    xs = xs[omega0.contains(xs[:, 0], xs[:, 1])][:n_samples]
    x = np.concatenate([inner, xs])
    m = x.shape[0]
    z = rng.uniform(-z_range, z_range, m)
    zt = rng.uniform(-z_range, z_range, m)
    p = rng.uniform(-p_range, p_range, size=(m, 2))
    p[: min(m, 9)] = np.stack(np.meshgrid([-p_range, 0, p_range], [-p_range, 0, p_range]), -1).reshape(-1, 2)[: min(m, 9)]
    checks = {}

    # AsF0 on deterministic z pairs plus random ones
    zz = np.linspace(-z_range, z_range, 81)
    Z, ZT = np.meshgrid(zz, zz, indexing="ij")
    xi = np.broadcast_to(x[0], Z.shape + (2,))
    zpair = np.concatenate([np.stack([Z.ravel(), ZT.ravel()], -1), np.stack([z, zt], -1)])
    xpair = np.concatenate([xi.reshape(-1, 2), x])
    dz = zpair[:, 0] - zpair[:, 1]
    mono = (model.f0(xpair, zpair[:, 0]) - model.f0(xpair, zpair[:, 1])) * dz - model.rho * dz**2
    grow = model.eta(np.abs(zpair[:, 0])) - np.abs(model.f0(xpair, zpair[:, 0]))
    k = int(np.argmin(mono))
    worst = float(min(mono.min(), grow.min()))
    checks["AsF0"] = AssumptionCheck(
        "AsF0",
        worst >= -tol,
        worst,
        {"x": xpair[k].tolist(), "z": float(zpair[k, 0]), "z_tilde": float(zpair[k, 1]), "monotonicity_margin": float(mono[k])},
    )

    # AsH
    H = model.hesspF1(x, p)
    ev = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, -1, -2)))
    lower = ev[:, 0]
    upper = model.C_star - ev[:, 1]
    cross = np.abs(model.cross_terms(x, p))
    pn = np.linalg.norm(p, axis=-1)
    cross_margin = (model.c0 * pn + model.C_star)[:, None] - cross
    with np.errstate(invalid="ignore"):
        margins = np.stack([lower, upper, cross_margin.min(axis=1)], -1)
    margins = np.where(np.isnan(margins), np.inf, margins)
    k = int(np.argmin(margins.min(axis=1)))
    worst = float(margins.min())
    checks["AsH"] = AssumptionCheck(
        "AsH",
        worst >= -tol,
        worst,
        {"x": x[k].tolist(), "p": p[k].tolist(), "min_eig": float(lower[k]), "max_eig": float(ev[k, 1])},
    )

    # AsH1 on the boundary band, plus the interior growth bound |grad_p F1| <= eta(|p|)
    xb = edge if band is None else np.asarray(band, float)
    pb = rng.uniform(-p_range, p_range, size=(xb.shape[0], 2))
    gb = np.abs(model.gradpF1(xb, pb))
    bmargin = (model.cbar0 * np.linalg.norm(pb, axis=-1) + model.Cbar_star)[:, None] - gb
    gi = np.linalg.norm(model.gradpF1(x, p), axis=-1)
    imargin = model.eta(pn) - gi
    with np.errstate(invalid="ignore"):
        bm = np.where(np.isnan(bmargin), np.inf, bmargin).min(axis=1)
    k = int(np.argmin(bm))
    worst = float(min(bm.min(), imargin.min()))
    checks["AsH1"] = AssumptionCheck("AsH1", worst >= -tol, worst, {"x": xb[k].tolist(), "p": pb[k].tolist()})
    return AssumptionReport(checks)
