"""Damped Newton solver for ``det D^2 u = g`` in Omega, ``u = phi`` on the boundary."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from abreu.errors import DomainError, Status
from abreu.grid import Domain, check_discrete_convexity, hessian
from abreu.lma import assemble_nine_point, laplacian

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MAConfig:
    newton_tol: float = 1e-9
    max_newton: int = 60
    damping: float = 0.5
    convexification_floor: float = 1e-8
    min_step: float = 1.0 / 1024

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if not self.convexification_floor > 0:
            raise ValueError("convexification_floor must be positive")


@dataclass
class MAResult:
    u: np.ndarray
    status: Status
    residuals: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.steps)

    @property
    def residual(self) -> float:
        return self.residuals[-1]


def ma_residual(u: np.ndarray, g: np.ndarray, domain: Domain) -> np.ndarray:
    """``det D^2 u - g`` on interior nodes, 0 elsewhere."""
    H = hessian(u, domain.grid)
    return np.where(domain.interior, H.det - g, 0.0)


def _clipped_cofactor(H, mask, floor):
    a, b, c = H.u11[mask], H.u12[mask], H.u22[mask]
    m = 0.5 * (a + c)
    s = np.sqrt(0.25 * (a - c) ** 2 + b**2)
    if np.all(m - s >= floor):
        return c, -b, a
    M = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    lam, V = np.linalg.eigh(M)
    lam = np.maximum(lam, floor)
    Mc = np.einsum("nik,nk,njk->nij", V, lam, V)
    return Mc[:, 1, 1], -Mc[:, 0, 1], Mc[:, 0, 0]


def poisson_guess(g: np.ndarray, phi: np.ndarray, domain: Domain) -> np.ndarray:
    """Solve ``Lap u = 2 sqrt(g)``; exact for MA when the Hessian is isotropic."""
    return laplacian(domain).solve(2 * np.sqrt(np.where(domain.interior, g, 0.0)), phi, rtol=1e-12)


def solve_dirichlet_ma(g, phi, domain: Domain, cfg: MAConfig | None = None, u0: np.ndarray | None = None) -> MAResult:
    """Convex solution of the Dirichlet Monge-Ampere problem.

    Newton's method on ``det D^2_h u = g`` where the linearisation is the
    cofactor operator of the Hessian with eigenvalues clipped below at
    ``cfg.convexification_floor``. Steps are backtracked until the max-norm
    residual does not increase.

    Parameters
    ----------
    g : ndarray
        Positive density on interior nodes.
    phi : ndarray
        Field whose boundary values are imposed.
    u0 : ndarray, optional
        Warm start; the Poisson surrogate is used otherwise.

    Returns
    -------
    MAResult
        ``status`` is ``CONVERGED``, ``NOT_CONVERGED`` (best iterate returned) or
        ``NONCONVEX_RESULT``.
    """
    cfg = cfg or MAConfig()
    mask = domain.interior
    g = np.asarray(g, float)
    if not np.all(np.isfinite(g[mask])) or np.any(g[mask] <= 0):
        raise DomainError("Monge-Ampere density g must be positive and finite")
    phi = np.asarray(phi, float)
    if u0 is None:
        u = poisson_guess(g, phi, domain)
    else:
        u = np.where(domain.inside, u0, np.nan)
        u[domain.boundary] = phi[domain.boundary]
    tol = cfg.newton_tol * (1 + float(np.max(np.abs(g[mask]))))

    res = np.where(mask, hessian(u, domain.grid).det - g, 0.0)
    out = MAResult(u, Status.NOT_CONVERGED, [float(np.max(np.abs(res)))])
    zero = np.zeros(domain.grid.shape)
    for _ in range(cfg.max_newton):
        if out.residuals[-1] <= tol:
            out.status = Status.CONVERGED
            break
        H = hessian(u, domain.grid)
        c11, c12, c22 = (np.zeros(domain.grid.shape) for _ in range(3))
        c11[mask], c12[mask], c22[mask] = _clipped_cofactor(H, mask, cfg.convexification_floor)
        J = assemble_nine_point(c11, c12, c22, domain)
        du = J.solve(-res, zero, rtol=1e-12)
        alpha = 1.0
        while alpha >= cfg.min_step:
            trial = u + alpha * du
            tres = np.where(mask, hessian(trial, domain.grid).det - g, 0.0)
            tnorm = float(np.max(np.abs(tres)))
            if tnorm <= out.residuals[-1]:
                break
            alpha *= cfg.damping
        else:
            log.debug("MA line search stalled at residual %.3e", out.residuals[-1])
            break
        u, res = trial, tres
        out.u = u
        out.residuals.append(tnorm)
        out.steps.append(alpha)
    else:
        if out.residuals[-1] <= tol:
            out.status = Status.CONVERGED
    if out.status is Status.CONVERGED and check_discrete_convexity(u, domain, tol=1e-8):
        out.status = Status.NONCONVEX_RESULT
    return out
