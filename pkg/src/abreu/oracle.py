"""
Discrete functionals and a brute-force minimizer over the discrete convexity cone.

The minimizer is an accelerated projected gradient method; the projection onto
the cone of nonnegative second differences is computed with Dykstra's method
over halfspaces (Hildreth's form), sweeping blocks of rows with disjoint stencils.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from abreu.errors import ProblemError, Status
from abreu.grid import DIRECTIONS, Domain, directional_second_differences, gradient, hessian
from abreu.models import Gauge, LagrangianModel, verify_assumptions

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# functionals


def _density(u, model: LagrangianModel, domain: Domain):
    x = domain.grid.points
    Du = np.moveaxis(gradient(u, domain.grid), 0, -1)
    m = domain.in_omega0
    out = np.zeros(domain.grid.shape)
    out[m] = model.F0(x[m], u[m]) + model.F1(x[m], Du[m])
    return out


def evaluate_J(u: np.ndarray, model: LagrangianModel, domain: Domain) -> float:
    """Quadrature of ``F0(x, u) + F1(x, Du)`` over Omega_0 with centred ``Du``."""
    return domain.integrate(_density(u, model, domain), "omega0")


def evaluate_J_eps(u, model, gauge: Gauge, eps: float, phi, domain: Domain) -> float:
    """Penalised barrier functional; ``math.inf`` when ``det D^2 u <= 0`` somewhere.

    ``J(u) + 1/(2 eps) int_{Omega \\ Omega_0} (u - phi)^2 - eps int_Omega G(det D^2 u)``,
    the barrier integral taken over interior nodes where the Hessian exists.
    """
    det = hessian(u, domain.grid).det
    m = domain.interior
    if not np.all(det[m] > 0):
        return math.inf
    Gv = np.zeros(domain.grid.shape)
    Gv[m] = gauge.G(det[m])
    w = np.where(m, domain.weights(), 0.0)
    barrier = float(np.sum(w * Gv))
    pen = domain.integrate(np.where(domain.inside, (u - phi) ** 2, 0.0), "outer")
    return evaluate_J(u, model, domain) + pen / (2 * eps) - eps * barrier


# ---------------------------------------------------------------------------
# convexity cone


@dataclass(eq=False)
class ConvexityCone:
    """Rows ``u(x+e) - 2 u(x) + u(x-e) >= 0`` for interior ``x`` and four lattice directions.

    Rows are grouped into 12 blocks (direction x residue class mod 3 along the
    direction's leading axis); rows inside one block have disjoint supports, so a
    block projection is exact and vectorised.
    """

    domain: Domain
    blocks: list = field(default_factory=list)
    prefer_interior_point: bool = False

    def __post_init__(self):
        g = self.domain.grid
        ny = g.ny
        ii, jj = np.nonzero(self.domain.interior)
        for a, b in DIRECTIONS:
            lead = ii if a != 0 else jj
            for r in range(3):
                sel = lead % 3 == r
                c = ii[sel] * ny + jj[sel]
                p = (ii[sel] + a) * ny + (jj[sel] + b)
                m = (ii[sel] - a) * ny + (jj[sel] - b)
                self.blocks.append((p, c, m))

    @property
    def n_rows(self) -> int:
        return sum(b[1].size for b in self.blocks)

    def matrix(self) -> sp.csr_matrix:
        """All rows as a sparse matrix acting on the flattened field (unnormalised)."""
        rows, cols, vals = [], [], []
        k = 0
        for p, c, m in self.blocks:
            r = np.arange(k, k + c.size)
            rows += [r, r, r]
            cols += [p, c, m]
            vals += [np.ones(c.size), -2 * np.ones(c.size), np.ones(c.size)]
            k += c.size
        N = self.domain.grid.nx * self.domain.grid.ny
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k, N))

    def violation(self, u: np.ndarray) -> float:
        """Largest negative part of any row (0 when feasible)."""
        v = u.ravel()
        worst = 0.0
        for p, c, m in self.blocks:
            s = v[p] - 2 * v[c] + v[m]
            if s.size:
                worst = max(worst, float(-s.min()))
        return worst

    def project(self, y: np.ndarray, dual=None, tol: float = 1e-12, max_sweeps: int = 100000, fixed=None, metric=None, sweep_budget: int | None = 400):
        """Projection onto the cone with the nodes in ``fixed`` held.

        Euclidean by default, or in the norm ``sum metric * x^2`` for a positive
        diagonal ``metric``. Dykstra over halfspaces: each block correction uses
        the stored multiplier of its rows, so starting from a previous ``dual``
        is valid. When Dykstra has not converged after ``sweep_budget`` sweeps
        (heavily active points converge very slowly) the projection is
        recomputed by a primal-dual interior-point solve.
        Returns the projection and the multipliers.
        """
        y0 = y.ravel().astype(float)
        held = np.zeros(y0.size, bool) if fixed is None else fixed.ravel().astype(bool)
        mv = np.ones(y0.size) if metric is None else np.asarray(metric, float).ravel()
        if dual is None:
            dual = [np.zeros(c.size) for _, c, _ in self.blocks]
        budget = max_sweeps if sweep_budget is None else sweep_budget
        if self.prefer_interior_point and sweep_budget is not None:
            # a short pass still returns feasible or nearly projected inputs unchanged
            budget = min(budget, 10)
        x, dual, done = self._dykstra(y0, [d.copy() for d in dual], held, mv, tol, budget)
        if not done:
            # once Dykstra has stalled on this cone, later calls go straight to the interior-point solve
            self.prefer_interior_point = True
            x, lam = _ipm_project(self._matrix(), y0, held, mv)
            dual = np.split(lam, np.cumsum([c.size for _, c, _ in self.blocks])[:-1])
        return x.reshape(y.shape), dual

    def _matrix(self):
        if not hasattr(self, "_A"):
            self._A = self.matrix()
        return self._A

    def _dykstra(self, y0, dual, held, mv, tol, sweeps):
        free = (~held).astype(float) / mv
        x = y0.copy()
        for (p, c, m), lam in zip(self.blocks, dual):
            np.add.at(x, p, lam * free[p])
            np.add.at(x, c, -2 * lam * free[c])
            np.add.at(x, m, lam * free[m])
        norms = [free[p] + 4 * free[c] + free[m] for p, c, m in self.blocks]
        scale = max(1.0, float(np.max(np.abs(x))))
        for _ in range(sweeps):
            moved = 0.0
            for (p, c, m), lam, nn in zip(self.blocks, dual, norms):
                s = x[p] - 2 * x[c] + x[m]
                with np.errstate(invalid="ignore", divide="ignore"):
                    new = np.maximum(0.0, lam - np.where(nn > 0, s / nn, 0.0))
                d = new - lam
                if not d.any():
                    continue
                lam[:] = new
                # rows in a block have disjoint supports, so plain fancy-index updates are safe
                x[p] += d * free[p]
                x[c] -= 2 * d * free[c]
                x[m] += d * free[m]
                moved = max(moved, float(np.max(np.abs(d * nn))))
            if moved <= tol * scale:
                return x, dual, True
        return x, dual, False


def _ipm_project(A: sp.csr_matrix, y: np.ndarray, held: np.ndarray, mv: np.ndarray, mu_stop: float = 1e-16, max_iter: int = 60):
    """Solve ``min 1/2 |x - y|_M^2`` s.t. ``A x >= 0``, ``x = y`` on ``held``.

    Mehrotra predictor-corrector; each step solves ``(M + A^T D A) dx = r``
    on the free nodes with a sparse LU. Returns ``x`` and the multipliers.
    The multipliers lose accuracy in near-null directions of ``A^T`` as the
    barrier closes; ``x`` does not, so ``x`` is returned as computed.
    """
    F = ~held
    AF = A[:, F].tocsc()
    c = A[:, held] @ y[held]
    yF, MF = y[F], mv[F]
    m = A.shape[0]
    x = yF.copy()
    s = np.maximum(AF @ x + c, 1.0)
    lam = np.ones(m)
    scale = max(1.0, float(np.max(np.abs(y))))

    def max_step(v, dv):
        neg = dv < 0
        return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

    for _ in range(max_iter):
        rd = MF * (x - yF) - AF.T @ lam
        rp = AF @ x + c - s
        mu = float(s @ lam) / m
        if mu <= mu_stop * scale:
            break
        try:
            K = splu((sp.diags(MF) + AF.T @ sp.diags(lam / s) @ AF).tocsc(), permc_spec="MMD_AT_PLUS_A",
                     diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        except RuntimeError:
            break

        def direction(target):
            # target is the desired s * lam after the step
            rhs = -rd + AF.T @ ((target - s * lam - lam * rp) / s)
            dx = K.solve(rhs)
            ds = AF @ dx + rp
            return dx, ds, (target - s * lam - lam * ds) / s

        dx, ds, dl = direction(np.zeros(m))
        a_aff = min(max_step(s, ds), max_step(lam, dl))
        sigma = (float((s + a_aff * ds) @ (lam + a_aff * dl)) / m / mu) ** 3
        dx, ds, dl = direction(sigma * mu - ds * dl)
        a = 0.99 * min(max_step(s, ds), max_step(lam, dl))
        x, s, lam = x + a * dx, s + a * ds, lam + a * dl
    out = y.copy()
    out[F] = x
    return out, lam


def refined_convexity_failures(u: np.ndarray, domain: Domain, tol: float = 1e-8) -> float:
    """Fraction of interior nodes failing the knight-move second differences."""
    knight = ((1, 2), (2, 1), (1, -2), (2, -1))
    sd = directional_second_differences(u, domain.grid, knight)
    sd = np.where(np.isnan(sd), np.inf, sd).min(axis=0)
    m = domain.interior & np.isfinite(sd)
    return float(np.mean(sd[m] < -tol)) if m.any() else 0.0


# ---------------------------------------------------------------------------
# oracle objective


@dataclass(eq=False)
class OracleObjective:
    """``sum_{Omega_0} w F + 1/(2 pen) sum_{Omega \\ Omega_0} w (u - phi)^2`` and its gradient."""

    model: LagrangianModel
    phi: np.ndarray
    domain: Domain
    pen_eps: float

    def __post_init__(self):
        d = self.domain
        self.x = d.grid.points
        self.m0 = d.in_omega0
        self.w0 = d.weights0()
        self.wo = np.where(d.inside, d.weights_outer(), 0.0)

    def value(self, u) -> float:
        dens = _density(u, self.model, self.domain)
        pen = np.where(self.domain.inside, (u - self.phi) ** 2, 0.0)
        return float(np.sum(self.w0 * dens) + np.sum(self.wo * pen) / (2 * self.pen_eps))

    def grad(self, u) -> np.ndarray:
        g = self.domain.grid
        m = self.m0
        Du = np.moveaxis(gradient(u, g), 0, -1)
        out = np.zeros(g.shape)
        out[m] = self.w0[m] * self.model.f0(self.x[m], u[m])
        q = np.zeros(g.shape + (2,))
        q[m] = self.w0[m][:, None] * self.model.gradpF1(self.x[m], Du[m])
        # adjoint of the centred difference
        out[2:, :] += q[1:-1, :, 0] / (2 * g.h1)
        out[:-2, :] -= q[1:-1, :, 0] / (2 * g.h1)
        out[:, 2:] += q[:, 1:-1, 1] / (2 * g.h2)
        out[:, :-2] -= q[:, 1:-1, 1] / (2 * g.h2)
        out += np.where(self.domain.inside, self.wo * (u - self.phi) / self.pen_eps, 0.0)
        return np.where(self.domain.boundary | ~self.domain.inside, 0.0, out)


@dataclass(frozen=True)
class OracleConfig:
    pen_eps: float = 1e-4
    max_iter: int = 20000
    pg_tol: float = 1e-6
    violation_tol: float = 1e-10
    proj_tol: float = 1e-13
    restart: bool = True
    precondition: bool = True


@dataclass
class OracleResult:
    u: np.ndarray
    status: Status
    objective: float
    history: list = field(default_factory=list)
    violation: float = 0.0
    pg_norm: float = math.inf

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iterate", "objective", "pg_norm", "max_violation"])
            for k, (obj, pg, viol) in enumerate(self.history):
                w.writerow([k, f"{obj:.17g}", f"{pg:.17g}", f"{viol:.17g}"])


def minimize_constrained(
    model: LagrangianModel,
    phi: np.ndarray,
    domain: Domain,
    cfg: OracleConfig | None = None,
    u0: np.ndarray | None = None,
    check_model: bool = True,
) -> OracleResult:
    """Minimise the oracle objective over discretely convex fields with ``u = phi`` on the boundary.

    FISTA with backtracking on the Lipschitz estimate and function-value
    restarts, so the recorded objective never increases. Stops when the
    projected-gradient norm falls below ``pg_tol (1 + |grad_0|)``, with
    ``grad_0`` taken at the projection of ``phi`` whatever the start, and cone
    violation below ``violation_tol``.
    """
    cfg = cfg or OracleConfig()
    if check_model:
        rep = verify_assumptions(model, domain.omega0, n_samples=400)
        if model.non_convex_F0 or rep["AsH"].worst < -1e-9 or rep["AsF0"].worst < -1e-9:
            raise ProblemError("oracle needs a Lagrangian convex in z and p")
    obj = OracleObjective(model, np.asarray(phi, float), domain, cfg.pen_eps)
    cone = ConvexityCone(domain)
    fixed = domain.boundary
    free = domain.interior

    # variable metric: the Hessian diagonal absorbs the 1/pen_eps weight of the outer band
    M = _hessian_diagonal(obj, np.where(domain.inside, phi, 0.0)) if cfg.precondition else np.ones(domain.grid.shape)

    def proj(v, dual):
        v = np.where(domain.inside, v, 0.0)
        v[fixed] = phi[fixed]
        return cone.project(v, dual, tol=cfg.proj_tol, fixed=fixed, metric=M)

    start = np.where(domain.inside, phi if u0 is None else u0, 0.0)
    # the stopping scale uses the gradient at phi so it does not depend on the start
    ref_pt, dual = proj(np.where(domain.inside, phi, 0.0), None)
    g0 = float(np.linalg.norm(obj.grad(ref_pt)[free]))
    x, dual = proj(start, None) if u0 is not None else (ref_pt, dual)
    fx = obj.value(x)
    gx = obj.grad(x)
    L = _lipschitz_guess(obj, x, M)
    y, fy, gy = x, fx, gx
    t = 1.0
    res = OracleResult(x, Status.MAX_ITERS, fx)
    for k in range(cfg.max_iter):
        # backtracking step from the extrapolated point
        while True:
            z, dual = proj(y - gy / (L * M), dual)
            fz = obj.value(z)
            dz = z - y
            if fz <= fy + np.sum(gy * dz) + 0.5 * L * np.sum(M * dz * dz) + 1e-15 * abs(fy):
                break
            L *= 2.0
        if cfg.restart and fz > fx:
            # restart momentum from the last accepted iterate
            y, fy, gy, t = x, fx, gx, 1.0
            continue
        gz = obj.grad(z)
        pg_pt, _ = proj(z - gz / (L * M), dual)
        # gradient mapping measured in gradient units, so the test does not depend on M
        pg = float(L * np.linalg.norm((M * (z - pg_pt))[free]))
        viol = cone.violation(np.where(domain.inside, z, 0.0))
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = z + ((t - 1) / t_new) * (z - x)
        x, fx, gx, t = z, fz, gz, t_new
        fy, gy = obj.value(y), obj.grad(y)
        res.history.append((fx, pg, viol))
        L = max(L / 1.25, 1e-12)
        if pg <= cfg.pg_tol * (1 + g0) and viol <= cfg.violation_tol:
            res.status = Status.CONVERGED
            break
    res.u = np.where(domain.inside, x, np.nan)
    res.objective = fx
    res.violation = cone.violation(np.where(domain.inside, x, 0.0))
    res.pg_norm = res.history[-1][1] if res.history else math.inf
    return res


def _lipschitz_guess(obj: OracleObjective, x, M, iters: int = 20) -> float:
    """Power iteration for the largest eigenvalue of ``M^{-1/2} H M^{-1/2}``."""
    rng = np.random.default_rng(0)
    mask = obj.domain.interior
    s = 1.0 / np.sqrt(M)
    v = rng.standard_normal(x.shape) * mask
    g0 = obj.grad(x)
    lam = 1.0
    for _ in range(iters):
        nv = np.linalg.norm(v)
        if nv == 0:
            break
        v = v / nv
        Hv = s * (obj.grad(x + 1e-4 * s * v) - g0) / 1e-4
        lam = float(np.linalg.norm(Hv))
        v = Hv * mask
    return max(lam, 1e-8)


def _hessian_diagonal(obj: OracleObjective, x, step: float = 1e-4) -> np.ndarray:
    """Hessian diagonal of the objective by probing with a 5x5 colouring.

    The objective couples nodes at most two steps apart along each axis, so
    nodes of one colour never interact and one gradient difference per colour
    recovers their diagonal entries.
    """
    g = obj.domain.grid
    ii, jj = np.meshgrid(np.arange(g.nx), np.arange(g.ny), indexing="ij")
    g0 = obj.grad(x)
    diag = np.zeros(g.shape)
    for a in range(5):
        for b in range(5):
            e = ((ii % 5 == a) & (jj % 5 == b)).astype(float)
            diag += e * (obj.grad(x + step * e) - g0) / step
    inner = obj.domain.interior
    top = float(np.max(diag[inner], initial=0.0))
    # flat directions (no curvature) get a tiny weight; everything else keeps its own scale
    floor = 1e-8 * top if top > 0 else 1.0
    return np.maximum(np.where(inner, diag, floor), floor)
