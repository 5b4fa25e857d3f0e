"""
Outer solver for the coupled system

    U^{ij} w_ij = f(u),   w = G'(det D^2 u)   in Omega,
    u = phi,  w = psi                          on the boundary.

Each fixed-point step solves a Monge-Ampere problem for ``u`` given ``w`` and then
a linearized Monge-Ampere problem for the next ``w``. A parameter ``t`` scales
the right-hand side and blends the boundary data from 1 to ``psi``; at ``t = 0``
the map is constant ``w = 1``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from abreu.errors import AbreuError, DegenerateError, DomainError, LinearSolveError, ProblemError, Status
from abreu.grid import Domain, check_discrete_convexity, gradient, hessian, normal_derivative
from abreu.lma import assemble_lma
from abreu.models import Gauge, LagrangianModel, gauge_invert, verify_assumptions
from abreu.monge_ampere import MAConfig, solve_dirichlet_ma
from abreu.oracle import evaluate_J, evaluate_J_eps

log = logging.getLogger(__name__)

_MAP_ERRORS = (DegenerateError, DomainError, LinearSolveError)

REPORT_COLUMNS = ("t", "k", "defect", "ma_residual", "lma_residual", "min_w", "max_w", "min_det", "max_det")


class RhsMode(str, Enum):
    PENALIZED = "PENALIZED"
    GENERAL_DIV = "GENERAL_DIV"
    ALLEN_CAHN = "ALLEN_CAHN"


@dataclass(eq=False)
class AbreuProblem:
    """Data of one boundary value problem.

    Exactly one of ``delta`` (fixed penalisation) and ``eps`` (continuation
    scaling, where the linearized equation carries ``f / eps``) is set in
    ``PENALIZED`` mode. ``frozen_rhs``, when given, replaces ``f(u)`` by a fixed field.
    """

    domain: Domain
    phi: np.ndarray
    psi: np.ndarray
    model: LagrangianModel
    gauge: Gauge
    delta: float | None = None
    eps: float | None = None
    rhs_mode: RhsMode = RhsMode.PENALIZED
    frozen_rhs: np.ndarray | None = None
    convexity_floor: float = 1e-6

    def __post_init__(self):
        self.rhs_mode = RhsMode(self.rhs_mode)
        d = self.domain
        self.phi = np.asarray(self.phi, float)
        self.psi = np.broadcast_to(np.asarray(self.psi, float), d.grid.shape).copy()
        if not np.all(np.isfinite(self.phi[d.inside])):
            raise ProblemError("phi must be finite on Omega")
        if not np.min(self.psi[d.boundary]) > 0:
            raise ProblemError("psi must have a positive infimum on the boundary")
        if self.delta is not None and self.eps is not None:
            raise ProblemError("set either delta or eps, not both")
        for name in ("delta", "eps"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ProblemError(f"{name} must be positive, got {v}")
        if self.rhs_mode is RhsMode.PENALIZED and self.pen is None and self.frozen_rhs is None:
            raise ProblemError("penalised mode needs delta or eps")
        if self.model.non_convex_F0 and self.rhs_mode is not RhsMode.ALLEN_CAHN:
            raise ProblemError(f"model {self.model.name!r} is only accepted in ALLEN_CAHN mode")
        if self.continuation:
            if not self.model.rho > 0:
                raise ProblemError("continuation mode requires rho > 0")
            kappa = min_hessian_eigenvalue(self.phi, d)
            if not kappa >= self.convexity_floor:
                raise ProblemError(f"phi must be uniformly convex in continuation mode (min eigenvalue {kappa:.3e})")

    @property
    def continuation(self) -> bool:
        return self.eps is not None

    @property
    def pen(self) -> float:
        return self.eps if self.eps is not None else self.delta

    def with_eps(self, eps: float) -> AbreuProblem:
        return AbreuProblem(
            self.domain, self.phi, self.psi, self.model, self.gauge, eps=eps, rhs_mode=self.rhs_mode,
            frozen_rhs=self.frozen_rhs, convexity_floor=self.convexity_floor,
        )


def min_hessian_eigenvalue(u: np.ndarray, domain: Domain) -> float:
    return float(np.min(hessian(u, domain.grid).min_eigenvalue()[domain.interior]))


@dataclass(frozen=True)
class HomotopyConfig:
    t_schedule: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    picard_damping: float = 0.5
    w_floor: float = 1e-8
    outer_tol: float = 1e-7
    max_outer: int = 200
    max_bisections: int = 4
    picard_steps: int = 10
    accelerate: bool = True
    krylov_rtol: float = 1e-4
    min_damping: float = 1.0 / 1024
    lma_rtol: float = 1e-10
    ma: MAConfig = field(default_factory=lambda: MAConfig(newton_tol=1e-11))

    def __post_init__(self):
        ts = tuple(float(t) for t in self.t_schedule)
        object.__setattr__(self, "t_schedule", ts)
        if len(ts) < 1 or ts[-1] != 1.0 or any(b <= a for a, b in zip(ts, ts[1:])) or ts[0] < 0:
            raise ValueError("t_schedule must be increasing, within [0, 1] and end at 1")
        if not 0 < self.picard_damping <= 1:
            raise ValueError("picard_damping must lie in (0, 1]")
        if not self.w_floor > 0 or not self.outer_tol > 0:
            raise ValueError("w_floor and outer_tol must be positive")


# ---------------------------------------------------------------------------
# right-hand side


def assemble_rhs(u: np.ndarray, prob: AbreuProblem) -> np.ndarray:
    """Right-hand side ``f(u)`` on interior nodes (0 elsewhere), before any ``1/eps`` scaling."""
    d = prob.domain
    if prob.frozen_rhs is not None:
        return np.where(d.interior, prob.frozen_rhs, 0.0)
    g = d.grid
    H = hessian(u, g)
    m = d.interior
    f = np.zeros(g.shape)
    if prob.rhs_mode is RhsMode.ALLEN_CAHN:
        f[m] = u[m] ** 3 - u[m] - (H.u11[m] + H.u22[m])
        return f
    x = g.points
    Du = np.moveaxis(gradient(u, g), 0, -1)
    D2 = np.stack([np.stack([H.u11, H.u12], -1), np.stack([H.u12, H.u22], -1)], -2)

    def div_part(sel):
        A = prob.model.hesspF1(x[sel], Du[sel])
        return -prob.model.crossF1(x[sel], Du[sel]) - np.einsum("nij,nij->n", A, D2[sel])

    if prob.rhs_mode is RhsMode.GENERAL_DIV:
        f[m] = div_part(m)
        return f
    m0 = m & d.in_omega0
    f[m0] = prob.model.f0(x[m0], u[m0]) + div_part(m0)
    mo = m & ~d.in_omega0
    f[mo] = (u[mo] - prob.phi[mo]) / prob.pen
    return f


# ---------------------------------------------------------------------------
# one fixed-point map evaluation


@dataclass
class PhiStep:
    w_tilde: np.ndarray
    u: np.ndarray
    f: np.ndarray
    ma_residual: float
    lma_residual: float
    min_det: float
    max_det: float
    t: float = 0.0
    w: np.ndarray | None = None
    op: object = None

    def damped(self, w, sigma: float, floor: float) -> np.ndarray:
        return np.maximum(floor, (1 - sigma) * w + sigma * self.w_tilde)


def _evaluate_map(w, t, prob: AbreuProblem, cfg: HomotopyConfig, u0=None) -> PhiStep:
    d = prob.domain
    wi = w[d.inside]
    if not np.all(np.isfinite(wi)) or np.any(wi < cfg.w_floor):
        raise DomainError(f"w below the floor {cfg.w_floor:g} (min {np.nanmin(wi):.3e})")
    try:
        g = gauge_invert(prob.gauge, np.where(d.interior, w, 1.0))
    except (ValueError, RuntimeError) as exc:
        raise DegenerateError(f"gauge inversion failed: {exc}") from exc
    if not np.all(np.isfinite(g[d.interior])) or np.any(g[d.interior] <= 0):
        raise DegenerateError("gauge inversion left the admissible range")
    ma = solve_dirichlet_ma(g, prob.phi, d, cfg.ma, u0=u0)
    if ma.status is not Status.CONVERGED:
        raise DegenerateError(f"Monge-Ampere solve ended {ma.status.value} at residual {ma.residual:.2e}")
    u = ma.u
    f = assemble_rhs(u, prob)
    det = hessian(u, d.grid).det[d.interior]
    bc = t * prob.psi + (1 - t)
    op = None
    if t == 0.0:
        # zero right-hand side and constant boundary data: the solution is that constant
        w_tilde = np.where(d.inside, 1.0, np.nan)
        lres = 0.0
    else:
        rhs = t * f / prob.eps if prob.continuation else t * f
        op = assemble_lma(u, d)
        w_tilde = op.solve(rhs, bc, rtol=cfg.lma_rtol)
        r = op.apply(w_tilde) - rhs
        lres = float(np.max(np.abs(r[d.interior]))) / max(1.0, float(np.max(np.abs(rhs[d.interior]))))
    return PhiStep(w_tilde, u, f, ma.residual, lres, float(det.min()), float(det.max()), t, w, op)


def _gauge_inverse_slope(gauge: Gauge, w):
    """Derivative of ``w -> G'^{-1}(w)`` at positive ``w``."""
    if gauge.kind == "log":
        return -1.0 / w**2
    if gauge.kind == "power":
        e = 1.0 / (gauge.theta - 1)
        return e * w ** (e - 1)
    h = 1e-6 * w
    return (gauge.invert(w + h) - gauge.invert(w - h)) / (2 * h)


def _map_jvp(step: PhiStep, prob: AbreuProblem, dw: np.ndarray) -> np.ndarray:
    """Directional derivative of ``Phi_t`` at ``step.w`` along ``dw`` (zero on the boundary).

    Both inner linearisations are the cofactor operator of ``D^2 u``, so they
    share the factorisation held by ``step.op``; ``f'(u)`` is differenced.
    """
    d = prob.domain
    zero = np.zeros(d.grid.shape)
    if step.op is None:
        return np.where(d.inside, 0.0, np.nan)
    m = d.interior
    dg = np.zeros(d.grid.shape)
    dg[m] = _gauge_inverse_slope(prob.gauge, step.w[m]) * dw[m]
    du = step.op.solve(dg, zero, rtol=1e-8)
    scale = float(np.max(np.abs(du[d.inside])))
    if scale == 0.0:
        return np.where(d.inside, 0.0, np.nan)
    h = 1e-7 * max(1.0, float(np.max(np.abs(step.u[d.inside])))) / scale
    u_h = step.u + h * np.nan_to_num(du)
    df = (assemble_rhs(u_h, prob) - step.f) / h
    Hu = hessian(np.where(d.inside, du, 0.0), d.grid)
    Hw = hessian(step.w_tilde, d.grid)
    mixed = np.zeros(d.grid.shape)
    mixed[m] = Hu.u22[m] * Hw.u11[m] - 2 * Hu.u12[m] * Hw.u12[m] + Hu.u11[m] * Hw.u22[m]
    s = prob.eps if prob.continuation else 1.0
    return step.op.solve(step.t * df / s - mixed, zero, rtol=1e-8)


def phi_t_step(w, t: float, prob: AbreuProblem, cfg: HomotopyConfig | None = None, sigma: float | None = None, u0=None):
    """Damped fixed-point map ``w -> max(w_floor, (1 - sigma) w + sigma Phi_t(w))``.

    Returns ``(w_next, u)``. Raises ``DomainError`` when ``w`` is below the
    floor and ``DegenerateError`` when an inner solve leaves its admissible range.
    """
    cfg = cfg or HomotopyConfig()
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    sigma = cfg.picard_damping if sigma is None else sigma
    step = _evaluate_map(w, t, prob, cfg, u0)
    return step.damped(w, sigma, cfg.w_floor), step.u


# ---------------------------------------------------------------------------
# homotopy driver


@dataclass
class SolveReport:
    u: np.ndarray
    w: np.ndarray
    status: Status
    history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    t_reached: float = 0.0
    hint: str = ""
    defect: float = math.inf

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(REPORT_COLUMNS)
            for row in self.history:
                wr.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else f"{v:.17g}"


def _run_level(t, w, u, prob, cfg, history):
    """Fixed point of ``Phi_t`` at one level. Returns (w, u, defect, converged, step).

    Adaptive damped Picard runs for at most ``cfg.picard_steps`` accepted steps;
    if the defect is still above ``outer_tol`` the same residual ``Phi_t(w) - w``
    is handed to an inexact Newton solve.
    """
    d = prob.domain
    try:
        cur = _evaluate_map(w, t, prob, cfg, u)
    except _MAP_ERRORS as exc:
        log.debug("map evaluation failed at t=%g: %s", t, exc)
        return w, u, math.inf, False, None
    r = _defect(cur.w_tilde, w, d)
    sigma = 1.0 if t == 0.0 else cfg.picard_damping
    k = 0
    history.append(_row(t, k, r, cur, w, d))
    while r > cfg.outer_tol and k < min(cfg.picard_steps, cfg.max_outer):
        while sigma >= cfg.min_damping:
            w_new = cur.damped(w, sigma, cfg.w_floor)
            try:
                nxt = _evaluate_map(w_new, t, prob, cfg, cur.u)
                r_new = _defect(nxt.w_tilde, w_new, d)
            except _MAP_ERRORS as exc:
                log.debug("rejected step sigma=%g: %s", sigma, exc)
                r_new = math.inf
            if r_new < r:
                w, cur, r = w_new, nxt, r_new
                sigma = min(1.0, 2 * sigma)
                break
            sigma *= 0.5
        else:
            log.debug("damping underflow at t=%g, defect %.3e", t, r)
            break
        k += 1
        history.append(_row(t, k, r, cur, w, d))
    if r <= cfg.outer_tol:
        return w, cur.u, r, True, cur
    if not cfg.accelerate or k >= cfg.max_outer:
        return w, cur.u, r, False, cur
    return _newton_level(t, w, cur, r, k, prob, cfg, history)


def _newton_level(t, w, cur, r, k, prob, cfg, history):
    """Inexact Newton on ``Phi_t(w) - w`` with GMRES and analytic directional derivatives."""
    d = prob.domain
    ins = d.inside
    n = int(ins.sum())

    def field_of(v):
        out = np.full(d.grid.shape, np.nan)
        out[ins] = v
        return out

    while k < cfg.max_outer and r > cfg.outer_tol:
        step = cur

        def matvec(v, step=step):
            dv = field_of(v)
            dv[d.boundary] = 0.0
            return v - _map_jvp(step, prob, dv)[ins]

        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        R = (cur.w_tilde - w)[ins]
        try:
            delta, info = gmres(A, R, rtol=cfg.krylov_rtol, atol=0.0, restart=60, maxiter=5)
        except _MAP_ERRORS as exc:
            log.debug("Newton direction failed at t=%g: %s", t, exc)
            return w, cur.u, r, False, cur
        lam = 1.0
        while lam >= 1.0 / 64:
            w_new = w.copy()
            w_new[ins] = w[ins] + lam * delta
            try:
                nxt = _evaluate_map(w_new, t, prob, cfg, cur.u)
                r_new = _defect(nxt.w_tilde, w_new, d)
            except _MAP_ERRORS:
                r_new = math.inf
            if r_new < r:
                break
            lam *= 0.5
        else:
            log.debug("Newton line search failed at t=%g, defect %.3e", t, r)
            return w, cur.u, r, False, cur
        w, cur, r = w_new, nxt, r_new
        k += 1
        history.append(_row(t, k, r, cur, w, d))
    return w, cur.u, r, r <= cfg.outer_tol, cur


def _defect(w_tilde, w, d) -> float:
    return float(np.max(np.abs(w_tilde[d.inside] - w[d.inside])))


def _row(t, k, r, step: PhiStep, w, d) -> dict:
    wi = w[d.inside]
    return {
        "t": float(t), "k": int(k), "defect": r, "ma_residual": step.ma_residual, "lma_residual": step.lma_residual,
        "min_w": float(wi.min()), "max_w": float(wi.max()), "min_det": step.min_det, "max_det": step.max_det,
    }


def solve_abreu(
    prob: AbreuProblem,
    cfg: HomotopyConfig | None = None,
    w0: np.ndarray | None = None,
    u0: np.ndarray | None = None,
    check_assumptions: bool = False,
) -> SolveReport:
    """Continue the fixed point of ``Phi_t`` from ``t = 0`` to ``t = 1``.

    A level that fails is retried after inserting the midpoint of the last
    t-step, at most ``cfg.max_bisections`` times. With ``w0`` given and a
    schedule starting above 0 the homotopy starts from that field.
    """
    cfg = cfg or HomotopyConfig()
    d = prob.domain
    if check_assumptions and prob.rhs_mode is RhsMode.PENALIZED:
        rep = verify_assumptions(prob.model, d.omega0, n_samples=400)
        if not rep.passed:
            log.warning("model %s fails structural checks: %s", prob.model.name,
                        [k for k, c in rep.checks.items() if not c.passed])
    w = np.where(d.inside, 1.0, np.nan) if w0 is None else np.where(d.inside, w0, np.nan)
    u = u0
    history: list = []
    pending = list(cfg.t_schedule)
    t_done = None
    bisections = 0
    last = None
    defect = math.inf
    hint = ""
    while pending:
        t = pending[0]
        w_new, u_new, defect, ok, step = _run_level(t, w, u, prob, cfg, history)
        if ok:
            w, u, last, t_done = w_new, u_new, step, t
            pending.pop(0)
            continue
        lo = 0.0 if t_done is None else t_done
        if bisections < cfg.max_bisections and t - lo > 1e-6 and t_done is not None:
            bisections += 1
            pending.insert(0, 0.5 * (lo + t))
            log.info("bisecting t-step: inserting t=%g", pending[0])
            continue
        hint = f"fixed point not reached at t={t:g}; bisect the step ({lo:g}, {t:g}]"
        if step is not None:
            w, u, last = w_new, u_new, step
        break
    status = Status.NOT_CONVERGED
    if not pending and last is not None:
        status = Status.CONVERGED
        if np.min(w[d.inside]) <= cfg.w_floor:
            status, hint = Status.NOT_CONVERGED, "positivity floor active at the solution"
        elif check_discrete_convexity(u, d, tol=1e-8):
            status, hint = Status.NOT_CONVERGED, "solution is not discretely convex"
        elif not last.min_det > 0:
            status, hint = Status.DEGENERATE, "non-positive Hessian determinant"
    rep = SolveReport(u=u, w=w, status=status, history=history, t_reached=t_done or 0.0, hint=hint, defect=defect)
    if u is not None and last is not None:
        rep.diagnostics = _diagnostics(u, w, prob, last)
    return rep


def _diagnostics(u, w, prob: AbreuProblem, step: PhiStep) -> dict:
    d = prob.domain
    out = {
        "u_inf": float(np.max(np.abs(u[d.inside]))),
        "min_det": step.min_det,
        "max_det": step.max_det,
        "min_w": float(np.min(w[d.inside])),
        "max_w": float(np.max(w[d.inside])),
    }
    bd = boundary_diagnostics(u, prob)
    out["int_unu2"] = bd["int_unu2"]
    if prob.pen is not None:
        out.update(lemma_quantities(u, prob))
    out["J"] = evaluate_J(u, prob.model, d)
    if prob.pen is not None:
        try:
            out["J_pen"] = evaluate_J_eps(u, prob.model, prob.gauge, prob.pen, prob.phi, d)
        except NotImplementedError:
            out["J_pen"] = math.nan
    return out


def lemma_quantities(u, prob: AbreuProblem) -> dict:
    """``pen int u_nu^2``, ``rho int_{Omega_0} (u - phi)^2`` and ``int_{outer} (u - phi)^2 / pen``."""
    d = prob.domain
    bq = d.boundary_quadrature()
    unu = normal_derivative(u, d)
    diff2 = np.where(d.inside, (u - prob.phi) ** 2, 0.0)
    pen = prob.pen
    return {
        "eps_unu2": pen * float(np.sum(bq.weight * unu**2)),
        "rho_omega0": prob.model.rho * d.integrate(diff2, "omega0"),
        "pen_outer": d.integrate(diff2, "outer") / pen,
    }


def boundary_diagnostics(u, prob: AbreuProblem) -> dict:
    """Boundary integrals of ``u_nu^2`` and ``K psi u_nu^2`` and ``max |u_nu|``.

    On rectangles the curvature sits at the corners and is not representable; the
    curvature integral is then 0 and ``curvature_flag`` is set.
    """
    d = prob.domain
    bq = d.boundary_quadrature()
    unu = normal_derivative(u, d)
    psi = prob.psi[bq.i, bq.j]
    return {
        "int_unu2": float(np.sum(bq.weight * unu**2)),
        "int_K_psi_unu2": float(np.sum(bq.weight * bq.curvature * psi * unu**2)),
        "max_unu": float(np.max(np.abs(unu))) if unu.size else 0.0,
        "curvature_flag": d.is_rectangle,
    }


def multiplier_field(u: np.ndarray, eps: float, domain: Domain) -> np.ndarray:
    """``eps (D^2 u)^{-1}`` at interior nodes as an ``(nx, ny, 2, 2)`` array, NaN elsewhere."""
    H = hessian(u, domain.grid)
    m = domain.interior
    if not np.all(H.det[m] > 0):
        raise DegenerateError("det D^2 u must be positive for the multiplier field")
    out = np.full(domain.grid.shape + (2, 2), np.nan)
    inv = eps / H.det[m]
    out[m, 0, 0] = inv * H.u22[m]
    out[m, 1, 1] = inv * H.u11[m]
    out[m, 0, 1] = out[m, 1, 0] = -inv * H.u12[m]
    return out


# ---------------------------------------------------------------------------
# epsilon continuation


def epsilon_continuation(
    prob: AbreuProblem,
    eps_list,
    cfg: HomotopyConfig | None = None,
    halt_on_failure: bool = False,
    cold_start: bool = False,
) -> list[SolveReport]:
    """Solve the eps-scaled system for each eps in a decreasing list.

    Later eps values start from the previous solution at ``t = 1`` unless
    ``cold_start``. Each report gains ``gap_prev``, the max-norm change on
    Omega_0 from the previous eps.
    """
    cfg = cfg or HomotopyConfig()
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or not all(e > 0 for e in eps_list):
        raise ValueError("eps_list must be positive and strictly decreasing")
    d = prob.domain
    reports: list[SolveReport] = []
    prev = None
    for eps in eps_list:
        p = prob.with_eps(eps)
        if prev is None or cold_start or prev.status is not Status.CONVERGED:
            rep = solve_abreu(p, cfg)
        else:
            warm = HomotopyConfig(**{**cfg.__dict__, "t_schedule": (1.0,)})
            rep = solve_abreu(p, warm, w0=prev.w, u0=prev.u)
            if rep.status is not Status.CONVERGED:
                log.info("warm start failed at eps=%g; restarting the homotopy", eps)
                rep = solve_abreu(p, cfg)
        rep.diagnostics["eps"] = eps
        m = d.in_omega0
        rep.diagnostics["gap_prev"] = (
            float(np.max(np.abs(rep.u[m] - prev.u[m]))) if prev is not None and rep.u is not None else math.nan
        )
        reports.append(rep)
        if rep.status is not Status.CONVERGED and halt_on_failure:
            break
        prev = rep
    return reports


__all__ = [
    "AbreuError", "AbreuProblem", "HomotopyConfig", "PhiStep", "RhsMode", "SolveReport", "assemble_rhs",
    "boundary_diagnostics", "epsilon_continuation", "lemma_quantities", "multiplier_field", "phi_t_step",
    "solve_abreu",
]
