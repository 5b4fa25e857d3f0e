"""Closed-form checks run by ``abreu selftest``; each returns True on success."""

from __future__ import annotations

import csv
import math

import numpy as np

from abreu.errors import AbreuError, DomainError, MaskError, ProblemError
from abreu.grid import (
    Disk, Grid, Hessian, Rectangle, build_domain, check_discrete_convexity, cofactor, cone_linf_bound,
    divergence_free_defect, hessian, interior_gradient_bound, standard_domain,
)
from abreu.lma import assemble_lma, lma_maximum_principle_check, solve_lma
from abreu.models import (
    LagrangianModel, allen_cahn, custom_gauge, exp_lagrangian, gauge_eval, gauge_invert, power_gauge,
    power_lagrangian, rochet_chone, verify_assumptions,
)
from abreu.monge_ampere import ma_residual, solve_dirichlet_ma
from abreu.oracle import ConvexityCone, evaluate_J, evaluate_J_eps
from abreu.system import AbreuProblem, HomotopyConfig, RhsMode, assemble_rhs, boundary_diagnostics, multiplier_field, phi_t_step

CHECKS: list = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _raises(exc, fn, *a, **kw) -> bool:
    try:
        fn(*a, **kw)
    except exc:
        return True
    return False


_D = {}


def _dom(n=17):
    if n not in _D:
        _D[n] = standard_domain(n)
    return _D[n]


def _half_sq(d):
    x1, x2 = d.grid.coords
    return 0.5 * (x1**2 + x2**2)


# -- grid and stencils --------------------------------------------------------


@check
def standard_mask_block():
    d = standard_domain(65)
    return int(d.in_omega0.sum()) == 33 * 33


@check
def near_boundary_disk_rejected():
    return _raises(MaskError, build_domain, Rectangle(-1, 1, -1, 1), Disk((0, 0), 0.999), Grid.square(65))


@check
def coarse_grid_rejected():
    return _raises(MaskError, build_domain, Rectangle(0, 1, 0, 1), Rectangle(0.25, 0.75, 0.25, 0.75), Grid.square(5, 0, 1))


@check
def hessian_of_quadratic_exact():
    d = _dom()
    H = hessian(_half_sq(d), d.grid)
    m = d.interior
    return max(np.abs(H.u11[m] - 1).max(), np.abs(H.u22[m] - 1).max(), np.abs(H.u12[m]).max()) < 1e-12


@check
def hessian_of_cubic_exact():
    d = _dom()
    x1, _ = d.grid.coords
    H = hessian(x1**3, d.grid)
    return np.abs(H.u11 - 6 * x1)[d.interior].max() < 1e-12


@check
def cofactor_examples():
    def cof(a, b, c):
        U = cofactor(Hessian(np.array(a, float), np.array(b, float), np.array(c, float)))
        return np.array([[U.c11, U.c12], [U.c12, U.c22]], float)

    return (
        np.allclose(cof(1, 0, 1), np.eye(2))
        and np.allclose(cof(2, 0, 3), np.diag([3, 2]))
        and np.allclose(cof(2, 1, 2), [[2, -1], [-1, 2]])
    )


@check
def cofactor_divergence_free_on_cubics():
    d = _dom()
    x1, x2 = d.grid.coords
    for u, tol in ((x1**3 + x2**3, 1e-12), (_half_sq(d), 1e-14)):
        D = divergence_free_defect(cofactor(hessian(u, d.grid)), d.grid)
        if np.nanmax(np.abs(D)) > tol:
            return False
    return True


@check
def convexity_check_examples():
    d = _dom()
    x1, x2 = d.grid.coords
    n_int = int(d.interior.sum())
    return (
        check_discrete_convexity(_half_sq(d), d, tol=1e-12) == []
        and len(check_discrete_convexity(-_half_sq(d), d)) == n_int
        and len(check_discrete_convexity(x1**2 - x2**2, d)) == n_int
    )


@check
def cone_bound_constant():
    d = _dom()
    r = cone_linf_bound(np.full(d.grid.shape, -1.0), d)
    return math.isclose(r["lhs"], 1.0) and math.isclose(r["rhs"], 3.0) and r["holds"]


@check
def gradient_bound_examples():
    d = _dom(65)
    z = interior_gradient_bound(np.zeros(d.grid.shape), d)
    q = interior_gradient_bound(_half_sq(d), d)
    return z["bound"] == 0 and z["grad_max"] == 0 and z["holds"] and q["holds"] and abs(q["grad_max"] - math.sqrt(0.5)) < 1e-12


# -- models and gauges ------------------------------------------------------


@check
def rochet_chone_examples():
    m = rochet_chone(1.0, rho=0.0)
    x = np.array([0.3, -0.2])
    p = np.array([1.0, 2.0])
    m1 = rochet_chone(1.0, rho=1.0)
    return (
        np.allclose(m.gradpF1(x, p), p - x)
        and math.isclose(float(m.crossF1(x, p)), -2.0)
        and math.isclose(float(m1.f0(x, 2.0)), 3.0)
    )


@check
def allen_cahn_examples():
    m = allen_cahn()
    x = np.zeros(2)
    f = [float(m.f0(x, z)) for z in (0.0, 1.0, 2.0)]
    F = [float(m.F0(x, z)) for z in (-1.0, 1.0)]
    return f == [0.0, 0.0, 6.0] and F == [0.0, 0.0] and np.allclose(m.hesspF1(x, np.array([3.0, -1.0])), np.eye(2))


@check
def power_and_exp_examples():
    p = np.array([0.7, -1.3])
    x = np.zeros(2)
    return np.allclose(power_lagrangian(2).gradpF1(x, p), p) and np.allclose(exp_lagrangian().hesspF1(x, np.zeros(2)), np.eye(2))


@check
def allen_cahn_fails_monotonicity():
    rep = verify_assumptions(allen_cahn())
    w = rep["AsF0"].witness
    lo, hi = sorted((w["z"], w["z_tilde"]))
    return not rep["AsF0"].passed and lo < 1 / math.sqrt(3) and hi > -1 / math.sqrt(3)


@check
def concave_gradient_term_fails():
    base = power_lagrangian(2)
    m = LagrangianModel(
        name="concave",
        F0=base.F0, f0=base.f0,
        F1=lambda x, p: -np.sum(np.asarray(p) ** 2, axis=-1),
        gradpF1=lambda x, p: -2 * np.asarray(p, float),
        hesspF1=lambda x, p: -2 * np.broadcast_to(np.eye(2), np.shape(p)[:-1] + (2, 2)),
        cross_terms=base.cross_terms,
        C_star=2.0,
    )
    return not verify_assumptions(m)["AsH"].passed


@check
def gauge_examples():
    g0, g1 = power_gauge(0), power_gauge(0.25)
    ce = custom_gauge(lambda d: np.exp(-d))
    return (
        math.isclose(float(gauge_eval(g0, 4.0)[1]), 0.25)
        and math.isclose(float(gauge_invert(g0, 0.25)), 4.0)
        and math.isclose(float(gauge_eval(g1, 16.0)[1]), 0.125)
        and math.isclose(float(gauge_invert(g1, 0.125)), 16.0)
        and math.isclose(float(gauge_invert(ce, np.array([0.5]))[0]), math.log(2.0), rel_tol=1e-10)
    )


# -- Monge-Ampere and linearized solves -------------------------------------


@check
def ma_quadratic_exact():
    d = _dom()
    u = _half_sq(d)
    r = solve_dirichlet_ma(np.ones(d.grid.shape), u, d)
    return np.abs(r.u - u)[d.inside].max() <= 1e-8


@check
def ma_rejects_negative_density():
    d = _dom()
    return _raises(DomainError, solve_dirichlet_ma, -np.ones(d.grid.shape), _half_sq(d), d)


@check
def ma_residual_examples():
    d = _dom()
    u = _half_sq(d)
    r1 = ma_residual(u, np.ones(d.grid.shape), d)[d.interior]
    r2 = ma_residual(u, 2 * np.ones(d.grid.shape), d)[d.interior]
    return np.abs(r1).max() <= 1e-14 and np.allclose(r2, -1.0, atol=1e-14)


@check
def lma_operator_examples():
    d = _dom()
    x1, x2 = d.grid.coords
    lap = assemble_lma(_half_sq(d), d)
    q = x1**2 + x2**2
    ok = np.abs(lap.apply(q)[d.interior] - 4).max() < 1e-10
    op = assemble_lma(x1**2 + 0.5 * x2**2, d)
    ok &= np.abs(op.apply(x1**2)[d.interior] - 2).max() < 1e-10 and np.abs(op.apply(x2**2)[d.interior] - 4).max() < 1e-10
    mixed = assemble_lma(_half_sq(d) + 0.5 * x1 * x2, d)
    ok &= np.abs(mixed.apply(x1 * x2)[d.interior] - (-1.0)).max() < 1e-10 and mixed.d_min > 0
    return bool(ok)


@check
def lma_harmonic_and_quadratic_exact():
    d = _dom()
    x1, x2 = d.grid.coords
    u = _half_sq(d)
    zero = np.zeros(d.grid.shape)
    w1 = solve_lma(u, zero, x1**2 - x2**2, d)
    w2 = solve_lma(u, 4 * np.ones(d.grid.shape), x1**2 + x2**2, d)
    return np.abs(w1 - (x1**2 - x2**2))[d.inside].max() < 1e-12 and np.abs(w2 - (x1**2 + x2**2))[d.inside].max() < 1e-12


@check
def lma_maximum_principle_examples():
    d = _dom()
    x1, x2 = d.grid.coords
    u = _half_sq(d)
    psi = 1.5 + 0.5 * np.sin(3 * x1) * np.cos(2 * x2)
    zero = np.zeros(d.grid.shape)
    w = solve_lma(u, zero, psi, d)
    ok = w[d.inside].min() >= 1 - 1e-8 and w[d.inside].max() <= 2 + 1e-8
    f = -np.ones(d.grid.shape)
    w2 = solve_lma(u, f, np.ones(d.grid.shape), d)
    ok &= w2[d.interior].min() > 1 and lma_maximum_principle_check(w2, f, d)["passed"]
    f4 = 4 * np.ones(d.grid.shape)
    w3 = solve_lma(u, f4, x1**2 + x2**2, d)
    rep = lma_maximum_principle_check(w3, f4, d)
    ok &= rep["passed"] and rep["applicable"] == ["max"]
    return bool(ok)


# -- outer solver -------------------------------------------------------------


def _problem(d, **kw):
    x1, x2 = d.grid.coords
    base = dict(delta=0.1)
    base.update(kw)
    return AbreuProblem(d, x1**2 + x2**2, 1.0, rochet_chone(1.0, rho=0.0, omega0=d.omega0), power_gauge(0), **base)


@check
def rhs_examples():
    d = _dom()
    x1, x2 = d.grid.coords
    p = _problem(d)
    f = assemble_rhs(p.phi, p)
    ok = np.all(f[d.interior & ~d.in_omega0] == 0)
    u = _half_sq(d)
    f1 = assemble_rhs(u, p)
    ok &= np.abs(f1[d.interior & d.in_omega0] - 1).max() < 1e-12
    pa = AbreuProblem(d, p.phi, 1.0, allen_cahn(), power_gauge(0), rhs_mode=RhsMode.ALLEN_CAHN)
    fa = assemble_rhs(u, pa)
    ok &= np.abs((fa - (u**3 - u - 2))[d.interior]).max() < 1e-12
    return bool(ok)


@check
def homotopy_start_is_one():
    d = _dom()
    p = _problem(d)
    x1, x2 = d.grid.coords
    w = np.where(d.inside, 0.5 + 0.25 * np.cos(x1) * np.cos(x2), np.nan)
    w_next, _ = phi_t_step(w, 0.0, p, HomotopyConfig(picard_damping=1.0))
    return bool(np.all(w_next[d.inside] == 1.0))


@check
def floor_violation_rejected():
    d = _dom()
    w = np.where(d.inside, 1.0, np.nan)
    w[d.grid.nx // 2, d.grid.ny // 2] = 0.0
    return _raises(DomainError, phi_t_step, w, 0.5, _problem(d))


@check
def problem_hypotheses_rejected():
    d = _dom()
    x1, x2 = d.grid.coords
    psi0 = np.where(np.abs(x1) == 1, 0.0, 1.0)
    m0 = rochet_chone(1.0, rho=0.0)
    return _raises(ProblemError, AbreuProblem, d, x1**2 + x2**2, psi0, m0, power_gauge(0), delta=0.1) and _raises(
        ProblemError, AbreuProblem, d, x1**2 + x2**2, 1.0, m0, power_gauge(0), eps=0.1
    )


@check
def multiplier_examples():
    d = _dom()
    x1, x2 = d.grid.coords
    M = multiplier_field(_half_sq(d), 0.1, d)[d.interior]
    M2 = multiplier_field(x1**2 + 0.5 * x2**2, 1.0, d)[d.interior]
    ev = np.linalg.eigvalsh(multiplier_field(np.exp(0.5 * (x1**2 + x2**2)), 0.3, d)[d.interior])
    return np.allclose(M, 0.1 * np.eye(2)) and np.allclose(M2, np.diag([0.5, 1.0])) and ev.min() >= 0


@check
def boundary_integrals_vanish_for_zero():
    d = _dom()
    b = boundary_diagnostics(np.zeros(d.grid.shape), _problem(d))
    return b["int_unu2"] == 0 and b["int_K_psi_unu2"] == 0 and b["max_unu"] == 0 and b["curvature_flag"]


# -- functionals --------------------------------------------------------------


@check
def functional_examples():
    d = _dom(65)
    m = rochet_chone(1.0, rho=0.0)
    u = _half_sq(d)
    return (
        abs(evaluate_J(u, m, d)) < 1e-12
        and evaluate_J(np.zeros(d.grid.shape), m, d) == 0
        and math.isclose(evaluate_J(np.ones(d.grid.shape), m, d), 1.0, rel_tol=1e-12)
    )


@check
def barrier_functional_examples():
    d = _dom(65)
    m = rochet_chone(1.0, rho=0.0)
    u = _half_sq(d)
    x1, x2 = d.grid.coords
    g = power_gauge(0)
    return (
        abs(evaluate_J_eps(u, m, g, 1.0, u, d)) < 1e-12
        and abs(evaluate_J_eps(u, m, g, 0.5, u, d)) < 1e-12
        and evaluate_J_eps(x1 + 2 * x2, m, g, 1.0, u, d) == math.inf
    )


@check
def cone_row_signs():
    d = _dom()
    cone = ConvexityCone(d)
    A = cone.matrix()
    u = _half_sq(d).ravel()
    return bool((A @ u).min() >= 0 and (A @ -u).max() <= 0)


def run(path=None) -> list[tuple[str, bool, str]]:
    """Run every check; optionally write ``name,passed,detail`` rows to ``path``."""
    results = []
    for fn in CHECKS:
        try:
            ok, detail = bool(fn()), ""
        except (AbreuError, ArithmeticError, ValueError) as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((fn.__name__, ok, detail))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "passed", "detail"])
            for name, ok, detail in results:
                w.writerow([name, "true" if ok else "false", detail])
    return results
