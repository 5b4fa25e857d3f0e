"""Acceptance suite: one or more tests per criterion, summarised as PASS/FAIL lines.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary ends with
one line per criterion.
"""

from __future__ import annotations

import csv
import filecmp
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from abreu.config import RunConfig, bundled_config
from abreu.errors import Status
from abreu.grid import (
    check_discrete_convexity, cofactor, cone_linf_bound, divergence_free_defect, hessian, interior_gradient_bound,
    standard_domain,
)
from abreu.lma import solve_lma
from abreu.models import power_gauge, rochet_chone
from abreu.monge_ampere import solve_dirichlet_ma
from abreu.oracle import ConvexityCone, OracleObjective, minimize_constrained
from abreu.system import AbreuProblem, HomotopyConfig, phi_t_step, solve_abreu

a, b = sp.symbols("a b")
CLI = [sys.executable, "-m", "abreu.cli"]


def _lambdify(expr):
    f = sp.lambdify((a, b), expr, "numpy")
    return lambda x1, x2: np.broadcast_to(f(x1, x2), np.shape(x1)).astype(float)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _summary(path):
    return {r["key"]: r["value"] for r in _read_csv(path)}


def _linf(e, mask):
    return float(np.max(np.abs(e[mask])))


# -- 1. Monge-Ampere manufactured solutions ------------------------------------


@pytest.mark.criterion(1, "Monge-Ampere manufactured solutions")
def test_ma_quadratic_exact():
    d = standard_domain(65)
    x1, x2 = d.grid.coords
    u = 0.5 * (x1**2 + x2**2)
    t0 = time.perf_counter()
    r = solve_dirichlet_ma(np.ones(d.grid.shape), u, d)
    assert time.perf_counter() - t0 < 10
    assert r.status is Status.CONVERGED
    assert _linf(r.u - u, d.inside) <= 1e-8


@pytest.mark.criterion(1, "Monge-Ampere manufactured solutions")
def test_ma_exponential_second_order():
    r2 = a**2 + b**2
    u_ex = sp.exp(r2 / 2)
    g_ex = sp.simplify(sp.hessian(u_ex, (a, b)).det())
    assert sp.simplify(g_ex - (1 + r2) * sp.exp(r2)) == 0
    U, G = _lambdify(u_ex), _lambdify(g_ex)
    errs = []
    for n in (33, 65):
        d = standard_domain(n)
        x1, x2 = d.grid.coords
        t0 = time.perf_counter()
        r = solve_dirichlet_ma(G(x1, x2), U(x1, x2), d)
        assert time.perf_counter() - t0 < 10
        assert r.status is Status.CONVERGED
        errs.append(_linf(r.u - U(x1, x2), d.inside))
    assert 3.0 <= errs[0] / errs[1] <= 5.0


# -- 2. linearized operator -------------------------------------------------------


@pytest.mark.criterion(2, "linearized solver exactness and order")
def test_lma_harmonic_polynomials_exact():
    d = standard_domain(33)
    x1, x2 = d.grid.coords
    u = 0.5 * (x1**2 + x2**2)
    zero = np.zeros(d.grid.shape)
    for w in (x1**2 - x2**2, x1 * x2, x1**3 - 3 * x1 * x2**2, 2 + x1 - 3 * x2):
        assert _linf(solve_lma(u, zero, w, d) - w, d.inside) <= 1e-12


@pytest.mark.criterion(2, "linearized solver exactness and order")
def test_lma_variable_coefficients_second_order():
    u_ex = sp.exp((a**2 + b**2) / 2)
    w_ex = sp.exp(a) * sp.cos(b) + a**2 * b**2
    H = sp.hessian(u_ex, (a, b))
    f_ex = sp.simplify(H[1, 1] * sp.diff(w_ex, a, 2) - 2 * H[0, 1] * sp.diff(w_ex, a, b) + H[0, 0] * sp.diff(w_ex, b, 2))
    U, W, F = _lambdify(u_ex), _lambdify(w_ex), _lambdify(f_ex)
    t0 = time.perf_counter()
    errs = []
    for n in (33, 65):
        d = standard_domain(n)
        x1, x2 = d.grid.coords
        w = solve_lma(U(x1, x2), F(x1, x2), W(x1, x2), d)
        errs.append(_linf(w - W(x1, x2), d.inside))
    assert time.perf_counter() - t0 < 10
    assert 3.0 <= errs[0] / errs[1] <= 5.0


# -- 3. cofactor divergence ----------------------------------------------------------


def _cubic(c, x1, x2):
    return (c[0] * x1**3 + c[1] * x1**2 * x2 + c[2] * x1 * x2**2 + c[3] * x2**3
            + c[4] * x1**2 + c[5] * x1 * x2 + c[6] * x2**2 + c[7] * x1 + c[8] * x2 + c[9])


@pytest.mark.criterion(3, "discrete cofactor is divergence free")
@pytest.mark.parametrize("n", [33, 65])
def test_cofactor_divergence_free_on_integer_cubics(n):
    # integer coefficients on dyadic nodes: every grid value is exact in float64
    t0 = time.perf_counter()
    d = standard_domain(n)
    x1, x2 = d.grid.coords
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = _cubic(rng.integers(-5, 6, size=10).astype(float), x1, x2)
        D = divergence_free_defect(cofactor(hessian(u, d.grid)), d.grid)
        assert np.nanmax(np.abs(D)) <= 1e-12
    assert time.perf_counter() - t0 < 5


@pytest.mark.criterion(3, "discrete cofactor is divergence free")
@pytest.mark.parametrize("n", [33, 65])
def test_cofactor_divergence_free_on_real_cubics_extended_precision(n):
    # generic coefficients: float64 rounding alone is ~eps |u| / h^3, so evaluate in long double
    t0 = time.perf_counter()
    d = standard_domain(n)
    x1, x2 = (c.astype(np.longdouble) for c in d.grid.coords)
    rng = np.random.default_rng(4)
    for _ in range(20):
        u = _cubic(rng.normal(size=10).astype(np.longdouble), x1, x2)
        D = divergence_free_defect(cofactor(hessian(u, d.grid)), d.grid)
        assert np.nanmax(np.abs(D)) <= 1e-12
    assert time.perf_counter() - t0 < 5


@pytest.mark.criterion(3, "discrete cofactor is divergence free")
def test_cofactor_divergence_second_order_on_exponential():
    t0 = time.perf_counter()
    defects = []
    for n in (33, 65):
        d = standard_domain(n)
        x1, x2 = d.grid.coords
        D = divergence_free_defect(cofactor(hessian(np.exp(0.5 * (x1**2 + x2**2)), d.grid)), d.grid)
        defects.append(float(np.nanmax(np.abs(D))))
    assert time.perf_counter() - t0 < 5
    assert 3.0 <= defects[0] / defects[1] <= 5.0


# -- 4. full-system manufactured fixed point ------------------------------------


@pytest.mark.criterion(4, "full-system manufactured fixed point")
def test_manufactured_fixed_point_second_order():
    u_ex = (a**2 + b**2) / 2 + (a**4 + b**4) / 12
    H = sp.hessian(u_ex, (a, b))
    w_ex = 1 / H.det()
    f_ex = sp.simplify(H[1, 1] * sp.diff(w_ex, a, 2) - 2 * H[0, 1] * sp.diff(w_ex, a, b) + H[0, 0] * sp.diff(w_ex, b, 2))
    U, W, F = _lambdify(u_ex), _lambdify(w_ex), _lambdify(f_ex)
    t0 = time.perf_counter()
    eu, ew = [], []
    for n in (33, 65):
        d = standard_domain(n)
        x1, x2 = d.grid.coords
        wb = W(x1, x2)
        prob = AbreuProblem(d, U(x1, x2), wb, rochet_chone(1.0), power_gauge(0), frozen_rhs=F(x1, x2))
        rep = solve_abreu(prob, HomotopyConfig(t_schedule=(1.0,)), w0=np.where(d.boundary, wb, 1.0))
        assert rep.status is Status.CONVERGED
        eu.append(_linf(rep.u - U(x1, x2), d.inside))
        ew.append(_linf(rep.w - wb, d.inside))
    assert time.perf_counter() - t0 < 60
    assert 3.0 <= eu[0] / eu[1] <= 5.0
    assert 3.0 <= ew[0] / ew[1] <= 5.0


# -- 5. homotopy start --------------------------------------------------------------


@pytest.mark.criterion(5, "homotopy start map has the fixed point w = 1")
def test_start_map_fixed_point_is_one():
    d = standard_domain(33)
    x1, x2 = d.grid.coords
    prob = AbreuProblem(d, x1**2 + x2**2, 1.5 + 0.25 * x1, rochet_chone(1.0, rho=1.0, omega0=d.omega0), power_gauge(0), delta=0.1)
    cfg = HomotopyConfig(picard_damping=1.0)
    one = np.where(d.inside, 1.0, np.nan)
    w1, _ = phi_t_step(one, 0.0, prob, cfg)
    assert np.all(w1[d.inside] == 1.0)
    other = np.where(d.inside, 0.7 + 0.2 * np.cos(2 * x1) * np.sin(x2) ** 2, np.nan)
    w2, _ = phi_t_step(other, 0.0, prob, cfg)
    assert np.all(w2[d.inside] == 1.0)
    rep = solve_abreu(prob, HomotopyConfig(t_schedule=(0.0, 1.0)))
    assert rep.history[0]["t"] == 0.0 and rep.history[0]["defect"] == 0.0


# -- 6. fixed penalisation regime ------------------------------------------------


def _bundled(name, **kw):
    return RunConfig.load(bundled_config(name)).override(**kw)


@pytest.mark.criterion(6, "fixed penalisation: convergence and determinant bounds")
def test_fixed_delta_regime():
    bounds = {}
    for n in (65, 33):
        cfg = _bundled("fixed_delta", **{"grid.n": n})
        d = cfg.domain()
        t0 = time.perf_counter()
        rep = solve_abreu(cfg.problem(d), cfg.homotopy())
        if n == 65:
            assert time.perf_counter() - t0 < 120
        assert rep.status is Status.CONVERGED
        assert np.min(rep.w[d.inside]) > 0
        assert check_discrete_convexity(rep.u, d, tol=1e-8) == []
        det = hessian(rep.u, d.grid).det[d.interior]
        bounds[n] = (float(det.min()), float(det.max()))
        assert bounds[n][0] > 0
    (lo1, hi1), (lo2, hi2) = bounds[33], bounds[65]
    assert max(lo1, lo2) <= min(hi1, hi2)


# -- 7. epsilon continuation against the constrained minimiser ----------------


@pytest.fixture(scope="session")
def compare_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    t0 = time.perf_counter()
    proc = subprocess.run(CLI + ["compare", "--config", "rochet_chone_rho1", "--out", str(out)], capture_output=True, text=True)
    return out, proc, time.perf_counter() - t0


@pytest.mark.criterion(7, "epsilon continuation converges to the constrained minimiser")
def test_continuation_gaps_decrease(compare_run):
    out, proc, elapsed = compare_run
    assert proc.returncode == 0, proc.stderr
    assert elapsed < 600
    assert _summary(out / "oracle_summary.csv")["status"] == "CONVERGED"
    rows = _read_csv(out / "continuation.csv")
    assert [float(r["eps"]) for r in rows] == [0.2, 0.1, 0.05]
    assert all(r["status"] == "CONVERGED" for r in rows)
    gaps = [float(r["gap_oracle"]) for r in rows]
    assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
    assert gaps[-1] <= gaps[0] / 2


@pytest.mark.criterion(7, "epsilon continuation converges to the constrained minimiser")
@pytest.mark.parametrize("quantity", ["eps_unu2", "rho_omega0", "pen_outer"])
def test_continuation_energy_quantities_bounded(compare_run, quantity):
    out, proc, _ = compare_run
    assert proc.returncode == 0, proc.stderr
    vals = [float(r[quantity]) for r in _read_csv(out / "continuation.csv")]
    assert all(v > 0 and math.isfinite(v) for v in vals)
    assert max(vals) / min(vals) <= 10, f"{quantity}: {vals}"


# -- 8. uniqueness cross-check ----------------------------------------------------


@pytest.mark.criterion(8, "cold, warm and perturbed starts agree")
def test_uniqueness_multistart(tmp_path):
    t0 = time.perf_counter()
    proc = subprocess.run(CLI + ["solve", "--config", "uniqueness_bump", "--out", str(tmp_path)], capture_output=True, text=True)
    assert time.perf_counter() - t0 < 300
    assert proc.returncode == 0, proc.stderr
    s = _summary(tmp_path / "summary.csv")
    assert s["status"] == "CONVERGED"
    for name in ("perturbed", "warm"):
        assert s[f"multistart_{name}_status"] == "CONVERGED"
        assert float(s[f"multistart_{name}_gap_u"]) <= 1e-5
        assert float(s[f"multistart_{name}_gap_w"]) <= 1e-5


# -- 9. Allen-Cahn right-hand side ---------------------------------------------------


@pytest.mark.criterion(9, "Allen-Cahn right-hand side")
def test_allen_cahn_solve():
    cfg = _bundled("allen_cahn")
    d = cfg.domain()
    t0 = time.perf_counter()
    rep = solve_abreu(cfg.problem(d), cfg.homotopy())
    assert time.perf_counter() - t0 < 120
    assert rep.status is Status.CONVERGED
    assert check_discrete_convexity(rep.u, d, tol=1e-8) == []
    assert np.min(rep.w[d.inside]) > 0


# -- 10. oracle integrity ------------------------------------------------------------


@pytest.fixture(scope="module")
def saddle_oracle():
    cfg = _bundled("oracle_saddle")
    d = cfg.domain()
    model, phi = cfg.model(d), cfg.phi(d)
    t0 = time.perf_counter()
    res = minimize_constrained(model, phi, d, cfg.oracle())
    return cfg, d, model, phi, res, time.perf_counter() - t0


@pytest.mark.criterion(10, "oracle integrity")
def test_oracle_multistart_agreement(saddle_oracle):
    cfg, d, model, phi, ref, elapsed = saddle_oracle
    assert ref.status is Status.CONVERGED
    assert ref.violation <= 1e-10
    rng = np.random.default_rng(10)
    t0 = time.perf_counter()
    for _ in range(5):
        u0 = phi + rng.uniform(-0.5, 0.5, size=d.grid.shape)
        r = minimize_constrained(model, phi, d, cfg.oracle(), u0=u0)
        assert r.status is Status.CONVERGED
        assert _linf(r.u - ref.u, d.inside) <= 1e-5
    assert elapsed + time.perf_counter() - t0 < 60


@pytest.mark.criterion(10, "oracle integrity")
def test_oracle_random_feasible_audit(saddle_oracle):
    _, d, model, phi, ref, _ = saddle_oracle
    obj = OracleObjective(model, phi, d, 1e-4)
    cone = ConvexityCone(d)
    u_star = np.where(d.inside, ref.u, 0.0)
    best = obj.value(u_star)
    x1, x2 = d.grid.coords
    rng = np.random.default_rng(10)
    for _ in range(40):
        # bump support stays strictly inside Omega so v = phi on the boundary
        c, r0 = rng.uniform(0.0, 1.0), rng.uniform(0.2, 0.55)
        x0 = rng.uniform(-0.4, 0.4, 2)
        v = phi + c * np.maximum(0.0, r0**2 - (x1 - x0[0]) ** 2 - (x2 - x0[1]) ** 2)
        v = np.where(d.inside, v, 0.0)
        if cone.violation(v) > 0:
            v, _ = cone.project(v, fixed=d.boundary)
        noisy = np.where(d.interior, u_star + 0.05 * rng.normal(size=d.grid.shape), u_star)
        proj, _ = cone.project(noisy, fixed=d.boundary)
        s = rng.uniform(0.01, 1.0)
        mix = (1 - s) * u_star + s * v
        mix[d.boundary] = phi[d.boundary]
        for cand in (v, proj, mix):
            assert np.array_equal(cand[d.boundary], phi[d.boundary])
            assert cone.violation(cand) <= 1e-10
            assert obj.value(cand) >= best - 1e-8


@pytest.mark.criterion(10, "oracle integrity")
def test_oracle_audit_perturbed_monopolist():
    t0 = time.perf_counter()
    cfg = _bundled("rochet_chone_rho1", **{"grid.n": 33})
    d = cfg.domain()
    model, phi = cfg.model(d), cfg.phi(d)
    res = minimize_constrained(model, phi, d, cfg.oracle())
    assert res.status is Status.CONVERGED
    obj = OracleObjective(model, phi, d, cfg["oracle.pen_eps"])
    cone = ConvexityCone(d)
    u_star = np.where(d.inside, res.u, 0.0)
    best = obj.value(u_star)
    x1, x2 = d.grid.coords
    rng = np.random.default_rng(13)
    for _ in range(100):
        # phi plus a concave bump supported in Omega_0: convex while c <= 1, equal to phi outside Omega_0
        c, r0 = rng.uniform(0.0, 1.0), rng.uniform(0.05, 0.25)
        x0 = rng.uniform(-0.5 + r0, 0.5 - r0, 2)
        v = phi + c * np.maximum(0.0, r0**2 - (x1 - x0[0]) ** 2 - (x2 - x0[1]) ** 2)
        v = np.where(d.inside, v, 0.0)
        assert cone.violation(v) <= 1e-12
        assert obj.value(v) >= best - 1e-8
    assert time.perf_counter() - t0 < 60


@pytest.mark.criterion(10, "oracle integrity")
def test_cone_projection_idempotent(saddle_oracle):
    _, d, _, phi, _, _ = saddle_oracle
    cone = ConvexityCone(d)
    rng = np.random.default_rng(11)
    for _ in range(3):
        y = np.where(d.inside, rng.normal(size=d.grid.shape), 0.0)
        y[d.boundary] = phi[d.boundary]
        p1, _ = cone.project(y, fixed=d.boundary)
        p2, _ = cone.project(p1, fixed=d.boundary)
        assert float(np.max(np.abs(p2 - p1))) <= 1e-12


# -- 11. convex-function lemmas --------------------------------------------------------


@pytest.mark.criterion(11, "convex-function lemmas on generated fields")
def test_convex_function_lemmas_on_affine_maxima():
    d = standard_domain(33)
    x1, x2 = d.grid.coords
    rng = np.random.default_rng(12)
    t0 = time.perf_counter()
    cone_fail = grad_fail = 0
    for _ in range(200):
        k = rng.integers(1, 9)
        A = rng.normal(size=(k, 2)) * rng.uniform(0.1, 3.0)
        c = rng.normal(size=k)
        u = np.max(A[:, 0, None, None] * x1 + A[:, 1, None, None] * x2 + c[:, None, None], axis=0)
        u = u - u[d.boundary].max() - rng.uniform(0.0, 1.0)
        assert check_discrete_convexity(u, d) == []
        cone_fail += not cone_linf_bound(u, d)["holds"]
        grad_fail += not interior_gradient_bound(u, d)["holds"]
    assert time.perf_counter() - t0 < 10
    assert cone_fail == 0 and grad_fail == 0


# -- 12. determinism ------------------------------------------------------------------


def _same_tree(p, q):
    names = sorted(x.name for x in p.iterdir())
    assert names == sorted(x.name for x in q.iterdir())
    _, mismatch, errors = filecmp.cmpfiles(p, q, names, shallow=False)
    return mismatch, errors


@pytest.mark.criterion(12, "byte-identical reruns")
def test_selftest_deterministic(tmp_path):
    outs = []
    for k in range(2):
        o = tmp_path / f"run{k}"
        proc = subprocess.run(CLI + ["selftest", "--out", str(o)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        outs.append(o)
    assert _same_tree(*outs) == ([], [])


@pytest.mark.criterion(12, "byte-identical reruns")
def test_continuation_deterministic(compare_run, tmp_path):
    first, proc, _ = compare_run
    assert proc.returncode == 0, proc.stderr
    second = tmp_path / "again"
    proc2 = subprocess.run(CLI + ["compare", "--config", "rochet_chone_rho1", "--out", str(second)], capture_output=True, text=True)
    assert proc2.returncode == 0, proc2.stderr
    assert _same_tree(first, second) == ([], [])
