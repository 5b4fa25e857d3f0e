import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abreu.errors import ProblemError, Status
from abreu.grid import standard_domain
from abreu.models import allen_cahn, rochet_chone
from abreu.oracle import ConvexityCone, OracleConfig, OracleObjective, _ipm_project, minimize_constrained, refined_convexity_failures

D13 = standard_domain(13)


def noisy(seed, scale=1.0):
    rng = np.random.default_rng(seed)
    x1, x2 = D13.grid.coords
    return 0.5 * (x1**2 + x2**2) + scale * rng.normal(size=D13.grid.shape)


def kkt_residual(cone, y, x, lam, metric, held):
    A = cone.matrix()
    lam = np.concatenate(lam)
    r = metric * (x - y).ravel() - A.T @ lam
    return float(np.abs(r[~held.ravel()]).max()), float((A @ x.ravel()) @ lam), float(lam.min())


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000), weighted=st.booleans())
def test_projection_satisfies_kkt(seed, weighted):
    cone = ConvexityCone(D13)
    y = noisy(seed, scale=0.03)
    M = np.random.default_rng(seed + 1).uniform(0.5, 4.0, y.shape) if weighted else np.ones(y.shape)
    x, lam = cone.project(y, fixed=D13.boundary, metric=M, sweep_budget=None)
    assert cone.violation(x) <= 1e-10
    assert np.array_equal(x[D13.boundary], y[D13.boundary])
    stat, comp, lmin = kkt_residual(cone, y, x, lam, M.ravel(), D13.boundary)
    assert stat < 1e-8 and abs(comp) < 1e-8 and lmin >= 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_projection_is_idempotent(seed):
    cone = ConvexityCone(D13)
    x, _ = cone.project(noisy(seed, scale=0.3), fixed=D13.boundary)
    x2, _ = cone.project(x, fixed=D13.boundary)
    assert np.abs(x2 - x).max() <= 1e-12


def test_interior_point_agrees_with_dykstra():
    cone = ConvexityCone(D13)
    y = noisy(7, scale=0.1)
    M = np.random.default_rng(8).uniform(0.5, 2.0, y.shape)
    x_d, _ = cone.project(y, fixed=D13.boundary, metric=M, sweep_budget=None)
    x_i, lam = _ipm_project(cone.matrix(), y.ravel(), D13.boundary.ravel(), M.ravel())
    assert np.abs(x_i.reshape(y.shape) - x_d).max() < 1e-8
    assert lam.min() >= 0


def test_fallback_after_small_budget_is_feasible():
    cone = ConvexityCone(D13)
    y = noisy(11, scale=0.1)
    x, _ = cone.project(y, fixed=D13.boundary, sweep_budget=1)
    assert cone.prefer_interior_point
    assert cone.violation(x) <= 1e-10
    ref, _ = ConvexityCone(D13).project(y, fixed=D13.boundary, sweep_budget=None)
    assert np.abs(x - ref).max() < 1e-8


def test_matrix_rows_match_violation():
    cone = ConvexityCone(D13)
    y = noisy(5)
    assert cone.n_rows == 4 * int(D13.interior.sum())
    assert cone.violation(y) == pytest.approx(max(0.0, -float((cone.matrix() @ y.ravel()).min())))


def test_objective_gradient_matches_finite_differences():
    x1, x2 = D13.grid.coords
    phi = x1**2 + x2**2
    obj = OracleObjective(rochet_chone(1.0, rho=1.0), phi, D13, 1e-2)
    u = np.where(D13.inside, phi + 0.1 * np.sin(3 * x1) * np.cos(2 * x2), 0.0)
    g = obj.grad(u)
    rng = np.random.default_rng(0)
    v = rng.normal(size=u.shape) * D13.interior
    h = 1e-6
    fd = (obj.value(u + h * v) - obj.value(u - h * v)) / (2 * h)
    assert np.sum(g * v) == pytest.approx(fd, rel=1e-6)


@pytest.fixture(scope="module")
def oracle_result():
    x1, x2 = D13.grid.coords
    return minimize_constrained(rochet_chone(1.0, rho=1.0), x1**2 + x2**2, D13, OracleConfig(pen_eps=1e-3))


def test_oracle_converges_monotonically(oracle_result):
    res = oracle_result
    assert res.status is Status.CONVERGED
    assert res.violation <= 1e-10
    obj = [h[0] for h in res.history]
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(obj, obj[1:]))
    assert refined_convexity_failures(np.nan_to_num(res.u), D13) <= 1.0


def test_oracle_csv_columns(oracle_result, tmp_path):
    oracle_result.write_csv(tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "iterate,objective,pg_norm,max_violation"
    assert len(lines) == len(oracle_result.history) + 1


def test_oracle_unpreconditioned_agrees(oracle_result):
    x1, x2 = D13.grid.coords
    plain = minimize_constrained(rochet_chone(1.0, rho=1.0), x1**2 + x2**2, D13,
                                 OracleConfig(pen_eps=1e-3, precondition=False, pg_tol=1e-8))
    assert plain.status is Status.CONVERGED
    assert math.isclose(plain.objective, oracle_result.objective, rel_tol=1e-6, abs_tol=1e-9)


def test_oracle_rejects_nonconvex_model():
    x1, x2 = D13.grid.coords
    with pytest.raises(ProblemError):
        minimize_constrained(allen_cahn(), x1**2 + x2**2, D13)
