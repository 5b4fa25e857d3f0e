import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abreu.grid import standard_domain
from abreu.lma import assemble_lma, assemble_nine_point, laplacian, lma_maximum_principle_check, solve_lma

D17 = standard_domain(17)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.3, 3.0), c=st.floats(0.3, 3.0), s=st.floats(-0.9, 0.9), k=st.integers(-3, 3), m=st.integers(-3, 3))
def test_quadratic_w_solved_exactly(a, c, s, k, m):
    b = s * np.sqrt(a * c)
    x1, x2 = D17.grid.coords
    u = 0.5 * (a * x1**2 + 2 * b * x1 * x2 + c * x2**2)
    w = k * x1**2 + m * x2**2 + x1 * x2
    # cofactor of D^2 u applied to D^2 w
    f = c * 2 * k - 2 * b * 1 + a * 2 * m
    sol = solve_lma(u, np.full(D17.grid.shape, f), w, D17)
    assert np.abs(sol - w)[D17.inside].max() < 1e-10


def test_laplacian_is_symmetric_nine_point_special_case():
    lap = laplacian(D17)
    one = np.ones(D17.grid.shape)
    nine = assemble_nine_point(one, 0 * one, one, D17)
    assert abs(lap.A - nine.A).max() < 1e-12
    assert abs(lap.A - lap.A.T).max() < 1e-9


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000))
def test_maximum_principle_random_data(seed):
    rng = np.random.default_rng(seed)
    x1, x2 = D17.grid.coords
    u = 0.5 * (x1**2 + x2**2) + 0.2 * np.exp(x1 * rng.uniform(-1, 1))
    psi = 1 + rng.uniform(0, 1, D17.grid.shape)
    f = -rng.uniform(0, 2, D17.grid.shape)
    w = solve_lma(u, f, psi, D17)
    assert w[D17.inside].min() >= psi[D17.boundary].min() - 1e-10
    assert lma_maximum_principle_check(w, f, D17)["passed"]


def test_operator_apply_matches_solve():
    x1, x2 = D17.grid.coords
    u = np.exp(0.5 * (x1**2 + x2**2))
    op = assemble_lma(u, D17)
    f = np.cos(x1 + x2)
    w = op.solve(f, np.ones(D17.grid.shape))
    assert np.abs(op.apply(w) - f)[D17.interior].max() < 1e-9
