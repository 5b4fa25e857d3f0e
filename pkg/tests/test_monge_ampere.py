import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abreu.errors import DomainError, Status
from abreu.grid import hessian, standard_domain
from abreu.monge_ampere import MAConfig, ma_residual, poisson_guess, solve_dirichlet_ma

D17 = standard_domain(17)


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.3, 3.0), c=st.floats(0.3, 3.0), s=st.floats(-0.9, 0.9), e=st.floats(-1, 1), f=st.floats(-1, 1))
def test_quadratics_reproduced(a, c, s, e, f):
    b = s * np.sqrt(a * c)
    x1, x2 = D17.grid.coords
    u = 0.5 * (a * x1**2 + 2 * b * x1 * x2 + c * x2**2) + e * x1 + f * x2
    r = solve_dirichlet_ma(np.full(D17.grid.shape, a * c - b * b), u, D17)
    assert r.status is Status.CONVERGED
    assert np.abs(r.u - u)[D17.inside].max() <= 1e-8


def test_residual_decreases_and_solution_convex():
    x1, x2 = D17.grid.coords
    g = 1 + 0.5 * np.sin(2 * x1) * np.cos(x2)
    r = solve_dirichlet_ma(g, x1**2 + x2**2, D17)
    assert r.status is Status.CONVERGED
    assert r.residual < 1e-9
    assert r.residuals[-1] < r.residuals[0]
    H = hessian(r.u, D17.grid)
    assert H.min_eigenvalue()[D17.interior].min() > 0
    assert np.abs(ma_residual(r.u, g, D17)[D17.interior]).max() < 1e-8


def test_poisson_guess_keeps_boundary():
    x1, x2 = D17.grid.coords
    phi = x1**2 + x2**2
    u0 = poisson_guess(np.ones(D17.grid.shape), phi, D17)
    assert np.array_equal(u0[D17.boundary], phi[D17.boundary])


def test_zero_density_rejected():
    x1, x2 = D17.grid.coords
    with pytest.raises(DomainError):
        solve_dirichlet_ma(np.zeros(D17.grid.shape), x1**2, D17)


@pytest.mark.parametrize("kw", [{"newton_tol": 0.0}, {"damping": 1.0}, {"convexification_floor": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        MAConfig(**kw)
