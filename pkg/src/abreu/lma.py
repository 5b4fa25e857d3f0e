"""Nine-point non-divergence operators and the linearized Monge-Ampere solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from abreu.errors import DegenerateError, LinearSolveError
from abreu.grid import Domain, cofactor, hessian

_OFFSETS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))


@dataclass(eq=False)
class StencilOperator:
    """``a11 D11 + 2 a12 D12 + a22 D22`` restricted to interior nodes.

    ``A`` acts on interior unknowns; ``B`` carries the coupling to boundary values.
    """

    domain: Domain
    A: sp.csc_matrix
    B: sp.csr_matrix
    interior: np.ndarray
    boundary: np.ndarray
    _lu: object = None

    def apply(self, w: np.ndarray) -> np.ndarray:
        """Operator applied to a full field; returns a field that is 0 off the interior."""
        out = np.zeros(self.domain.grid.shape)
        out.flat[self.interior] = self.A @ w.flat[self.interior] + self.B @ w.flat[self.boundary]
        return out

    def factor(self):
        if self._lu is None:
            self._lu = splu(self.A.tocsc())
        return self._lu

    def solve(self, f: np.ndarray, bc: np.ndarray, rtol: float = 1e-10, refine: int = 3) -> np.ndarray:
        """Solve ``L w = f`` on interior nodes with ``w = bc`` on boundary nodes.

        Raises
        ------
        LinearSolveError
            If the relative residual stays above ``rtol`` after iterative refinement.
        """
        shape = self.domain.grid.shape
        w = np.where(self.domain.inside, 0.0, np.nan)
        w.flat[self.boundary] = np.asarray(bc, float).flat[self.boundary]
        rhs = np.asarray(f, float).flat[self.interior] - self.B @ w.flat[self.boundary]
        nb = np.linalg.norm(rhs)
        if nb == 0.0:
            w.flat[self.interior] = 0.0
            return w
        lu = self.factor()
        x = lu.solve(rhs)
        for _ in range(refine):
            r = rhs - self.A @ x
            if np.linalg.norm(r) <= rtol * nb:
                break
            x = x + lu.solve(r)
        rel = np.linalg.norm(rhs - self.A @ x) / nb
        if not np.isfinite(rel) or rel > rtol:
            raise LinearSolveError(f"relative residual {rel:.2e} above {rtol:.0e}")
        w.flat[self.interior] = x
        return w.reshape(shape)


def assemble_nine_point(a11, a12, a22, domain: Domain) -> StencilOperator:
    g = domain.grid
    nx, ny = g.shape
    interior = np.flatnonzero(domain.interior)
    boundary = np.flatnonzero(domain.boundary)
    pos = np.full(nx * ny, -1)
    pos[interior] = np.arange(interior.size)
    bpos = np.full(nx * ny, -1)
    bpos[boundary] = np.arange(boundary.size)

    i, j = np.unravel_index(interior, (nx, ny))
    c11 = np.asarray(a11).flat[interior] / g.h1**2
    c22 = np.asarray(a22).flat[interior] / g.h2**2
    cx = np.asarray(a12).flat[interior] / (2 * g.h1 * g.h2)
    coefs = (-2 * c11 - 2 * c22, c11, c11, c22, c22, cx, cx, -cx, -cx)

    rows, cols, vals = [], [], []
    for (di, dj), c in zip(_OFFSETS, coefs):
        rows.append(np.arange(interior.size))
        cols.append((i + di) * ny + (j + dj))
        vals.append(np.broadcast_to(c, interior.shape))
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    keep = vals != 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    if np.any((pos[cols] < 0) & (bpos[cols] < 0)):
        raise ValueError("stencil reaches outside the domain")
    on_int = pos[cols] >= 0
    A = sp.csc_matrix((vals[on_int], (rows[on_int], pos[cols[on_int]])), shape=(interior.size, interior.size))
    B = sp.csr_matrix((vals[~on_int], (rows[~on_int], bpos[cols[~on_int]])), shape=(interior.size, boundary.size))
    return StencilOperator(domain, A, B, interior, boundary)


def laplacian(domain: Domain) -> StencilOperator:
    one = np.ones(domain.grid.shape)
    return assemble_nine_point(one, np.zeros_like(one), one, domain)


def assemble_lma(u: np.ndarray, domain: Domain) -> StencilOperator:
    """Linearized Monge-Ampere operator ``U^{ij} D_ij`` with frozen cofactor coefficients.

    Raises ``DegenerateError`` when ``det D^2 u <= 0`` at an interior node; the
    smallest determinant is stored on the returned operator as ``d_min``.
    """
    H = hessian(u, domain.grid)
    det = H.det[domain.interior]
    d_min = float(det.min())
    if not d_min > 0 or np.any(H.u11[domain.interior] <= 0):
        raise DegenerateError(f"Hessian not positive definite (min det {d_min:.3e})")
    U = cofactor(H)
    op = assemble_nine_point(U.c11, U.c12, U.c22, domain)
    op.d_min = d_min
    return op


def solve_lma(u: np.ndarray, f: np.ndarray, psi_bc: np.ndarray, domain: Domain, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``U^{ij} w_ij = f`` with ``w = psi_bc`` on the boundary of Omega."""
    return assemble_lma(u, domain).solve(f, psi_bc, rtol=rtol)


def lma_maximum_principle_check(w: np.ndarray, f: np.ndarray, domain: Domain, tol: float = 1e-8) -> dict:
    """Discrete weak maximum principle monitor.

    ``f <= 0`` means ``w`` is a supersolution, so its minimum sits on the boundary;
    ``f >= 0`` gives the symmetric statement for the maximum. Sign-indefinite
    ``f`` is reported as not applicable.
    """
    fi = np.asarray(f)[domain.interior]
    wi, wb = w[domain.interior], w[domain.boundary]
    scale = max(1.0, float(np.max(np.abs(w[domain.inside]))))
    out = {"applicable": [], "passed": True, "witness": None}
    if np.all(fi <= 0):
        out["applicable"].append("min")
        k = int(np.argmin(wi))
        if wi[k] < wb.min() - tol * scale:
            out["passed"] = False
            out["witness"] = ("min", float(wi[k]), float(wb.min()))
    if np.all(fi >= 0):
        out["applicable"].append("max")
        k = int(np.argmax(wi))
        if wi[k] > wb.max() + tol * scale:
            out["passed"] = False
            out["witness"] = ("max", float(wi[k]), float(wb.max()))
    return out
