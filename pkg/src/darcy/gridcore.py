"""Masked-grid 7-point Laplacian, conjugate gradients and edge energy.

All operators act on full 3-D arrays.  Nodes outside the ``free`` mask are
fixed; their values enter only through the right-hand side.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import SolverDiverged


@njit(cache=True)
def apply_laplacian(u, free, out):
    """``out = 6 u - sum(neighbors)`` on free nodes, zero elsewhere.

    Neighbors outside the array count as zero.
    """
    nx, ny, nz = u.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not free[i, j, k]:
                    out[i, j, k] = 0.0
                    continue
                s = 6.0 * u[i, j, k]
                if i > 0:
                    s -= u[i - 1, j, k]
                if i < nx - 1:
                    s -= u[i + 1, j, k]
                if j > 0:
                    s -= u[i, j - 1, k]
                if j < ny - 1:
                    s -= u[i, j + 1, k]
                if k > 0:
                    s -= u[i, j, k - 1]
                if k < nz - 1:
                    s -= u[i, j, k + 1]
                out[i, j, k] = s


@njit(cache=True)
def edge_energy(u):
    """Sum of squared differences over all grid edges."""
    nx, ny, nz = u.shape
    s = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                v = u[i, j, k]
                if i < nx - 1:
                    s += (u[i + 1, j, k] - v) ** 2
                if j < ny - 1:
                    s += (u[i, j + 1, k] - v) ** 2
                if k < nz - 1:
                    s += (u[i, j, k + 1] - v) ** 2
    return s


def cg(free: np.ndarray, rhs: np.ndarray, tol: float = 1e-8,
       maxiter: int | None = None, x0: np.ndarray | None = None):
    """Solve ``L x = rhs`` on the free nodes by conjugate gradients.

    ``L`` is the graph Laplacian restricted to free nodes with zero values
    elsewhere; it is symmetric positive definite whenever every free
    component touches a fixed node.  The diagonal is constant, so Jacobi
    scaling would not change the iterates.

    Returns ``(x, iterations, relative_residual)``.
    """
    free = np.ascontiguousarray(free, dtype=np.bool_)
    b = np.where(free, rhs, 0.0)
    n = int(free.sum())
    if maxiter is None:
        maxiter = max(100, int(20 * math.sqrt(max(n, 1))))
    x = np.zeros_like(b) if x0 is None else np.where(free, x0, 0.0)
    Ap = np.empty_like(b)
    apply_laplacian(x, free, Ap)
    r = b - Ap
    bnorm = math.sqrt(float(np.vdot(b, b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    p = r.copy()
    rr = float(np.vdot(r, r))
    it = 0
    while math.sqrt(rr) > tol * bnorm:
        if it >= maxiter:
            raise SolverDiverged(
                f"no convergence after {it} iterations "
                f"(residual {math.sqrt(rr) / bnorm:.3e})")
        apply_laplacian(p, free, Ap)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0.0:
            raise SolverDiverged("operator is not positive definite on the free nodes")
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = float(np.vdot(r, r))
        p *= rr_new / rr
        p += r
        rr = rr_new
        it += 1
    return x, it, math.sqrt(rr) / bnorm


def solve_fixed(free: np.ndarray, fixed_values: np.ndarray, source: np.ndarray | None = None,
                tol: float = 1e-8, maxiter: int | None = None):
    """Solve with prescribed values off the free set and a scaled source.

    ``source`` is ``h**2 f`` on free nodes.  Returns the full field.
    """
    g = np.where(free, 0.0, fixed_values)
    Lg = np.empty_like(g)
    apply_laplacian(g, free, Lg)
    rhs = -Lg
    if source is not None:
        rhs = rhs + source
    x, it, res = cg(free, rhs, tol=tol, maxiter=maxiter)
    return x + g, it, res
