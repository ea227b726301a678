"""Cell correctors around a single hole.

The scalar corrector on an annulus ``a < r < R`` is the capacitary potential
``w = (1/a - 1/r) / (1/a - 1/R)``; the Stokes corrector is the classical
translating-sphere solution with unit viscosity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateAnnulus, QuadratureUnderResolved, UnderResolvedBall
from .gridcore import edge_energy, solve_fixed


@dataclass(frozen=True)
class AnnulusCorrector:
    a: float
    R: float

    def __post_init__(self):
        if not (0.0 < self.a < self.R):
            raise DegenerateAnnulus(f"need 0 < a < R, got a={self.a}, R={self.R}")

    def __call__(self, r):
        r = np.asarray(r, float)
        inv_a = 1.0 / self.a
        w = (inv_a - 1.0 / np.maximum(r, 1e-300)) / (inv_a - 1.0 / self.R)
        return np.where(r <= self.a, 0.0, np.where(r >= self.R, 1.0, w))

    def radial_derivative(self, r):
        r = np.asarray(r, float)
        return 1.0 / (r ** 2 * (1.0 / self.a - 1.0 / self.R))


def scalar_corrector(a: float, R: float) -> AnnulusCorrector:
    return AnnulusCorrector(a, R)


def scalar_eval(c: AnnulusCorrector, r):
    return c(r)


def scalar_flux(a: float, R: float) -> float:
    """Outward flux ``∫ ∂_r w`` over any sphere in the annulus: ``4 pi a R/(R-a)``."""
    if not (0.0 < a < R):
        raise DegenerateAnnulus(f"need 0 < a < R, got a={a}, R={R}")
    return 4.0 * math.pi * a * R / (R - a)


def y_value(eps: float, alpha: float, rho, R_eps):
    """Per-hole weight ``eps**3 rho R_eps / (R_eps - eps**alpha rho)``."""
    rho = np.asarray(rho, float)
    R_eps = np.asarray(R_eps, float)
    a = eps ** alpha * rho
    if np.any(a >= R_eps) or np.any(a <= 0):
        raise DegenerateAnnulus("hole radius must lie in (0, R_eps)")
    return eps ** 3 * rho * R_eps / (R_eps - a)


def ball_capacity(r: float) -> float:
    return 4.0 * math.pi * r


def stokes_ball_capacity(r: float) -> float:
    return 6.0 * math.pi * r


def permeability(lam: float, mean_rho: float) -> float:
    """Scalar Darcy constant ``k = 1/(4 pi lam E[rho])``."""
    return 1.0 / (4.0 * math.pi * lam * mean_rho)


def stokes_permeability(lam: float, mean_rho: float) -> float:
    """Stokes Darcy constant ``K = 1/(6 pi lam E[rho])``."""
    return 1.0 / (6.0 * math.pi * lam * mean_rho)


# ---------------------------------------------------------------- quadrature

@lru_cache(maxsize=16)
def sphere_rule(order: int):
    """Lat-long rule on the unit sphere: nodes ``(n, 3)`` and weights summing to ``4 pi``.

    Gauss-Legendre in ``cos(theta)`` with ``order`` nodes, trapezoid in
    ``phi`` with ``2 order`` nodes; exact for polynomials of degree
    ``2 order - 1``.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    nphi = 2 * order
    phi = 2.0 * math.pi * np.arange(nphi) / nphi
    st = np.sqrt(1.0 - t ** 2)
    x = np.outer(st, np.cos(phi)).ravel()
    y = np.outer(st, np.sin(phi)).ravel()
    z = np.repeat(t, nphi)
    W = np.repeat(w, nphi) * (2.0 * math.pi / nphi)
    nodes = np.stack([x, y, z], axis=1)
    nodes.setflags(write=False)
    W.setflags(write=False)
    return nodes, W


def sphere_integral(fn, center, r, order: int = 16, check_order: int | None = 32,
                    rtol: float = 1e-6):
    """``∫_{|x-c|=r} fn(x, n) dS`` with ``n`` the outward unit normal.

    When ``check_order`` is given the integral is repeated at that order and
    a relative disagreement above ``rtol`` raises.
    """
    def run(q):
        n, w = sphere_rule(q)
        vals = np.asarray(fn(np.asarray(center) + r * n, n), float)
        return np.tensordot(w, vals, axes=(0, 0)) * r * r

    lo = run(order)
    if check_order is not None:
        hi = run(check_order)
        scale = max(float(np.max(np.abs(hi))), 1e-300)
        if float(np.max(np.abs(hi - lo))) > rtol * scale:
            raise QuadratureUnderResolved(
                f"orders {order} and {check_order} differ by "
                f"{float(np.max(np.abs(hi - lo))) / scale:.2e}")
        return hi
    return lo


# ---------------------------------------------------------------- Stokes

@dataclass(frozen=True)
class StokesCellSolution:
    """Flow past a sphere of radius ``r0`` translating with velocity ``e_i``.

    ``u = (3a/4)(U/r + (U.x)x/r^3) + (a^3/4)(U/r^3 - 3(U.x)x/r^5)``,
    ``p = (3a/2)(U.x)/r^3``; ``u = U`` on the sphere and ``u -> 0`` at infinity.
    """

    direction: int
    r0: float

    @property
    def U(self) -> np.ndarray:
        e = np.zeros(3)
        e[self.direction] = 1.0
        return e

    def _parts(self, x):
        x = np.atleast_2d(x)
        r = np.linalg.norm(x, axis=1)[:, None]
        U = self.U
        ux = (x @ U)[:, None]
        a = self.r0
        far = 0.75 * a * (U / r + ux * x / r ** 3)
        near = 0.25 * a ** 3 * (U / r ** 3 - 3.0 * ux * x / r ** 5)
        return far, near, r

    def velocity(self, x):
        far, near, _ = self._parts(x)
        return far + near

    def pressure(self, x):
        x = np.atleast_2d(x)
        r = np.linalg.norm(x, axis=1)
        return 1.5 * self.r0 * (x @ self.U) / r ** 3

    def radial_derivative(self, x):
        # far part is homogeneous of degree -1, near part of degree -3
        far, near, r = self._parts(x)
        return -(far + 3.0 * near) / r


def stokes_solution(i: int, r0: float) -> StokesCellSolution:
    if i not in (0, 1, 2):
        raise ValueError("direction must be 0, 1 or 2")
    if r0 <= 0:
        raise DegenerateAnnulus("sphere radius must be positive")
    return StokesCellSolution(i, r0)


def stokes_flux(sol: StokesCellSolution, r: float, order: int = 16,
                check_order: int | None = 32) -> np.ndarray:
    """Traction flux of the corrector ``e_i - u`` through ``|x| = r``.

    Computes ``∫ (∂_n (e_i - u) + p n) dS`` with ``n`` the outward normal,
    i.e. the flux of ``(u, p)`` with the normal pointing toward the sphere.
    It does not depend on ``r`` and equals ``6 pi r0 e_i``.
    """
    if r < sol.r0:
        raise DegenerateAnnulus("evaluation sphere lies inside the obstacle")

    def integrand(x, n):
        return -sol.radial_derivative(x) + sol.pressure(x)[:, None] * n

    return sphere_integral(integrand, np.zeros(3), r, order, check_order)


# ---------------------------------------------------------------- numerical capacity

def numerical_capacity(balls, box, h: float, tol: float = 1e-6, outer=None,
                       maxiter: int | None = None):
    """Capacity of a union of balls relative to a container, by finite differences.

    The potential is 1 on the balls and 0 on the container boundary (the
    box faces, or the boundary of ``outer`` when given).  The capacity is the
    discrete Dirichlet energy ``h * sum_edges (du)**2``, normalized so that a
    ball of radius ``a`` in all of space has capacity ``4 pi a``.

    Returns ``(capacity, iterations)``.
    """
    balls = [(np.asarray(c, float), float(r)) for c, r in balls]
    rmin = min(r for _, r in balls)
    if rmin < 3.0 * h:
        raise UnderResolvedBall(f"ball radius {rmin:g} < 3h = {3 * h:g}")
    lo, hi = (np.asarray(b, float) for b in box)
    n = np.round((hi - lo) / h).astype(int) + 1
    axes = [lo[i] + h * np.arange(n[i]) for i in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij", sparse=True)
    inside = np.zeros(tuple(n), bool)
    for c, r in balls:
        inside |= (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2 <= r * r
    free = np.ones(tuple(n), bool)
    free[[0, -1], :, :] = False
    free[:, [0, -1], :] = False
    free[:, :, [0, -1]] = False
    if outer is not None:
        pts = np.stack(np.broadcast_arrays(X, Y, Z), axis=-1).reshape(-1, 3)
        free &= outer.contains(pts).reshape(tuple(n))
    free &= ~inside
    u, it, _ = solve_fixed(free, inside.astype(float), tol=tol, maxiter=maxiter)
    return h * edge_energy(u), it
