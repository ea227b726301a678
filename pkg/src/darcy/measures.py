"""Flux measures on hole neighborhoods, their cube averages and discrepancies.

Each good hole ``z`` carries a uniform density on the sphere of radius
``R_eps`` around ``eps z``, namely the flux density of its annulus corrector
scaled by ``eps**(3-alpha)``.  Its total mass is ``4 pi Y_z`` (scalar) or
``6 pi Y_z`` (Stokes).  Sums of these atoms over cubes of side ``k eps``
give a piecewise-constant density ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .clusters import Partition
from .correctors import sphere_rule
from .errors import CellOverlap, QuadratureUnderResolved, UnderResolvedBall
from .geometry import HoleSet, NeighborStats
from .gridcore import cg, edge_energy

MODE_FACTOR = {"scalar": 4.0 * math.pi, "stokes": 6.0 * math.pi}


def _factor(mode: str) -> float:
    try:
        return MODE_FACTOR[mode]
    except KeyError:
        raise ValueError(f"mode must be 'scalar' or 'stokes', got {mode!r}") from None


@dataclass(frozen=True, eq=False)
class FluxMeasure:
    """Atoms on spheres ``|x - c| = R`` with constant density ``g``."""

    centers: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    g: np.ndarray
    mode: str = "scalar"

    @property
    def atom_mass(self) -> np.ndarray:
        return _factor(self.mode) * self.Y

    @property
    def total_mass(self) -> float:
        return float(self.atom_mass.sum())

    def __len__(self):
        return self.Y.size


def default_k(eps: float, alpha: float) -> int:
    """Cube multiplier ``max(2, ceil(eps**(-9(alpha-1)/20)))``."""
    return max(2, int(math.ceil(eps ** (-9.0 * (alpha - 1.0) / 20.0) - 1e-12)))


def build_flux_measure(holes: HoleSet, stats: NeighborStats, partition: Partition,
                       mode: str = "scalar") -> FluxMeasure:
    _factor(mode)
    idx = np.flatnonzero(partition.good)
    eps, alpha = holes.eps, holes.alpha
    R = stats.R_eps[idx]
    a = holes.radii[idx]
    Y = eps ** 3 * holes.rho[idx] * R / (R - a)
    # density of eps^(3-alpha) d_r w on |x| = R; 4 pi R^2 g = 4 pi Y
    g = eps ** (3.0 - alpha) * a / (R * (R - a))
    if mode == "stokes":
        g = 1.5 * g
    return FluxMeasure(holes.centers[idx], R, Y, g, mode)


# ---------------------------------------------------------------- covering

def _overlap_1d(a0, a1, b0, b1):
    return np.maximum(0.0, np.minimum(a1, b1) - np.maximum(a0, b0))


def _box_overlap(alo, ahi, blo, bhi):
    return np.prod(_overlap_1d(alo, ahi, blo, bhi), axis=-1)


@dataclass(frozen=True, eq=False)
class Covering:
    """Cubes of side ``k eps`` with the small cells of good holes reassigned.

    Cell ``j`` is the base cube ``origin + L * (m_j + [0, 1]^3)``, ``L = k eps``,
    with the origin at the lower corner of the domain's bounding box, plus
    the attached cubes of the holes whose centers it contains, minus the
    attached cubes of holes assigned elsewhere.  A hole's attached cube is
    the cube inscribed in ``B(eps z, R_eps)``; these are pairwise disjoint
    because the balls are.
    """

    k: int
    eps: float
    origin: np.ndarray
    index: np.ndarray        # (n_cells, 3) integer base-cube indices
    volumes: np.ndarray
    diameters: np.ndarray
    interior: np.ndarray     # bool: cell lies inside the domain
    atom_cell: np.ndarray    # cell of each good hole
    atom_lo: np.ndarray      # attached cube corners
    atom_hi: np.ndarray

    @property
    def side(self) -> float:
        return self.k * self.eps

    def __len__(self):
        return self.volumes.size

    def base_bounds(self, j):
        lo = self.origin + self.side * self.index[j]
        return lo, lo + self.side

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Cell index of each point, or -1 outside every cell."""
        points = np.atleast_2d(points)
        m = np.floor((points - self.origin) / self.side).astype(np.int64)
        lookup = {tuple(v): j for j, v in enumerate(self.index.tolist())}
        out = np.array([lookup.get(tuple(v), -1) for v in m.tolist()], dtype=np.int64)
        if self.atom_cell.size:
            ctr = 0.5 * (self.atom_lo + self.atom_hi)
            half = 0.5 * (self.atom_hi - self.atom_lo)[:, 0]
            d, nb = cKDTree(ctr).query(points)
            inside = np.all(np.abs(points - ctr[nb]) <= half[nb, None], axis=1)
            out[inside] = self.atom_cell[nb[inside]]
        return out


def build_covering(holes: HoleSet, stats: NeighborStats, partition: Partition,
                   k: Optional[int] = None) -> Covering:
    eps = holes.eps
    if k is None:
        k = default_k(eps, holes.alpha)
    if k < 2:
        raise ValueError("cube multiplier must be at least 2")
    L = k * eps
    dlo, dhi = holes.domain.bounds()
    origin = np.asarray(dlo, float)
    m1 = np.ceil((dhi - origin) / L - 1e-9).astype(np.int64) - 1
    grid = np.array(np.meshgrid(*[np.arange(0, b + 1) for b in m1],
                                indexing="ij")).reshape(3, -1).T
    # keep cubes that meet the domain
    corners = np.array([[i, j, l] for i in (0, 1) for j in (0, 1) for l in (0, 1)], float)
    blo = origin + grid * L
    bhi = blo + L
    near = holes.domain.boundary_distance(np.clip(0.5 * (blo + bhi), dlo, dhi)) >= -L
    grid, blo, bhi = grid[near], blo[near], bhi[near]
    lookup = {tuple(v): j for j, v in enumerate(grid.tolist())}
    ncell = len(grid)

    gi = np.flatnonzero(partition.good)
    c = holes.centers[gi]
    half = stats.R_eps[gi] / math.sqrt(3.0)
    alo, ahi = c - half[:, None], c + half[:, None]
    if gi.size > 1:
        pairs = cKDTree(c).query_pairs(2.0 * float(half.max()) * math.sqrt(3.0), output_type="ndarray")
        if len(pairs):
            ov = _box_overlap(alo[pairs[:, 0]], ahi[pairs[:, 0]], alo[pairs[:, 1]], ahi[pairs[:, 1]])
            if np.any(ov > 0):
                raise CellOverlap(f"{int((ov > 0).sum())} attached cells overlap")
    mc = np.floor((c - origin) / L).astype(np.int64)
    atom_cell = np.array([lookup.get(tuple(v), -1) for v in mc.tolist()], dtype=np.int64)
    if np.any(atom_cell < 0):
        raise CellOverlap("a good center falls outside the base grid")

    vol = np.full(ncell, L ** 3)
    vol_in = np.zeros(ncell)
    ext_lo, ext_hi = blo.copy(), bhi.copy()
    for t in range(gi.size):
        own = atom_cell[t]
        s3 = (2.0 * half[t]) ** 3
        lo_m = np.floor((alo[t] - origin) / L).astype(np.int64)
        hi_m = np.floor((ahi[t] - origin) / L).astype(np.int64)
        for v in np.array(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo_m, hi_m)],
                                      indexing="ij")).reshape(3, -1).T:
            j = lookup.get(tuple(v.tolist()))
            if j is None or j == own:
                continue
            ov = float(_box_overlap(alo[t], ahi[t], blo[j], bhi[j]))
            vol[j] -= ov
        inside_own = float(_box_overlap(alo[t], ahi[t], blo[own], bhi[own]))
        vol_in[own] += s3 - inside_own
        ext_lo[own] = np.minimum(ext_lo[own], alo[t])
        ext_hi[own] = np.maximum(ext_hi[own], ahi[t])
    vol = vol + vol_in
    diam = np.linalg.norm(ext_hi - ext_lo, axis=1)
    inside = np.ones(ncell, bool)
    for cn in corners:
        inside &= holes.domain.contains(blo + cn * L)
    return Covering(int(k), eps, origin, grid, vol, diam, inside, atom_cell, alo, ahi)


def step_function(covering: Covering, measure: FluxMeasure) -> np.ndarray:
    """Cell-constant density ``(factor / |K|) sum_{z in K} Y_z``; empty cells give 0."""
    sums = np.zeros(len(covering))
    np.add.at(sums, covering.atom_cell, measure.Y)
    return _factor(measure.mode) * sums / covering.volumes


def l2_step_discrepancy(covering: Covering, values: np.ndarray, target: float,
                        interior_only: bool = True) -> float:
    """``sqrt(sum |K| (value - target)**2)`` over cells (interior ones by default)."""
    keep = covering.interior if interior_only else np.ones(len(covering), bool)
    v = np.asarray(values)[keep]
    return float(math.sqrt(np.sum(covering.volumes[keep] * (v - target) ** 2)))


@dataclass(frozen=True)
class KVBound:
    bound: float
    violations: int

    @property
    def flagged(self) -> bool:
        return self.violations > 0


def kv_bound(measure: FluxMeasure, covering: Covering) -> KVBound:
    """Cube-averaging discrepancy bound ``max diam(K) (sum ||g||^2 / R)**(1/2)``.

    ``||g||^2 = 4 pi R^2 g^2`` for a constant density on a sphere of radius
    ``R``.  Atoms whose doubled ball leaves their base cube or meets another
    atom's cell are counted as containment violations.
    """
    if len(measure) == 0:
        return KVBound(0.0, 0)
    R, g = measure.R, measure.g
    s = float(np.sum(4.0 * math.pi * R ** 2 * g ** 2 / R))
    dmax = float(covering.diameters.max())
    c = measure.centers
    j = covering.atom_cell
    blo = covering.origin + covering.side * covering.index[j]
    bhi = blo + covering.side
    outside = np.any((c - 2 * R[:, None] < blo) | (c + 2 * R[:, None] > bhi), axis=1)
    viol = outside.copy()
    if len(measure) > 1:
        tree = cKDTree(c)
        reach = 2.0 * float(R.max()) + float(R.max())
        for i, lst in enumerate(tree.query_ball_point(c, reach)):
            if viol[i]:
                continue
            for o in lst:
                if o == i:
                    continue
                d = np.linalg.norm(np.maximum(np.maximum(covering.atom_lo[o] - c[i],
                                                         c[i] - covering.atom_hi[o]), 0.0))
                if d < 2.0 * R[i]:
                    viol[i] = True
                    break
    return KVBound(dmax * math.sqrt(s), int(viol.sum()))


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class Bump:
    """Smooth bump ``exp(-1/(1 - |x-c|^2/r^2))`` supported in ``B(c, r)``."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.4

    def __call__(self, x):
        x = np.atleast_2d(x)
        s2 = np.sum((x - np.asarray(self.center)) ** 2, axis=1) / self.radius ** 2
        out = np.zeros(len(x))
        m = s2 < 1.0
        out[m] = np.exp(-1.0 / (1.0 - s2[m]))
        return out

    def integral(self) -> float:
        val, _ = integrate.quad(lambda s: s * s * math.exp(-1.0 / (1.0 - s * s)), 0.0, 1.0,
                                epsabs=1e-14, epsrel=1e-13)
        return 4.0 * math.pi * self.radius ** 3 * val


def pairing(measure: FluxMeasure, phi, order: int = 16, check_order: int = 32,
            rtol: float = 1e-6) -> float:
    """``<mu, phi>``: each atom's mass times the sphere average of ``phi``."""
    if len(measure) == 0:
        return 0.0

    def run(q):
        n, w = sphere_rule(q)
        chunk = max(1, 2_000_000 // len(w))
        total = 0.0
        for s in range(0, len(measure), chunk):
            c = measure.centers[s:s + chunk]
            R = measure.R[s:s + chunk]
            pts = c[:, None, :] + R[:, None, None] * n[None]
            vals = np.asarray(phi(pts.reshape(-1, 3)), float).reshape(len(c), -1)
            total += float(np.sum(measure.atom_mass[s:s + chunk] * (vals @ w))) / (4.0 * math.pi)
        return total

    lo, hi = run(order), run(check_order)
    scale = max(abs(hi), 1e-12 * measure.total_mass, 1e-300)
    if abs(hi - lo) > rtol * scale:
        raise QuadratureUnderResolved(
            f"pairing orders {order}/{check_order} differ by {abs(hi - lo) / scale:.2e}")
    return hi


def pairing_target(law, lam: float, phi_integral: float, mode: str = "scalar") -> float:
    """Limit ``factor * lam * E[rho] * ∫ phi``."""
    return _factor(mode) * lam * law.moment(1.0) * phi_integral


def h_minus_one_numeric(measure: FluxMeasure, covering: Covering, values: np.ndarray,
                        box, h: float, tol: float = 1e-8, order: int = 8) -> float:
    """Grid estimate of ``||mu - m||_{H^-1}`` on a box with zero boundary values.

    Each atom's mass is split over the nodes nearest its sphere quadrature
    points; the step density contributes ``m h^3`` per node.  The discrete
    problem ``-Δφ = density`` is solved and ``sqrt(b^T φ)`` returned, which is
    the discrete Dirichlet energy of ``φ`` to the power one half.
    """
    if len(measure) and float(measure.R.min()) < 3.0 * h:
        raise UnderResolvedBall(f"sphere radius {float(measure.R.min()):g} < 3h = {3 * h:g}")
    lo, hi = (np.asarray(b, float) for b in box)
    n = np.round((hi - lo) / h).astype(int) + 1
    b = np.zeros(tuple(n))
    if len(measure):
        nodes, w = sphere_rule(order)
        pts = measure.centers[:, None, :] + measure.R[:, None, None] * nodes[None]
        mass = measure.atom_mass[:, None] * (w / (4.0 * math.pi))[None]
        ijk = np.clip(np.round((pts.reshape(-1, 3) - lo) / h).astype(int), 0, n - 1)
        np.add.at(b, tuple(ijk.T), mass.ravel())
    axes = [lo[i] + h * np.arange(n[i]) for i in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    cell = covering.locate(X)
    dens = np.where(cell >= 0, np.asarray(values)[np.maximum(cell, 0)], 0.0)
    b -= (dens * h ** 3).reshape(tuple(n))
    free = np.ones(tuple(n), bool)
    free[[0, -1], :, :] = False
    free[:, [0, -1], :] = False
    free[:, :, [0, -1]] = False
    b[~free] = 0.0
    # (h L) phi = b, so phi = x / h with L x = b
    x, _, _ = cg(free, b, tol=tol)
    return float(math.sqrt(max(float(np.vdot(b, x)) / h, 0.0)))
