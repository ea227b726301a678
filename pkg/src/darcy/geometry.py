"""Hole sets, neighbor statistics and coverage of a perforated domain."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateExponent
from .pointprocess import (Domain, ProcessParams, Realization, RadiiLaw,
                           sample_process, substream)


class SpatialHash:
    """Uniform grid hash over ball centers.

    Balls whose radius exceeds the cell size are kept on a separate list and
    tested directly, so queries never miss a heavy-tailed ball.
    """

    def __init__(self, centers: np.ndarray, radii: np.ndarray, cell: float):
        self.centers = np.asarray(centers, float).reshape(-1, 3)
        self.radii = np.asarray(radii, float)
        self.cell = float(cell)
        small = self.radii <= self.cell
        self.large = np.flatnonzero(~small)
        idx = np.flatnonzero(small)
        if idx.size:
            self.origin = self.centers[idx].min(axis=0)
        else:
            self.origin = np.zeros(3)
        cells = self._cell_of(self.centers[idx])
        self.shape = cells.max(axis=0) + 1 if idx.size else np.ones(3, int)
        keys = self._key(cells)
        order = np.argsort(keys, kind="stable")
        self.sorted_idx = idx[order]
        skeys = keys[order]
        self.keys, self.start, self.count = np.unique(skeys, return_index=True,
                                                      return_counts=True)

    def _cell_of(self, x):
        return np.floor((x - self.origin) / self.cell).astype(np.int64)

    def _key(self, cells):
        nx, ny, nz = (int(s) for s in self.shape)
        return (cells[:, 0] * ny + cells[:, 1]) * nz + cells[:, 2]

    def _valid(self, cells):
        return np.all((cells >= 0) & (cells < self.shape), axis=1)

    def candidates(self, points: np.ndarray, reach: int = 1):
        """Pairs ``(point_index, ball_index)`` for small balls in nearby cells.

        Every small ball whose center lies within ``reach`` cells of a point
        is returned; large balls are not included.
        """
        points = np.asarray(points, float).reshape(-1, 3)
        base = self._cell_of(points)
        rng_ = np.arange(-reach, reach + 1)
        offsets = np.array(np.meshgrid(rng_, rng_, rng_, indexing="ij")).reshape(3, -1).T
        pi, bi = [], []
        for off in offsets:
            c = base + off
            ok = self._valid(c)
            if not ok.any():
                continue
            pts = np.flatnonzero(ok)
            keys = self._key(c[ok])
            pos = np.searchsorted(self.keys, keys)
            pos = np.minimum(pos, max(self.keys.size - 1, 0))
            hit = self.keys.size > 0
            if not hit:
                continue
            found = self.keys[pos] == keys
            pts, pos = pts[found], pos[found]
            cnt = self.count[pos]
            total = int(cnt.sum())
            if total == 0:
                continue
            rep_pts = np.repeat(pts, cnt)
            first = np.repeat(self.start[pos], cnt)
            within = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            pi.append(rep_pts)
            bi.append(self.sorted_idx[first + within])
        if not pi:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(pi), np.concatenate(bi)

    def query_box(self, lo, hi) -> np.ndarray:
        """Indices of balls that intersect the closed box ``[lo, hi]``."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        c0 = self._cell_of(lo[None])[0] - 1
        c1 = self._cell_of(hi[None])[0] + 1
        c0 = np.maximum(c0, 0)
        c1 = np.minimum(c1, self.shape - 1)
        found = []
        if np.all(c1 >= c0) and self.keys.size:
            g = np.array(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(c0, c1)],
                                     indexing="ij")).reshape(3, -1).T
            keys = self._key(g)
            pos = np.searchsorted(self.keys, keys)
            pos = np.minimum(pos, self.keys.size - 1)
            for p in pos[self.keys[pos] == keys]:
                found.append(self.sorted_idx[self.start[p]:self.start[p] + self.count[p]])
        found.append(self.large)
        cand = np.unique(np.concatenate(found)) if found else np.empty(0, np.int64)
        d = box_distance(self.centers[cand], lo, hi)
        return cand[d <= self.radii[cand]]

    def inside_any(self, points: np.ndarray) -> np.ndarray:
        """Whether each point lies in at least one closed ball."""
        points = np.asarray(points, float).reshape(-1, 3)
        out = np.zeros(len(points), bool)
        pi, bi = self.candidates(points)
        if pi.size:
            d2 = np.sum((points[pi] - self.centers[bi]) ** 2, axis=1)
            out[pi[d2 <= self.radii[bi] ** 2]] = True
        for j in self.large:
            d2 = np.sum((points - self.centers[j]) ** 2, axis=1)
            out |= d2 <= self.radii[j] ** 2
        return out


def box_distance(x: np.ndarray, lo, hi) -> np.ndarray:
    """Euclidean distance from points to a box (zero inside)."""
    x = np.atleast_2d(x)
    d = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return np.linalg.norm(d, axis=1)


def intersecting_pairs(centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """All index pairs ``i < j`` of closed balls that intersect.

    Small balls go through a KD-tree pair search at twice the small-radius
    cutoff; the few large ones are compared against everything directly.
    """
    centers = np.asarray(centers, float).reshape(-1, 3)
    radii = np.asarray(radii, float)
    n = radii.size
    if n < 2:
        return np.empty((0, 2), np.int64)
    cut = max(4.0 * float(np.median(radii)), 1e-300)
    small = np.flatnonzero(radii <= cut)
    large = np.flatnonzero(radii > cut)
    pairs = []
    if small.size > 1:
        tree = cKDTree(centers[small])
        p = tree.query_pairs(2.0 * cut, output_type="ndarray")
        if p.size:
            i, j = small[p[:, 0]], small[p[:, 1]]
            d = np.linalg.norm(centers[i] - centers[j], axis=1)
            keep = d <= radii[i] + radii[j]
            pairs.append(np.stack([i[keep], j[keep]], axis=1))
    for a in large:
        d = np.linalg.norm(centers - centers[a], axis=1)
        hit = np.flatnonzero(d <= radii + radii[a])
        hit = hit[hit != a]
        # large-large pairs appear twice; keep only the a < b copy
        hit = hit[(radii[hit] <= cut) | (hit > a)]
        pairs.append(np.stack([np.minimum(hit, a), np.maximum(hit, a)], axis=1))
    if not pairs:
        return np.empty((0, 2), np.int64)
    out = np.concatenate(pairs).astype(np.int64)
    return np.unique(out, axis=0)


@dataclass(frozen=True, eq=False)
class HoleSet:
    """Holes ``B(eps z, eps**alpha rho)`` from one realization."""

    eps: float
    alpha: float
    z: np.ndarray
    rho: np.ndarray
    domain: Domain
    lam: float = 1.0

    @property
    def centers(self) -> np.ndarray:
        return self.eps * self.z

    @property
    def radii(self) -> np.ndarray:
        return self.eps ** self.alpha * self.rho

    def __len__(self):
        return self.rho.size

    def index(self) -> SpatialHash:
        if not hasattr(self, "_index"):
            object.__setattr__(self, "_index", SpatialHash(self.centers, self.radii, self.eps))
        return self._index

    def subset(self, mask) -> "HoleSet":
        return HoleSet(self.eps, self.alpha, np.array(self.z[mask]),
                       np.array(self.rho[mask]), self.domain, self.lam)


def build_holes(real: Realization) -> HoleSet:
    p = real.params
    return HoleSet(p.eps, p.alpha, np.array(real.z), np.array(real.rho), p.domain, p.lam)


def volume_fraction(holes: HoleSet, n_samples: int = 100_000, seed: int = 0):
    """Monte Carlo estimate of ``|H ∩ D| / |D|`` with its standard error."""
    rng = substream(seed, 7)
    pts = holes.domain.sample(rng, n_samples)
    hit = holes.index().inside_any(pts)
    p = float(hit.mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / n_samples)


@dataclass(frozen=True, eq=False)
class NeighborStats:
    """Blown-up half nearest-neighbor distance ``d`` and ``R = min(d, 1/2)``."""

    d: np.ndarray
    R: np.ndarray
    eps: float

    @property
    def R_eps(self) -> np.ndarray:
        return self.eps * self.R


def neighbor_stats(holes: HoleSet) -> NeighborStats:
    n = len(holes)
    if n < 2:
        d = np.full(n, np.inf)
    else:
        dist, _ = cKDTree(holes.z).query(holes.z, k=2)
        d = 0.5 * dist[:, 1]
    return NeighborStats(d, np.minimum(d, 0.5), holes.eps)


def sphere_directions(n: int) -> np.ndarray:
    """Direction set: the 26 lattice-stencil directions, then a Fibonacci fill."""
    g = np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij")).reshape(3, -1).T
    g = g[np.any(g != 0, axis=1)].astype(float)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if n <= 26:
        return g[:n]
    m = n - 26
    k = np.arange(m) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    zc = 1.0 - 2.0 * k / m
    s = np.sqrt(1.0 - zc ** 2)
    fib = np.stack([s * np.cos(phi), s * np.sin(phi), zc], axis=1)
    return np.vstack([g, fib])


def _ray_exit(z, u, lo, hi):
    """Distance from ``z`` (inside the box) to its boundary along ``u``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(u > 0, (hi - z) / u, np.inf)
        t_lo = np.where(u < 0, (lo - z) / u, np.inf)
    return np.min(np.minimum(t_hi, t_lo), axis=-1)


def voronoi_diameter_proxy(holes: HoleSet, n_directions: int = 64,
                           n_neighbors: int = 32) -> np.ndarray:
    """Largest chord through ``z`` of its Voronoi cell, in blown-up units.

    Along each direction ``u`` the cell extends to
    ``min_y |y - z|**2 / (2 u.(y - z))`` over neighbors ahead of ``z``; the
    chord is the sum of the reaches along ``u`` and ``-u``.  Cells are clipped
    to the bounding box of ``(1/eps) D``.
    """
    z = holes.z
    n = len(z)
    if n == 0:
        return np.empty(0)
    dirs = sphere_directions(n_directions)
    lo, hi = (b / holes.eps for b in holes.domain.bounds())
    k = min(n_neighbors + 1, n)
    if k > 1:
        _, nb = cKDTree(z).query(z, k=k)
        nb = nb[:, 1:]
        diff = z[nb] - z[:, None, :]           # (n, k-1, 3)
        d2 = np.sum(diff ** 2, axis=2)
    best = np.zeros(n)
    for u in dirs:
        reach = []
        for s in (1.0, -1.0):
            t = _ray_exit(z, s * u[None, :], lo, hi)
            if k > 1:
                proj = s * diff @ u
                with np.errstate(divide="ignore", invalid="ignore"):
                    tt = np.where(proj > 0, d2 / (2.0 * proj), np.inf)
                t = np.minimum(t, tt.min(axis=1))
            reach.append(t)
        best = np.maximum(best, reach[0] + reach[1])
    return best


def poincare_constants(holes: HoleSet, rhat: np.ndarray, p: float) -> float:
    """Poincaré constant ``C(p)`` of the perforated domain.

    For ``1 <= p < 2``:
    ``C**p = (eps**3 sum rhat**(6/(2-p)))**((2-p)/2)``;
    for ``p = 2``: ``C**2 = min(eps**3 sum exp(rhat**2), 1)``.
    """
    if not (1.0 <= p <= 2.0):
        raise DegenerateExponent(f"p={p} outside [1, 2]")
    e3 = holes.eps ** 3
    rhat = np.asarray(rhat, float)
    if p < 2.0:
        cp = (e3 * np.sum(rhat ** (6.0 / (2.0 - p)))) ** ((2.0 - p) / 2.0)
        return float(cp ** (1.0 / p))
    with np.errstate(over="ignore"):
        c2 = min(e3 * float(np.sum(np.exp(rhat ** 2))), 1.0)
    return math.sqrt(c2)


def is_covered(holes: HoleSet) -> bool:
    """True when a single hole contains the whole domain."""
    if len(holes) == 0:
        return False
    far = holes.domain.farthest_distance(holes.centers)
    return bool(np.any(far <= holes.radii))


def coverage_probability(law: RadiiLaw, alpha: float, lam: float, eps: float,
                         domain: Domain, order: int = 48) -> float:
    """Probability that one hole swallows the domain.

    The covering centers form a thinned Poisson process with mean
    ``lam eps**-3 ∫_D P(rho >= F(x) eps**-alpha) dx``, ``F`` the farthest
    distance from ``x`` to the domain.  The integral uses a tensor
    Gauss-Legendre rule on the bounding box.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    lo, hi = domain.bounds()
    axes = [0.5 * (hi[i] - lo[i]) * (t + 1) + lo[i] for i in range(3)]
    wts = [0.5 * (hi[i] - lo[i]) * w for i in range(3)]
    X = np.array(np.meshgrid(*axes, indexing="ij")).reshape(3, -1).T
    W = np.einsum("i,j,k->ijk", *wts).ravel()
    inside = domain.contains(X)
    F = domain.farthest_distance(X)
    S = np.asarray(law.survival(F * eps ** -alpha), float)
    mu = lam * eps ** -3 * float(np.sum(W * S * inside))
    return 1.0 - math.exp(-mu)


def coverage_sweep(law: RadiiLaw, alpha: float, lam: float, domain: Domain,
                   j_list, n_seeds: int, seed: int = 0) -> list[dict]:
    """Covered counts at ``eps_j = 2**-j`` over ``n_seeds`` realizations."""
    rows = []
    for j in j_list:
        eps = 2.0 ** -j
        hits = 0
        for s in range(n_seeds):
            sub = int(np.random.SeedSequence(seed, spawn_key=(int(j), s)).generate_state(1)[0])
            real = sample_process(ProcessParams(lam, eps, alpha, domain, law, sub))
            hits += is_covered(build_holes(real))
        rows.append({"j": int(j), "eps_j": eps, "n_seeds": n_seeds, "covered_count": hits})
    return rows
