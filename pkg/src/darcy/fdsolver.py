"""Finite-difference Poisson solves on perforated domains.

``-Δu = f`` in ``D`` minus the holes, ``u = 0`` on the holes and on ``∂D``,
discretized with the 7-point Laplacian on a uniform node grid.  Nodes inside
any hole are fixed (first-order rasterization).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DarcyError, SolverDiverged, UnderResolvedHole
from .geometry import HoleSet
from .gridcore import cg, edge_energy

INTERIOR, HOLE, BOUNDARY = 0, 1, 2


@dataclass(frozen=True, eq=False)
class MaskedGrid:
    lo: np.ndarray
    hi: np.ndarray
    h: float
    state: np.ndarray  # int8 per node: INTERIOR, HOLE or BOUNDARY

    @property
    def dims(self) -> tuple:
        return self.state.shape

    @property
    def free(self) -> np.ndarray:
        return self.state == INTERIOR

    @property
    def n_unknowns(self) -> int:
        return int(np.count_nonzero(self.state == INTERIOR))

    @property
    def hole_fraction(self) -> float:
        inside = self.state != BOUNDARY
        return float(np.count_nonzero(self.state == HOLE) / max(np.count_nonzero(inside), 1))

    def unknown_index(self) -> np.ndarray:
        """Linear unknown index per node (row-major), ``-1`` on fixed nodes."""
        f = self.free.ravel()
        idx = np.full(f.size, -1, dtype=np.int64)
        idx[f] = np.arange(int(f.sum()))
        return idx.reshape(self.dims)

    def axes(self) -> list:
        return [self.lo[i] + self.h * np.arange(self.dims[i]) for i in range(3)]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1).reshape(-1, 3)


def _grid_shape(lo, hi, h):
    return tuple(int(v) for v in np.round((hi - lo) / h).astype(int) + 1)


def rasterize(holes: Optional[HoleSet], box, h: float, domain=None) -> MaskedGrid:
    """Classify grid nodes on ``box`` as interior, hole or boundary.

    Box faces and nodes outside ``domain`` (the hole set's domain by default)
    are boundary; remaining nodes inside a closed ball are holes.
    """
    lo, hi = (np.asarray(b, float) for b in box)
    shape = _grid_shape(lo, hi, h)
    state = np.zeros(shape, np.int8)
    if domain is None and holes is not None:
        domain = holes.domain
    if holes is not None and len(holes):
        axes = [lo[i] + h * np.arange(shape[i]) for i in range(3)]
        c, r = holes.centers, holes.radii
        touch = np.all((c + r[:, None] >= lo) & (c - r[:, None] <= hi), axis=1)
        if touch.any():
            j = int(np.flatnonzero(touch)[np.argmin(r[touch])])
            if r[j] < 3.0 * h:
                raise UnderResolvedHole(
                    f"hole {j} at {c[j].tolist()} has radius {r[j]:.4g} < 3h = {3 * h:.4g}")
        for j in np.flatnonzero(touch):
            i0 = np.maximum(np.ceil((c[j] - r[j] - lo) / h).astype(int), 0)
            i1 = np.minimum(np.floor((c[j] + r[j] - lo) / h).astype(int), np.array(shape) - 1)
            if np.any(i1 < i0):
                continue
            sl = tuple(slice(a, b + 1) for a, b in zip(i0, i1))
            x, y, z = (axes[d][sl[d]] - c[j][d] for d in range(3))
            ball = (x[:, None, None] ** 2 + y[None, :, None] ** 2 + z[None, None, :] ** 2
                    <= r[j] ** 2)
            state[sl][ball] = HOLE
    if domain is not None:
        axes = [lo[i] + h * np.arange(shape[i]) for i in range(3)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        state[~domain.contains(pts).reshape(shape)] = BOUNDARY
    state[[0, -1], :, :] = BOUNDARY
    state[:, [0, -1], :] = BOUNDARY
    state[:, :, [0, -1]] = BOUNDARY
    return MaskedGrid(lo, hi, float(h), state)


@dataclass(frozen=True, eq=False)
class Solution:
    u: np.ndarray
    grid: MaskedGrid
    iterations: int
    residual: float

    @property
    def energy(self) -> float:
        """``sum h**3 |∇_h u|**2 = h * sum_edges (Δu)**2``."""
        return self.grid.h * edge_energy(self.u)


def _source(grid: MaskedGrid, f) -> np.ndarray:
    if callable(f):
        return np.asarray(f(grid.points()), float).reshape(grid.dims)
    return np.broadcast_to(np.asarray(f, float), grid.dims)


def solve_poisson(grid: MaskedGrid, f=1.0, tol: float = 1e-8,
                  maxiter: Optional[int] = None) -> Solution:
    """Solve ``-Δ_h u = f`` with zero values on hole and boundary nodes."""
    fv = _source(grid, f)
    rhs = np.where(grid.free, grid.h ** 2 * fv, 0.0)
    if maxiter is None:
        maxiter = max(1, int(20 * math.sqrt(max(grid.n_unknowns, 1))))
    u, it, res = cg(grid.free, rhs, tol=tol, maxiter=maxiter)
    if np.all(fv >= 0):
        umax = float(u.max()) if u.size else 0.0
        # CG stops at tol, so allow a correspondingly small undershoot
        if float(u.min()) < -10.0 * tol * max(umax, 1e-300):
            raise SolverDiverged(f"maximum principle violated: min u = {float(u.min()):.3e}")
    return Solution(u, grid, it, res)


def core_mask(grid: MaskedGrid, domain, margin: float = 0.1) -> np.ndarray:
    """Nodes farther than ``margin * diam(D)`` from ``∂D``."""
    d = domain.boundary_distance(grid.points()).reshape(grid.dims)
    return d > margin * domain.diameter


@dataclass(frozen=True)
class DarcyReport:
    eps: float
    alpha: float
    h: float
    p: float
    lp_error: float
    energy_norm: float
    core_mean: float
    k: float
    poincare_ratio: float
    iterations: int = 0
    residual: float = 0.0
    hole_fraction: float = 0.0


def darcy_constant(law, lam: float) -> float:
    return 1.0 / (4.0 * math.pi * lam * law.moment(1.0))


def darcy_error(sol: Solution, eps: float, alpha: float, f, law, lam: float,
                domain, p: float = 1.0, margin: float = 0.1) -> DarcyReport:
    """``||sigma**2 u - k f||_{L^p(core)}`` with ``sigma = eps**(-(3-alpha)/2)``.

    All core nodes count, including hole nodes where ``u = 0``.
    """
    grid = sol.grid
    sigma2 = eps ** -(3.0 - alpha)
    k = darcy_constant(law, lam)
    core = core_mask(grid, domain, margin)
    fv = _source(grid, f)
    diff = sigma2 * sol.u[core] - k * fv[core]
    h3 = grid.h ** 3
    lp = float((h3 * np.sum(np.abs(diff) ** p)) ** (1.0 / p))
    energy = sol.energy
    enorm = math.sqrt(sigma2 * energy)
    l2 = math.sqrt(h3 * float(np.sum(sol.u ** 2)))
    scale = eps ** ((3.0 - alpha) / 2.0) * (1.0 + abs(math.log(eps)) ** 1.5) * math.sqrt(energy)
    ratio = l2 / scale if scale > 0 else 0.0
    return DarcyReport(eps, alpha, grid.h, p, lp, enorm, float(np.mean(sigma2 * sol.u[core])),
                       k, ratio, sol.iterations, sol.residual, grid.hole_fraction)


def energy_identity_gap(sol: Solution, f=1.0) -> float:
    """Relative gap between ``sum h^3 f u`` and the discrete energy."""
    fv = _source(sol.grid, f)
    lhs = sol.grid.h ** 3 * float(np.sum(np.where(sol.grid.free, fv, 0.0) * sol.u))
    e = sol.energy
    return abs(lhs - e) / max(abs(e), 1e-300)


def box_center_value(n_terms: int = 4001) -> float:
    """Center value of ``-Δu = 1`` on the unit cube with zero boundary values.

    Uses the expansion in ``sin(l pi y) sin(m pi z)`` with the exact 1-D
    profile in ``x``, which converges fast enough for 1e-8 accuracy.
    """
    l = np.arange(1, n_terms + 1, 2, dtype=float)
    L, M = np.meshgrid(l, l, indexing="ij")
    kk = math.pi * np.sqrt(L ** 2 + M ** 2)
    sign = (-1.0) ** ((L - 1) / 2 + (M - 1) / 2)
    e = np.exp(-kk / 2.0)
    prof = (1.0 - 2.0 * e / (1.0 + e * e)) / kk ** 2
    return float(np.sum(16.0 / (math.pi ** 2 * L * M) * sign * prof))


def dump_field(sol: Solution, path) -> None:
    """Raw float64 field (row-major node order) plus a JSON text sidecar."""
    path = Path(path)
    np.ascontiguousarray(sol.u, dtype="<f8").tofile(path)
    meta = {"dims": list(sol.grid.dims), "h": sol.grid.h,
            "box": [sol.grid.lo.tolist(), sol.grid.hi.tolist()], "dtype": "float64-le"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1) + "\n")


def load_field(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return np.fromfile(path, dtype="<f8").reshape(meta["dims"])


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)


def convergence_sweep(entries, solve: Callable) -> ConvergenceReport:
    """Run ``solve(entry) -> DarcyReport`` for each entry and judge the trends.

    Failing entries are recorded and the sweep continues.  Verdicts: the mean
    error decreases as eps decreases, and the energy norms stay within a
    factor 3 of each other across eps.
    """
    rep = ConvergenceReport()
    for e in entries:
        try:
            rep.rows.append(solve(e))
        except DarcyError as exc:
            rep.failures.append({"entry": e, "error": type(exc).__name__, "message": str(exc)})
    if not rep.rows:
        rep.verdicts = {"error_trend": "insufficient data", "energy_bounded": "insufficient data"}
        return rep
    eps_vals = sorted({r.eps for r in rep.rows}, reverse=True)
    err = [np.mean([r.lp_error for r in rep.rows if r.eps == e]) for e in eps_vals]
    en = [np.mean([r.energy_norm for r in rep.rows if r.eps == e]) for e in eps_vals]
    if len(eps_vals) < 2:
        rep.verdicts = {"error_trend": "insufficient data", "energy_bounded": "insufficient data"}
    else:
        dec = all(b < a for a, b in zip(err, err[1:]))
        rep.verdicts = {"error_trend": "pass" if dec else "fail",
                        "energy_bounded": "pass" if max(en) / min(en) < 3.0 else "fail"}
    return rep
