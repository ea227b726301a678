"""Size classes, chains of overlapping holes and the good/bad partition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .errors import HierarchyInfeasible, InadmissibleLaw
from .geometry import HoleSet, NeighborStats, intersecting_pairs


# ---------------------------------------------------------------- union-find

class UnionFind:
    """Disjoint sets with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, i: int) -> int:
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return int(i)

    def union(self, i: int, j: int) -> int:
        a, b = self.find(i), self.find(j)
        if a == b:
            return a
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a

    def labels(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(self.parent.size)])


def component_labels(n: int, edges: np.ndarray) -> np.ndarray:
    """Connected-component labels (smallest member index) of an edge list.

    Vectorized hooking with pointer jumping; equivalent to running the
    union-find above over every edge.
    """
    lab = np.arange(n)
    if len(edges) == 0:
        return lab
    i, j = edges[:, 0], edges[:, 1]
    while True:
        li, lj = lab[i], lab[j]
        lo = np.minimum(li, lj)
        new = lab.copy()
        np.minimum.at(new, li, lo)
        np.minimum.at(new, lj, lo)
        while True:
            jumped = new[new]
            if np.array_equal(jumped, new):
                break
            new = jumped
        if np.array_equal(new, lab):
            return lab
        lab = new


def greedy_clique(members: np.ndarray, adj: dict) -> list:
    """Lower bound on the largest clique inside one component.

    Each member seeds a greedy pass that adds neighbors in order of degree.
    """
    best: list = []
    deg = {m: len(adj.get(m, ())) for m in members}
    order = sorted(members, key=lambda m: (-deg[m], m))
    for seed in order:
        if deg[seed] + 1 <= len(best):
            break
        clique = [seed]
        cand = set(adj.get(seed, ()))
        for v in sorted(cand, key=lambda m: (-deg[m], m)):
            if v in cand and all(v in adj[c] for c in clique):
                clique.append(v)
        if len(clique) > len(best):
            best = clique
    return best


# ---------------------------------------------------------------- size classes

@dataclass(frozen=True, eq=False)
class SizeClasses:
    """Class index per hole, from ``-3`` up to ``k_max``."""

    kappa: float
    k_max: int
    thresholds: np.ndarray  # eps**(1 - k kappa), k = -2..k_max
    labels: np.ndarray

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    @property
    def classes(self) -> range:
        return range(-3, self.k_max + 1)


def size_classes(holes: HoleSet, kappa: float) -> SizeClasses:
    """Bucket holes by radius.

    Class ``k`` holds radii in ``[eps**(1-k kappa), eps**(1-(k+1) kappa))``,
    class ``-3`` everything below ``eps**(1+2 kappa)`` and class ``k_max``
    everything from ``eps**(1-k_max kappa)`` up.  A radius equal to a
    threshold belongs to the class whose lower endpoint it is.
    """
    if not (0.0 < kappa < 1.0):
        raise ValueError("kappa must lie in (0, 1)")
    k_max = int(math.floor(1.0 / kappa)) + 1
    ks = np.arange(-2, k_max + 1)
    thr = holes.eps ** (1.0 - ks * kappa)
    lab = np.searchsorted(thr, holes.radii, side="right") - 3
    return SizeClasses(kappa, k_max, thr, lab.astype(np.int64))


@dataclass(frozen=True)
class ChainParameters:
    alpha: float
    beta: float
    kappa: float
    k_max: int
    k0: int
    M: int
    k0_floor: int

    @property
    def exponent(self) -> float:
        """Theoretical decay exponent of the chain probability."""
        return self.alpha * self.beta / 2.0

    @property
    def top_pairs(self) -> range:
        return range(self.k0, self.k_max + 1)

    @property
    def lower_pairs(self) -> range:
        return range(-3, self.k0)


def kappa_bound(alpha: float, beta: float) -> float:
    return min(beta / 6.0, alpha ** 2 * beta / (6.0 + 2.0 * alpha * beta))


def chain_exponent(alpha: float, beta: float, kappa: float, k: int, M: int) -> float:
    """Exponent ``e`` in ``P(chain of length >= M in I_k ∪ I_{k+1}) <~ eps**e``."""
    ab = alpha * beta
    return ab + (k * kappa - 1.0) * (3.0 / alpha + beta) + (M - 1) * ab


def chain_parameters(alpha: float, beta: float, kappa: Optional[float] = None) -> ChainParameters:
    """Top class ``k0`` and chain-length threshold ``M`` for given exponents.

    ``k0`` is the smallest class whose nonempty-pair probability carries the
    exponent ``alpha beta / 2``, i.e. ``k0 kappa >= 1 - a^2 b/(6 + 2ab)``.
    ``M`` is the smallest integer giving that exponent to chains of length
    ``M`` in every lower pair.  ``k0_floor = floor(a^2 b / ((6 + 2ab) kappa))``
    is kept for comparison only; it does not satisfy the exponent condition.
    ``kappa`` defaults to half its admissible bound.
    """
    bound = kappa_bound(alpha, beta)
    if kappa is None:
        kappa = 0.5 * bound
    if not (0.0 < kappa < bound):
        raise ValueError(f"kappa={kappa} must lie in (0, {bound:.6g})")
    k_max = int(math.floor(1.0 / kappa)) + 1
    c = alpha ** 2 * beta / (6.0 + 2.0 * alpha * beta)
    k0 = int(math.ceil((1.0 - c) / kappa - 1e-12))
    k0_floor = int(math.floor(c / kappa))
    target = alpha * beta / 2.0
    M = 1
    while any(chain_exponent(alpha, beta, kappa, k, M) < target - 1e-12 for k in range(-3, k0)):
        M += 1
    return ChainParameters(alpha, beta, kappa, k_max, k0, M, k0_floor)


# ---------------------------------------------------------------- chains

@dataclass(frozen=True)
class PairChains:
    class_k: int
    n_members: int
    max_component: int
    greedy_clique: int
    components: tuple = ()


def detect_chains(classes: SizeClasses, holes: HoleSet, dilation: float = 4.0,
                  keep_components: bool = False, pairs=None) -> list[PairChains]:
    """Chains inside each consecutive class pair ``I_k ∪ I_{k+1}``.

    Two holes are linked when their ``dilation``-fold balls intersect.
    Reports the largest connected component and a greedy clique (a set of
    pairwise-linked holes) per pair.  ``pairs`` restricts the lower class
    indices ``k`` examined (all pairs by default).
    """
    lab = classes.labels
    ks = range(-3, classes.k_max + 1) if pairs is None else pairs
    lowest = min(ks, default=classes.k_max)
    pool = np.flatnonzero(lab >= lowest)
    edges = intersecting_pairs(holes.centers[pool], dilation * holes.radii[pool])
    edges = pool[edges] if len(edges) else np.empty((0, 2), np.int64)
    ci, cj = lab[edges[:, 0]], lab[edges[:, 1]]
    local = np.full(len(lab), -1, dtype=np.int64)
    out = []
    for k in ks:
        nodes = np.flatnonzero((lab == k) | (lab == k + 1))
        if nodes.size == 0:
            out.append(PairChains(k, 0, 0, 0))
            continue
        sel = np.isin(ci, (k, k + 1)) & np.isin(cj, (k, k + 1))
        local[nodes] = np.arange(nodes.size)
        le = local[edges[sel]].reshape(-1, 2)
        comp = component_labels(nodes.size, le)
        _, inv, sizes = np.unique(comp, return_inverse=True, return_counts=True)
        max_comp = int(sizes.max())
        adj: dict = {}
        for a, b in le:
            adj.setdefault(int(a), set()).add(int(b))
            adj.setdefault(int(b), set()).add(int(a))
        clique = 1
        comps = []
        for c in np.flatnonzero(sizes > 1):
            mem = np.flatnonzero(inv == c)
            if sizes[c] > clique:
                clique = max(clique, len(greedy_clique(mem, adj)))
            if keep_components:
                comps.append(tuple(int(nodes[m]) for m in mem))
        out.append(PairChains(k, int(nodes.size), max_comp, clique, tuple(comps)))
    return out


def brute_force_chains(centers, radii, dilation: float = 4.0):
    """Largest component and exact maximum clique by exhaustive search.

    Meant for small instances only.
    """
    from itertools import combinations

    c = np.asarray(centers, float)
    r = dilation * np.asarray(radii, float)
    n = len(r)
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    A = d <= r[:, None] + r[None]
    np.fill_diagonal(A, False)
    seen = np.zeros(n, bool)
    max_comp = 0
    for s in range(n):
        if seen[s]:
            continue
        stack, size = [s], 0
        seen[s] = True
        while stack:
            v = stack.pop()
            size += 1
            for w in np.flatnonzero(A[v] & ~seen):
                seen[w] = True
                stack.append(w)
        max_comp = max(max_comp, size)
    best = 1 if n else 0
    for m in range(2, n + 1):
        if any(all(A[a, b] for a, b in combinations(S, 2)) for S in combinations(range(n), m)):
            best = m
        else:
            break
    return max_comp, best


def chain_probability_sweep(law, alpha: float, lam: float, domain, eps_list,
                            n_seeds: int, M: int, kappa: float, pairs=None,
                            beta: Optional[float] = None, seed: int = 0,
                            dilation: float = 4.0) -> list[dict]:
    """Monte Carlo frequency of a chain of at least ``M`` holes per class pair.

    A chain is a set of holes whose dilated balls pairwise intersect; its
    presence is detected through the greedy clique, so frequencies are lower
    bounds on the true ones.  Rows carry Wilson intervals and the theoretical
    decay exponent ``alpha beta / 2``.
    """
    from .geometry import build_holes
    from .pointprocess import ProcessParams, check_admissibility, derive_seed, sample_process
    from .stats import wilson_interval

    if beta is not None:
        v = check_admissibility(law, alpha, require_beta=True, probe_beta=beta)
        if v.kind != "AdmissibleStokes":
            raise InadmissibleLaw(f"E[rho^(3/alpha + {beta})] diverges for {law}")
    rows = []
    for ie, eps in enumerate(eps_list):
        hits: dict = {}
        comp: dict = {}
        clq: dict = {}
        k_max = int(math.floor(1.0 / kappa)) + 1
        ks = list(range(-3, k_max + 1)) if pairs is None else list(pairs)
        any_hit = 0
        for s in range(n_seeds):
            p = ProcessParams(lam, eps, alpha, domain, law, derive_seed(seed, ie, s))
            holes = build_holes(sample_process(p))
            rep = detect_chains(size_classes(holes, kappa), holes, dilation, pairs=ks)
            hit_any = False
            for pc in rep:
                h = pc.greedy_clique >= M
                hits[pc.class_k] = hits.get(pc.class_k, 0) + h
                comp[pc.class_k] = max(comp.get(pc.class_k, 0), pc.max_component)
                clq[pc.class_k] = max(clq.get(pc.class_k, 0), pc.greedy_clique)
                hit_any |= h
            any_hit += hit_any
        for k in ks:
            lo, hi = wilson_interval(hits[k], n_seeds)
            rows.append({"eps": float(eps), "kappa": float(kappa), "class_k": int(k),
                         "max_component": comp[k], "greedy_clique": clq[k],
                         "n_seeds_hit": hits[k], "n_seeds": n_seeds,
                         "frequency": hits[k] / n_seeds, "wilson_lo": lo, "wilson_hi": hi})
        lo, hi = wilson_interval(any_hit, n_seeds)
        rows.append({"eps": float(eps), "kappa": float(kappa), "class_k": "any",
                     "max_component": max(comp.values(), default=0),
                     "greedy_clique": max(clq.values(), default=0),
                     "n_seeds_hit": any_hit, "n_seeds": n_seeds,
                     "frequency": any_hit / n_seeds, "wilson_lo": lo, "wilson_hi": hi,
                     "exponent": alpha * beta / 2.0 if beta is not None else float("nan")})
    return rows


# ---------------------------------------------------------------- partition

@dataclass(frozen=True, eq=False)
class Partition:
    eps: float
    gamma: float
    theta_b: float
    good: np.ndarray       # boolean mask
    safety_radii: np.ndarray  # radius of the safety ball around each bad hole
    violations_fixed: int
    cap_bound: float
    vanish_stat: float

    @property
    def bad(self) -> np.ndarray:
        return ~self.good


def default_gamma(alpha: float) -> float:
    return 20.0 / 21.0 * (alpha - 1.0)


def good_bad_partition(holes: HoleSet, stats: NeighborStats, gamma: Optional[float] = None,
                       theta_b: float = 2.0, clip: Optional[float] = None,
                       max_rounds: int = 100) -> Partition:
    """Split holes into well-separated small ones and the rest.

    A hole is good when ``R_eps >= eps**(1+gamma/2)`` and its radius is at
    most ``eps**(1+gamma)``.  Bad holes get safety balls of radius
    ``theta_b * a`` (optionally clipped at ``clip`` but never below ``a``).
    Good holes whose half-neighborhood ``B(eps z, R_eps/2)`` touches a
    safety ball are demoted, repeating until nothing changes.
    """
    eps = holes.eps
    if gamma is None:
        gamma = default_gamma(holes.alpha)
    a = holes.radii
    Reps = stats.R_eps
    good = (Reps >= eps ** (1.0 + gamma / 2.0)) & (a <= eps ** (1.0 + gamma))
    safety = theta_b * a
    if clip is not None:
        safety = np.maximum(a, np.minimum(safety, clip))
    c = holes.centers
    fixed = 0
    for _ in range(max_rounds):
        gi = np.flatnonzero(good)
        bi = np.flatnonzero(~good)
        if gi.size == 0 or bi.size == 0:
            break
        viol = np.zeros(gi.size, bool)
        sr = safety[bi]
        cut = float(np.median(sr)) * 4.0
        small = sr <= cut
        reach = 0.5 * float(Reps[gi].max()) + cut
        tree = cKDTree(c[bi[small]]) if small.any() else None
        if tree is not None:
            lists = tree.query_ball_point(c[gi], reach)
            sb = bi[small]
            for t, lst in enumerate(lists):
                if lst:
                    idx = sb[lst]
                    d = np.linalg.norm(c[idx] - c[gi[t]], axis=1)
                    viol[t] = np.any(d < 0.5 * Reps[gi[t]] + safety[idx])
        for b in bi[~small]:
            d = np.linalg.norm(c[gi] - c[b], axis=1)
            viol |= d < 0.5 * Reps[gi] + safety[b]
        if not viol.any():
            break
        fixed += int(viol.sum())
        good[gi[viol]] = False
    bad = ~good
    cap_bound = float(eps ** holes.alpha * holes.rho[bad].sum())
    vanish = float(eps ** 3 * np.sum(holes.rho[bad] ** (3.0 / holes.alpha)))
    return Partition(eps, gamma, theta_b, good, safety, fixed, cap_bound, vanish)


def partition_violations(holes: HoleSet, stats: NeighborStats, part: Partition) -> int:
    """Good holes whose half-neighborhood meets a safety ball (brute force)."""
    c = holes.centers
    gi = np.flatnonzero(part.good)
    bi = np.flatnonzero(part.bad)
    if gi.size == 0 or bi.size == 0:
        return 0
    d = np.linalg.norm(c[gi][:, None] - c[bi][None], axis=2)
    lim = 0.5 * stats.R_eps[gi][:, None] + part.safety_radii[bi][None]
    return int(np.any(d < lim, axis=1).sum())


# ---------------------------------------------------------------- hierarchy

def enclosing_ball(centers: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest ball containing a set of balls.

    Closed form for one or two balls; otherwise a constrained minimization
    from the centroid, with the radius then raised to the exact enclosing
    value so containment always holds.
    """
    centers = np.atleast_2d(np.asarray(centers, float))
    radii = np.asarray(radii, float)
    if len(radii) == 1:
        return centers[0].copy(), float(radii[0])
    if len(radii) == 2:
        v = centers[1] - centers[0]
        d = float(np.linalg.norm(v))
        r0, r1 = radii
        if d + r1 <= r0:
            return centers[0].copy(), float(r0)
        if d + r0 <= r1:
            return centers[1].copy(), float(r1)
        R = 0.5 * (d + r0 + r1)
        return centers[0] + (R - r0) / d * v, R

    def reach(c):
        return np.max(np.linalg.norm(centers - c, axis=1) + radii)

    x0 = np.append(centers.mean(axis=0), reach(centers.mean(axis=0)))
    cons = {"type": "ineq",
            "fun": lambda x: x[3] - np.linalg.norm(centers - x[:3], axis=1) - radii}
    res = minimize(lambda x: x[3], x0, constraints=[cons], method="SLSQP",
                   options={"ftol": 1e-12, "maxiter": 200})
    c = res.x[:3] if res.success else x0[:3]
    return c, float(reach(c))


@dataclass(frozen=True, eq=False)
class CoveringBall:
    level: int
    center: np.ndarray
    radius: float
    rep: int           # hole whose radius sets the scale
    members: tuple     # original holes covered
    lam: float         # radius / radius of rep


@dataclass(frozen=True, eq=False)
class ClusterHierarchy:
    theta: float
    Lambda: float
    balls: tuple
    feasible: bool
    checks: dict
    violation: tuple = ()
    reason: str = ""

    def level(self, k: int) -> list:
        return [b for b in self.balls if b.level == k]

    def raise_if_infeasible(self):
        if not self.feasible:
            raise HierarchyInfeasible(self.reason, self.violation)


def _merge_level(k, members, holes, theta):
    c = holes.centers
    a = holes.radii
    balls = [CoveringBall(k, c[i].copy(), float(a[i]), int(i), (int(i),), 1.0) for i in members]
    changed = True
    while changed and len(balls) > 1:
        changed = False
        cen = np.array([b.center for b in balls])
        rad = np.array([b.radius for b in balls])
        pairs = intersecting_pairs(cen, theta ** 2 * rad)
        if len(pairs) == 0:
            break
        comp = component_labels(len(balls), pairs)
        new = []
        for lab in np.unique(comp):
            grp = np.flatnonzero(comp == lab)
            if grp.size == 1:
                new.append(balls[grp[0]])
                continue
            changed = True
            mem = tuple(sorted(m for g in grp for m in balls[g].members))
            cc, rr = enclosing_ball(cen[grp], rad[grp])
            rep = max(mem, key=lambda m: (a[m], -m))
            new.append(CoveringBall(k, cc, rr, int(rep), mem, rr / float(a[rep])))
        balls = new
    return balls


def build_hierarchy(classes: SizeClasses, holes: HoleSet, theta: float = 2.0,
                    Lambda: float = 64.0, levels: Optional[range] = None) -> ClusterHierarchy:
    """Greedy per-level merging of holes into covering balls.

    Levels are processed from the largest class down.  Within a level, groups
    of covering balls whose ``theta**2``-dilates overlap are replaced by their
    smallest enclosing ball until the level is separated.  The result is
    then checked against the four hierarchy invariants.
    """
    if Lambda < theta ** 2:
        raise ValueError("Lambda must be at least theta**2")
    levels = classes.classes if levels is None else levels
    balls = []
    for k in sorted(levels, reverse=True):
        mem = classes.members(k)
        if mem.size:
            balls.extend(_merge_level(k, mem, holes, theta))
    h = ClusterHierarchy(theta, Lambda, tuple(balls), True, {})
    checks, viol, reason = check_hierarchy(h, classes, holes)
    ok = all(checks.values())
    return ClusterHierarchy(theta, Lambda, tuple(balls), ok, checks, viol, reason)


def check_hierarchy(h: ClusterHierarchy, classes: SizeClasses, holes: HoleSet):
    """Evaluate the inclusion, size-cap, separation and nesting invariants."""
    c = holes.centers
    a = holes.radii
    eps, kappa = holes.eps, classes.kappa
    checks = {"inclusion": True, "size_cap": True, "separation": True, "nesting": True}
    viol: tuple = ()
    reason = ""
    covered = {}
    for b in h.balls:
        for m in b.members:
            covered[m] = b
        if b.lam > h.Lambda or b.radius > h.Lambda * eps ** kappa * (1 + 1e-12):
            if checks["size_cap"]:
                viol, reason = b.members, f"size cap exceeded at level {b.level}"
            checks["size_cap"] = False
    for k in classes.classes:
        for i in classes.members(k):
            b = covered.get(int(i))
            ok = (b is not None and b.level == k and
                  np.linalg.norm(c[i] - b.center) + a[i] <= b.radius * (1 + 1e-9) + 1e-15)
            if not ok:
                if checks["inclusion"]:
                    viol, reason = (int(i),), f"hole {int(i)} not covered at level {k}"
                checks["inclusion"] = False
    bylevel: dict = {}
    for b in h.balls:
        bylevel.setdefault(b.level, []).append(b)
    for k, bs in bylevel.items():
        if len(bs) < 2:
            continue
        cen = np.array([b.center for b in bs])
        rad = np.array([b.radius for b in bs]) * h.theta ** 2
        d = np.linalg.norm(cen[:, None] - cen[None], axis=2)
        bad = (d < rad[:, None] + rad[None]) & ~np.eye(len(bs), dtype=bool)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            if checks["separation"]:
                viol = bs[i].members + bs[j].members
                reason = f"theta^2-dilates overlap at level {k}"
            checks["separation"] = False
    for b in h.balls:
        hi = np.flatnonzero(classes.labels > b.level)
        if hi.size == 0:
            continue
        d = np.linalg.norm(c[hi] - b.center, axis=1)
        bad = d < a[hi] + h.theta * b.radius
        if bad.any():
            if checks["nesting"]:
                viol = b.members + (int(hi[np.argmax(bad)]),)
                reason = f"level-{b.level} dilate meets a larger hole"
            checks["nesting"] = False
    return checks, viol, reason
