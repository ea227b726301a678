"""Marked Poisson point processes with radius marks.

A realization is a finite set of blown-up centers ``z`` in ``(1/eps) D`` with
marks ``rho >= 1``.  Holes are later placed at ``eps z`` with radius
``eps**alpha * rho``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ExpectedCountOverflow, InadmissibleLaw

COUNT_CAP = 1e8


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower, upper]``."""

    lower: tuple = (-0.5, -0.5, -0.5)
    upper: tuple = (0.5, 0.5, 0.5)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.asarray(self.upper) - np.asarray(self.lower)))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lower, float), np.asarray(self.upper, float)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        lo, hi = self.bounds()
        return np.all((x >= lo) & (x <= hi), axis=1)

    def boundary_distance(self, x) -> np.ndarray:
        """Distance to the boundary for points inside (negative outside)."""
        x = np.atleast_2d(x)
        lo, hi = self.bounds()
        return np.min(np.minimum(x - lo, hi - x), axis=1)

    def farthest_distance(self, c) -> np.ndarray:
        """Largest distance from ``c`` to a point of the box."""
        c = np.atleast_2d(c)
        lo, hi = self.bounds()
        far = np.maximum(np.abs(c - lo), np.abs(hi - c))
        return np.linalg.norm(far, axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.bounds()
        return lo + (hi - lo) * rng.random((n, 3))

    def scaled(self, s: float) -> "Box":
        lo, hi = self.bounds()
        return Box(tuple(lo * s), tuple(hi * s))

    def spec(self) -> dict:
        return {"kind": "box", "lower": list(map(float, self.lower)),
                "upper": list(map(float, self.upper))}


@dataclass(frozen=True)
class Ball:
    """Closed ball, star-shaped about its center."""

    center_: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.center_, float)

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius ** 3

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.linalg.norm(x - self.center, axis=1) <= self.radius

    def boundary_distance(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.radius - np.linalg.norm(x - self.center, axis=1)

    def farthest_distance(self, c) -> np.ndarray:
        c = np.atleast_2d(c)
        return np.linalg.norm(c - self.center, axis=1) + self.radius

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / 3.0)
        return self.center + d * r[:, None]

    def scaled(self, s: float) -> "Ball":
        return Ball(tuple(self.center * s), self.radius * s)

    def spec(self) -> dict:
        return {"kind": "ball", "center": list(map(float, self.center_)),
                "radius": float(self.radius)}


Domain = Box | Ball


def domain_from_spec(d: dict) -> Domain:
    if d["kind"] == "box":
        return Box(tuple(d["lower"]), tuple(d["upper"]))
    if d["kind"] == "ball":
        return Ball(tuple(d["center"]), float(d["radius"]))
    raise ValueError(f"unknown domain kind {d['kind']!r}")


# ---------------------------------------------------------------- radii laws

@dataclass(frozen=True)
class Constant:
    rho0: float = 1.0

    def __post_init__(self):
        if self.rho0 < 1.0:
            raise ValueError("marks must be >= 1")

    def sample(self, rng, n):
        return np.full(n, float(self.rho0))

    def moment(self, q: float) -> float:
        return float(self.rho0) ** q

    def survival(self, r):
        """P(rho >= r)."""
        return (np.asarray(r, float) <= self.rho0).astype(float)

    def spec(self) -> dict:
        return {"kind": "constant", "rho0": float(self.rho0)}


@dataclass(frozen=True)
class ParetoShifted:
    """Density ``s r**(-s-1)`` on ``[1, inf)``."""

    s: float = 3.0

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("tail index must be positive")

    def sample(self, rng, n):
        u = rng.random(n)
        return (1.0 - u) ** (-1.0 / self.s)

    def moment(self, q: float) -> float:
        return self.s / (self.s - q) if q < self.s else math.inf

    def survival(self, r):
        r = np.asarray(r, float)
        return np.where(r <= 1.0, 1.0, np.maximum(r, 1.0) ** (-self.s))

    def spec(self) -> dict:
        return {"kind": "pareto", "s": float(self.s)}


@dataclass(frozen=True)
class BoundedUniform:
    """Uniform on ``[1, b]``."""

    b: float = 2.0

    def __post_init__(self):
        if self.b < 1.0:
            raise ValueError("upper bound must be >= 1")

    def sample(self, rng, n):
        return 1.0 + (self.b - 1.0) * rng.random(n)

    def moment(self, q: float) -> float:
        if self.b == 1.0:
            return 1.0
        if abs(q + 1.0) < 1e-14:
            return math.log(self.b) / (self.b - 1.0)
        return (self.b ** (q + 1) - 1.0) / ((q + 1) * (self.b - 1.0))

    def survival(self, r):
        r = np.asarray(r, float)
        if self.b == 1.0:
            return (r <= 1.0).astype(float)
        return np.clip((self.b - r) / (self.b - 1.0), 0.0, 1.0)

    def spec(self) -> dict:
        return {"kind": "uniform", "b": float(self.b)}


RadiiLaw = Constant | ParetoShifted | BoundedUniform


def law_from_spec(d: dict) -> RadiiLaw:
    kind = d["kind"]
    if kind == "constant":
        return Constant(d.get("rho0", 1.0))
    if kind == "pareto":
        return ParetoShifted(d["s"])
    if kind == "uniform":
        return BoundedUniform(d["b"])
    raise ValueError(f"unknown law {kind!r}")


def moment(law: RadiiLaw, q: float) -> float:
    """``E[rho**q]``, possibly ``inf``."""
    return law.moment(q)


@dataclass(frozen=True)
class Verdict:
    kind: str  # "Admissible", "AdmissibleStokes" or "Inadmissible"
    beta: Optional[float] = None

    def __bool__(self):
        return self.kind != "Inadmissible"


def check_admissibility(law: RadiiLaw, alpha: float, require_beta: bool = False,
                        probe_beta: Optional[float] = None,
                        strict: bool = False) -> Verdict:
    """Classify a radii law against the moment conditions.

    The scalar problem needs ``E[rho**(3/alpha)] < inf``; the Stokes variant
    needs ``E[rho**(3/alpha + beta)] < inf`` for some ``beta > 0``.  For a
    Pareto tail the returned ``beta`` is the supremum, which is not attained.
    """
    q = 3.0 / alpha
    if not math.isfinite(law.moment(q)):
        if strict:
            raise InadmissibleLaw(f"E[rho^{q:g}] is infinite for {law}")
        return Verdict("Inadmissible")
    if not require_beta:
        return Verdict("Admissible")
    if probe_beta is not None:
        if math.isfinite(law.moment(q + probe_beta)):
            return Verdict("AdmissibleStokes", float(probe_beta))
        return Verdict("Admissible")
    if isinstance(law, ParetoShifted):
        return Verdict("AdmissibleStokes", law.s - q)
    return Verdict("AdmissibleStokes", math.inf)


# ---------------------------------------------------------------- realizations

def substream(seed: int, *stream_id: int) -> np.random.Generator:
    """Counter-based generator for the sub-stream ``(seed, *stream_id)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master: int, *stream_id: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(s) for s in stream_id))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class ProcessParams:
    lam: float
    eps: float
    alpha: float
    domain: Domain = field(default_factory=Box)
    law: RadiiLaw = field(default_factory=Constant)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise ValueError("eps must lie in (0, 1)")
        if not (1.0 < self.alpha < 3.0):
            raise ValueError("alpha must lie in (1, 3)")
        if self.lam <= 0:
            raise ValueError("intensity must be positive")

    @property
    def expected_count(self) -> float:
        return self.lam * self.domain.volume * self.eps ** -3

    def to_dict(self) -> dict:
        return {"lam": float(self.lam), "eps": float(self.eps),
                "alpha": float(self.alpha), "domain": self.domain.spec(),
                "law": self.law.spec(), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "ProcessParams":
        return cls(d["lam"], d["eps"], d["alpha"], domain_from_spec(d["domain"]),
                   law_from_spec(d["law"]), int(d["seed"]))


@dataclass(frozen=True, eq=False)
class Realization:
    """Blown-up centers ``z`` (shape ``(n, 3)``) with marks ``rho``."""

    params: ProcessParams
    z: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for a in (self.z, self.rho):
            a.setflags(write=False)

    def __len__(self):
        return self.rho.size

    def restrict(self, mask) -> "Realization":
        return Realization(self.params, np.array(self.z[mask]), np.array(self.rho[mask]))


def sample_process(params: ProcessParams, cap: float = COUNT_CAP) -> Realization:
    """Draw a realization on ``(1/eps) D``."""
    mean = params.expected_count
    if mean > cap:
        raise ExpectedCountOverflow(f"expected count {mean:.3g} exceeds cap {cap:.3g}")
    rng = substream(params.seed, 0)
    n = int(rng.poisson(mean))
    z = params.domain.sample(rng, n) / params.eps
    rho = np.asarray(params.law.sample(rng, n), dtype=float)
    return Realization(params, z, rho)


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_realization(real: Realization, path) -> None:
    """Write a header line of JSON params, then ``z_x z_y z_z rho`` lines."""
    with open(path, "w") as fh:
        fh.write(json.dumps(real.params.to_dict(), sort_keys=True) + "\n")
        for zi, r in zip(real.z.tolist(), real.rho.tolist()):
            fh.write(f"{_fmt(zi[0])} {_fmt(zi[1])} {_fmt(zi[2])} {_fmt(r)}\n")


def load_realization(path) -> Realization:
    text = Path(path).read_text().splitlines()
    params = ProcessParams.from_dict(json.loads(text[0]))
    rows = [line.split() for line in text[1:] if line.strip()]
    data = np.array(rows, dtype=float).reshape(-1, 4)
    return Realization(params, np.ascontiguousarray(data[:, :3]),
                       np.ascontiguousarray(data[:, 3]))
