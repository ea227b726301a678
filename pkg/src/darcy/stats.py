"""Small statistics helpers shared by the experiment drivers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _st


def mean_stderr(values) -> tuple[float, float]:
    """Sample mean and standard error of the mean (ddof=1)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log(y) against log(x) and its standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return float("nan"), float("nan")
    res = _st.linregress(np.log(x[keep]), np.log(y[keep]))
    se = res.stderr if keep.sum() > 2 else 0.0
    return float(res.slope), float(se)


@dataclass(frozen=True)
class Trend:
    """Monotonicity verdict for a sequence ordered by decreasing eps."""

    verdict: str  # "pass", "fail" or "insufficient data"
    means: tuple
    stderrs: tuple

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def monotone_trend(means, stderrs=None, direction: str = "decreasing",
                   slack: float = 0.0, strict: bool = False) -> Trend:
    """Check that successive means move in ``direction``.

    ``slack`` is the number of combined standard errors a step may go the
    wrong way before the verdict fails.
    """
    m = np.asarray(means, dtype=float)
    s = np.zeros_like(m) if stderrs is None else np.asarray(stderrs, dtype=float)
    if m.size < 2:
        return Trend("insufficient data", tuple(m), tuple(s))
    sign = -1.0 if direction == "decreasing" else 1.0
    ok = True
    for i in range(1, m.size):
        step = sign * (m[i] - m[i - 1])
        tol = slack * np.hypot(s[i], s[i - 1])
        if strict and tol == 0.0:
            ok &= step > 0
        else:
            ok &= step >= -tol
    return Trend("pass" if ok else "fail", tuple(m), tuple(s))
