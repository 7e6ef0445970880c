"""Goodness of fit against Exp(1), moment tables and finite-horizon trend verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curves import CurveTable
from .errors import TooFewPoints, TooFewSamples

MIN_KS_SAMPLES = 8
MIN_MOMENT_SAMPLES = 30
MAX_MOMENT_ORDER = 6
MIN_TREND_POINTS = 16
SHRINK = 0.75


@dataclass(frozen=True)
class KsResult:
    n_samples: int
    distance: float
    p_value: float

    def to_dict(self):
        return {"n_samples": self.n_samples, "ks_distance": self.distance, "p_value": self.p_value}


def kolmogorov_survival(lam, terms=20):
    """P(K > lam) for the Kolmogorov distribution, by its alternating series."""
    if lam < 0.2:
        return 1.0
    k = np.arange(1, terms + 1)
    val = 2.0 * float(np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * lam**2)))
    return min(1.0, max(0.0, val))


def ks_vs_exponential(samples):
    """One-sample KS distance to the Exp(1) law with its asymptotic p-value."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = len(x)
    if m < MIN_KS_SAMPLES:
        raise TooFewSamples(f"KS test needs at least {MIN_KS_SAMPLES} samples, got {m}")
    cdf = -np.expm1(-np.maximum(x, 0.0))
    i = np.arange(1, m + 1)
    d = float(max(np.max(i / m - cdf), np.max(cdf - (i - 1) / m)))
    d = min(1.0, max(0.0, d))
    return KsResult(m, d, kolmogorov_survival(math.sqrt(m) * d))


def empirical_moments_ci(samples, R=4):
    """Plug-in E(x^r) for r = 1..R with 3-sigma normal-approximation half widths."""
    x = np.asarray(samples, dtype=float).ravel()
    m = len(x)
    if m < MIN_MOMENT_SAMPLES:
        raise TooFewSamples(f"moment table needs at least {MIN_MOMENT_SAMPLES} samples, got {m}")
    if not 1 <= R <= MAX_MOMENT_ORDER:
        raise ValueError(f"moment order must lie in 1..{MAX_MOMENT_ORDER}")
    r = np.arange(1, R + 1)
    powers = x[None, :] ** r[:, None]
    mean = powers.mean(axis=1)
    half = 3.0 * powers.std(axis=1, ddof=1) / math.sqrt(m)
    return CurveTable("r", r, {
        "moment": mean,
        "half_width": half,
        "lower": mean - half,
        "upper": mean + half,
        "factorial": np.array([float(math.factorial(k)) for k in r]),
    })


@dataclass(frozen=True)
class TrendVerdict:
    kind: str  # "diverging", "converging" or "inconclusive"
    limit: float
    window: tuple

    def to_dict(self):
        lim = self.limit if math.isfinite(self.limit) else None
        return {"kind": self.kind, "limit": lim, "window": list(self.window)}


def _value_at(index, values, x):
    i = int(np.searchsorted(index, x, side="right")) - 1
    return values[max(i, 0)], max(i, 0)


def sequence_trend(values, index=None):
    """Judge whether a finite sequence looks divergent, convergent, or neither.

    The tail is cut into geometric blocks ``[R/27, R/9]``, ``[R/9, R/3]`` and
    ``[R/3, R]`` of the index ``R`` at the end.  A sequence diverges when it
    rises across every block, ends at its maximum and the last increment has
    not collapsed.  It converges when both the net increment and the spread
    inside the last block shrink by at least a quarter relative to the block
    before.  The limit estimate extrapolates the increments geometrically.
    """
    x = np.asarray(values, dtype=float).ravel()
    n = len(x)
    if n < MIN_TREND_POINTS:
        raise TooFewPoints(f"trend needs at least {MIN_TREND_POINTS} points, got {n}")
    idx = np.arange(1, n + 1, dtype=float) if index is None else np.asarray(index, dtype=float).ravel()
    if len(idx) != n:
        raise ValueError("index and values differ in length")
    if not np.all(np.isfinite(x)):
        return TrendVerdict("inconclusive", math.nan, (float(idx[0]), float(idx[-1])))
    end = idx[-1]
    # geometric cuts, measured as if the index started one step above zero
    shift = idx[0] - (idx[1] - idx[0])
    reach = end - shift
    cuts = [shift + reach / 27, shift + reach / 9, shift + reach / 3]
    pts = [_value_at(idx, x, c) for c in cuts] + [(x[-1], n - 1)]
    marks = [p[0] for p in pts]
    pos = [p[1] for p in pts]
    inc = [marks[k + 1] - marks[k] for k in range(3)]  # oldest block first
    osc = [float(np.ptp(x[pos[k]: pos[k + 1] + 1])) for k in range(3)]
    window = (float(idx[pos[0]]), float(end))
    scale = max(1.0, float(np.max(np.abs(x[pos[0]:]))))
    tiny = 1e-12 * scale
    last, prev = inc[2], inc[1]
    if abs(last) <= tiny and osc[2] <= tiny:
        return TrendVerdict("converging", float(x[-1]), window)
    if all(v > 0 for v in inc) and x[-1] >= np.max(x) and last >= SHRINK * prev:
        return TrendVerdict("diverging", math.inf, window)
    if abs(last) <= SHRINK * abs(prev) and osc[2] <= SHRINK * osc[1]:
        limit = float(x[-1])
        if prev != 0:
            ratio = last / prev
            if 0 <= ratio < 1:
                limit += last * ratio / (1 - ratio)
        return TrendVerdict("converging", limit, window)
    return TrendVerdict("inconclusive", math.nan, window)
