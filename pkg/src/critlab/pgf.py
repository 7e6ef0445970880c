"""Exact discrete-time computations by generating-function iteration.

Survival probabilities are always iterated in the complement variable
``phi = 1 - f``, through ``phi -> phi * sum_i P(X > i) (1 - phi)^i``, so they
keep full relative precision deep into the extinction regime.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .curves import CurveTable
from .errors import DegenerateMean, OverflowToLog, TruncationWarning
from .jet import compose_scaled
from .model import tails_from_probs

log = logging.getLogger(__name__)

MAX_FACTORIAL_ORDER = 12
FULL_CURVE_LIMIT = 10_000
LOG_SWITCH = math.log(1e300)


@dataclass(frozen=True)
class _Laws:
    """Per-generation quantities for generations 0..N-1."""

    probs: np.ndarray  # (N, K+1)
    tails: np.ndarray  # (N, K): P(X_n > i)
    mu: np.ndarray
    g2_one: np.ndarray  # g_n''(1)
    g2_coef: np.ndarray  # (N, K-1) coefficients of g_n''

    @classmethod
    def build(cls, schedule, N):
        probs = schedule.table(max(N, 1))[:N]
        if probs.shape[1] < 3:
            probs = np.pad(probs, ((0, 0), (0, 3 - probs.shape[1])))
        k = np.arange(probs.shape[1], dtype=float)
        tails = np.stack([tails_from_probs(row) for row in probs]) if N else np.zeros((0, probs.shape[1] - 1))
        mu = probs @ k
        g2_coef = (probs * (k * (k - 1)))[:, 2:]
        return cls(probs, tails, mu, g2_coef.sum(axis=1), g2_coef)

    def g2(self, j, x):
        """g_j''(x) by Horner on nonnegative coefficients."""
        acc = np.zeros_like(x)
        for c in self.g2_coef[j, ::-1]:
            acc = acc * x + c
        return acc


@dataclass(frozen=True)
class SurvivalProfile:
    target: int
    values: np.ndarray  # phi_{j,n}, j = 0..n

    @property
    def phi(self):
        return float(self.values[0])


def _step(tails_row, v):
    w = 1.0 - v
    acc = np.zeros_like(v)
    for c in tails_row[::-1]:
        acc = acc * w + c
    return v * acc


def survival_profile(schedule, n):
    """phi_{j,n} = P(Z_n != 0 | Z_j = 1) for every j = 0..n, by one inward pass."""
    if n < 0:
        raise ValueError("n must be >= 0")
    values = np.ones(n + 1)
    if n == 0:
        return SurvivalProfile(0, values)
    laws = _Laws.build(schedule, n)
    tails = [row.tolist() for row in laws.tails]
    v = 1.0
    for j in range(n - 1, -1, -1):
        w = 1.0 - v
        acc = 0.0
        for c in reversed(tails[j]):
            acc = acc * w + c
        v = v * acc
        values[j] = v
    return SurvivalProfile(n, values)


def _running_means(mu):
    """m_0..m_N from generation means, with the first degenerate index (or None)."""
    m = np.empty(len(mu) + 1)
    m[0] = 1.0
    with np.errstate(over="ignore"):
        m[1:] = np.cumprod(mu)
    zero = np.nonzero(mu == 0)[0]
    with np.errstate(divide="ignore"):
        log_m = np.concatenate([[0.0], np.cumsum(np.log(mu))])
    return m, log_m, (int(zero[0]) if zero.size else None)


def _gamma(g2_one, mu, m):
    """Gamma_0..Gamma_N from g_j''(1), mu_j (j < N) and m_0..m_N."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        terms = g2_one / (2.0 * mu * m[1:])
    terms = np.where(g2_one == 0, 0.0, terms)
    return np.concatenate([[0.0], np.cumsum(terms)])


def _sweep(laws, m, targets, start=1.0, sharp=False):
    """Inward passes for all ``targets`` at once.

    Returns ``phi`` with phi[i] = 1 - f_{targets[i]}(1 - start) and, if
    ``sharp``, the sums over j of g_j''(f_{jn}(0)) / (2 mu_j m_{j+1}) (using
    start = 1 for the f_{jn}(0) values).
    """
    targets = np.asarray(targets, dtype=int)
    order = np.argsort(targets, kind="stable")
    ts = targets[order]
    v = np.full(len(ts), float(start))
    v0 = np.ones(len(ts)) if sharp and start != 1.0 else None
    acc = np.zeros(len(ts))
    top = int(ts.max()) if len(ts) else 0
    for j in range(top - 1, -1, -1):
        k = int(np.searchsorted(ts, j, side="right"))
        if k == len(ts):
            continue
        row = laws.tails[j]
        v[k:] = _step(row, v[k:])
        if sharp:
            if v0 is not None:
                v0[k:] = _step(row, v0[k:])
                base = v0[k:]
            else:
                base = v[k:]
            if laws.g2_one[j] > 0:
                acc[k:] += laws.g2(j, 1.0 - base) / (2.0 * laws.mu[j] * m[j + 1])
    out_phi = np.empty_like(v)
    out_phi[order] = v
    out_acc = np.empty_like(acc)
    out_acc[order] = acc
    return out_phi, out_acc


def geometric_checkpoints(N, per_decade=60):
    """Integer checkpoints 0..N: all n up to 100, then geometrically spaced."""
    dense = np.arange(0, min(N, 100) + 1)
    if N <= 100:
        return dense
    k = int(math.ceil(per_decade * math.log10(N / 100)))
    geo = np.unique(np.round(np.geomspace(100, N, k + 1)).astype(int))
    return np.unique(np.concatenate([dense, geo, [N]]))


def discrete_curves(schedule, N, survival=True, checkpoints=None):
    """mu_n, m_n, Gamma_n, phi_n and their products for n = 0..N.

    Up to ``N = 10**4`` every n is a row; above that (or when
    ``checkpoints`` is given) rows are geometrically spaced checkpoints.
    phi is computed exactly at every row by the vectorised inward pass.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    laws = _Laws.build(schedule, N + 1)
    m, log_m, zero = _running_means(laws.mu[:N])
    diagnostics = []
    last = N
    if zero is not None:
        last = zero
        msg = f"mu_{zero} = 0 so m_{zero + 1} = 0; curve truncated at n={zero}"
        warnings.warn(msg, DegenerateMean, stacklevel=2)
        diagnostics.append(msg)
    gamma = _gamma(laws.g2_one[:N], laws.mu[:N], m)
    if checkpoints is None:
        rows = np.arange(last + 1) if last <= FULL_CURVE_LIMIT else geometric_checkpoints(last)
    else:
        rows = np.asarray(sorted({int(c) for c in checkpoints if 0 <= c <= last}), dtype=int)
    cols = {
        "mu": laws.mu[rows],
        "m": m[rows],
        "log_m": log_m[rows],
        "Gamma": gamma[rows],
    }
    with np.errstate(invalid="ignore", over="ignore"):
        cols["mGamma"] = m[rows] * gamma[rows]
    meta = {"model": schedule.family, "horizon": int(N), "diagnostics": diagnostics}
    if survival:
        phi, _ = _sweep(laws, m, rows)
        cols["phi"] = phi
        cols["phiGamma"] = phi * gamma[rows]
    return CurveTable("n", rows, cols, meta)


def survival_bounds(schedule, n, s=0.0):
    """Survival bounds at generation ``n`` evaluated at ``s`` and at 0.

    Keys: ``gamma_bound_s`` = (1/((1-s) m_n) + Gamma_n)^-1, ``zero_bound_s`` and
    ``sharp_bound_s`` use g_j''(0) and g_j''(f_jn(0)) in place of g_j''(1);
    ``gamma_bound`` / ``sharp_bound`` are the same at s = 0; ``exact`` is
    1 - f_n(s) and ``exact_phi`` is phi_n.  The pointwise order of these
    values is reported under ``order`` but never enforced: at small n the
    Gamma side can exceed the exact value.
    """
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    if n == 0:
        one = {"gamma_bound_s": 1 - s, "zero_bound_s": 1 - s, "sharp_bound_s": 1 - s}
        return {**one, "gamma_bound": 1.0, "sharp_bound": 1.0, "exact": 1 - s, "exact_phi": 1.0,
                "Gamma": 0.0, "m": 1.0, "order": {}}
    laws = _Laws.build(schedule, n)
    m, _, _ = _running_means(laws.mu)
    gamma = _gamma(laws.g2_one, laws.mu, m)[n]
    exact_s, sharp = _sweep(laws, m, [n], start=1.0 - s, sharp=True)
    exact_0, _ = _sweep(laws, m, [n])
    with np.errstate(divide="ignore", invalid="ignore"):
        g2_zero = np.where(laws.g2_one > 0, laws.g2_coef[:, 0] / (2 * laws.mu * m[1:]), 0.0).sum()
    inv = lambda x: 1.0 / x if x > 0 else math.inf  # noqa: E731
    a = 1.0 / ((1.0 - s) * m[n])
    b = 1.0 / m[n]
    out = {
        "gamma_bound_s": inv(a + gamma),
        "zero_bound_s": inv(a + g2_zero),
        "sharp_bound_s": inv(a + sharp[0]),
        "gamma_bound": inv(b + gamma),
        "sharp_bound": inv(b + sharp[0]),
        "exact": float(exact_s[0]),
        "exact_phi": float(exact_0[0]),
        "Gamma": float(gamma),
        "m": float(m[n]),
        "sharp_sum": float(sharp[0]),
        "g2_zero_sum": float(g2_zero),
    }
    order = {
        "s_gamma_le_exact": out["gamma_bound_s"] <= out["exact"],
        "s_exact_le_sharp": out["exact"] <= out["sharp_bound_s"],
        "gamma_le_exact": out["gamma_bound"] <= out["exact_phi"],
        "exact_le_sharp": out["exact_phi"] <= out["sharp_bound"],
    }
    for name, ok in order.items():
        if not ok:
            log.info("bound order %s fails at n=%d, s=%g", name, n, s)
    out["order"] = order
    return out


def sandwich_curve(schedule, N, rows=None):
    """The s = 0 bounds for every row in one inward pass.

    Columns ``gamma_bound`` = (1/m_n + Gamma_n)^-1 and ``sharp_bound`` uses
    g_j''(f_jn(0)) in place of g_j''(1); ``phi`` is exact.
    """
    laws = _Laws.build(schedule, max(N, 1))
    m, _, _ = _running_means(laws.mu[:N])
    gamma = _gamma(laws.g2_one[:N], laws.mu[:N], m)
    rows = np.arange(N + 1) if rows is None else np.asarray(rows, dtype=int)
    phi, sharp = _sweep(laws, m, rows, sharp=True)
    with np.errstate(divide="ignore"):
        inv_m = 1.0 / m[rows]
        cols = {
            "phi": phi,
            "gamma_bound": 1.0 / (inv_m + gamma[rows]),
            "sharp_bound": 1.0 / (inv_m + sharp),
        }
    return CurveTable("n", rows, cols)


def factorial_moment_curve(schedule, N, R):
    """F_{n,r} = f_n^(r)(1) for n = 0..N and r = 1..R by forward jet composition.

    The jet of f_n is carried in a rescaled variable (power-of-two scale)
    so intermediate values stay O(1).  If some F exceeds 1e300 the table
    holds ``logF_r`` columns (natural log) instead of ``F_r``.  ``ratio_r``
    columns give F_{n,r} / (m_n^r Gamma_n^(r-1)).
    """
    if R < 1 or R > MAX_FACTORIAL_ORDER:
        raise ValueError(f"order must lie in 1..{MAX_FACTORIAL_ORDER}")
    laws = _Laws.build(schedule, N)
    m, log_m, zero = _running_means(laws.mu)
    gamma = _gamma(laws.g2_one, laws.mu, m)
    last = N if zero is None else zero
    if zero is not None:
        warnings.warn(f"mu_{zero} = 0; factorial moments truncated at n={zero}", DegenerateMean, stacklevel=2)
    probs = laws.probs
    kk = np.arange(probs.shape[1], dtype=float)
    binom = np.stack([np.array([math.comb(int(k), j) for k in kk]) for j in range(R + 1)])
    jets = probs @ binom.T  # (N, R+1): c_j = g^(j)(1)/j!
    logfact = np.array([math.lgamma(r + 1) for r in range(R + 1)])

    b = np.zeros(R + 1)
    b[0] = 1.0
    if R >= 1:
        b[1] = 1.0
    mant, expo = 1.0, 0  # scale S = mant * 2**expo
    b_hist = np.zeros((last + 1, R + 1))
    s_hist = np.zeros((last + 1, 2))
    b_hist[0] = b
    s_hist[0] = (mant, expo)
    j_idx = np.arange(R + 1)
    for n in range(last):
        c = jets[n]
        mu = laws.mu[n]
        with np.errstate(divide="ignore"):
            log_scale = math.log(mant) + expo * math.log(2.0)
            log_c = np.log(c[1:])
        ex = log_c + (1 - j_idx[1:]) * log_scale - j_idx[1:] * math.log(mu)
        ytilde = np.concatenate([[0.0], np.exp(ex)])
        ytilde[1] = c[1] / mu
        b = compose_scaled(b, ytilde)
        mant *= mu
        f, e = math.frexp(mant)
        mant, expo = f, expo + e
        pos = b[1:] > 0
        lam = max(math.log2(bi) / i for i, bi in zip(j_idx[1:][pos], b[1:][pos]))
        shift = int(round(lam))
        if shift:
            b = np.ldexp(b, -shift * j_idx)
            expo += shift
        b_hist[n + 1] = b
        s_hist[n + 1] = (mant, expo)
    rows = np.arange(last + 1)
    with np.errstate(divide="ignore"):
        log_b = np.log(b_hist)
        log_s = np.log(s_hist[:, 0]) + s_hist[:, 1] * math.log(2.0)
    cols = {}
    log_F = {r: logfact[r] + log_b[:, r] + r * log_s for r in range(1, R + 1)}
    overflow = any(np.nanmax(v) > LOG_SWITCH for v in log_F.values())
    if overflow:
        warnings.warn("factorial moments exceed 1e300; switching to log scale", OverflowToLog, stacklevel=2)
        for r in range(1, R + 1):
            cols[f"logF_{r}"] = log_F[r]
    else:
        for r in range(1, R + 1):
            direct = math.factorial(r) * b_hist[:, r] * np.ldexp(s_hist[:, 0] ** r, (r * s_hist[:, 1]).astype(int))
            cols[f"F_{r}"] = direct
    with np.errstate(divide="ignore", invalid="ignore"):
        log_gamma = np.log(gamma[rows])
        for r in range(1, R + 1):
            lr = log_F[r] - r * log_m[rows] - (r - 1) * log_gamma
            cols[f"ratio_{r}"] = np.exp(lr) if r > 1 else np.exp(log_F[1] - log_m[rows])
    cols["m"] = m[rows]
    cols["Gamma"] = gamma[rows]
    meta = {"scale": "log" if overflow else "linear", "order": R}
    return CurveTable("n", rows, cols, meta)


def _stirling2(R):
    S = np.zeros((R + 1, R + 1))
    S[0, 0] = 1.0
    for r in range(1, R + 1):
        for k in range(1, r + 1):
            S[r, k] = k * S[r - 1, k] + S[r - 1, k - 1]
    return S


def raw_moments_from_factorial(F):
    """Raw moments M_r = sum_k S(r, k) F_k from factorial moments F_1..F_R."""
    F = np.asarray(F, dtype=float)
    R = len(F)
    if R < 1:
        raise ValueError("need at least one factorial moment")
    S = _stirling2(R)
    return np.array([np.dot(S[r, 1 : r + 1], F[:r]) for r in range(1, R + 1)])


def exact_distribution_oracle(schedule, n, cap=4096):
    """Law of Z_n by direct convolution; returns ``(probs, leaked_mass)``.

    Independent of the generating-function machinery: each generation maps
    the population law through z-fold convolution powers of the offspring
    law, truncated at ``cap``.
    """
    if n > 16 or cap > 4096:
        raise ValueError("oracle limited to n <= 16 and cap <= 4096")
    dist = np.zeros(cap + 1)
    dist[1] = 1.0
    leaked = 0.0
    table = schedule.table(max(n, 1))
    for j in range(n):
        pmf = table[j]
        new = np.zeros(cap + 1)
        new[0] += dist[0]
        power = np.zeros(cap + 1)
        power[0] = 1.0
        zmax = int(np.nonzero(dist)[0].max())
        for z in range(1, zmax + 1):
            power = np.convolve(power, pmf)[: cap + 1]
            if dist[z] > 0:
                new += dist[z] * power
                leaked += dist[z] * max(0.0, 1.0 - power.sum())
        dist = new
    if leaked > 1e-9:
        warnings.warn(f"oracle truncation leaked mass {leaked:.3g}", TruncationWarning, stacklevel=2)
    return dist, leaked


def oracle_factorial_moments(dist, R):
    z = np.arange(len(dist), dtype=float)
    out = []
    falling = np.ones_like(z)
    for r in range(1, R + 1):
        falling = falling * (z - (r - 1))
        out.append(float(np.dot(falling, dist)))
    return np.array(out)
