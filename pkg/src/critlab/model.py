"""Process specifications: offspring laws, offspring schedules, rate schedules.

Discrete models are described by an :class:`OffspringSchedule` mapping a
generation index ``n`` to a finite-support offspring law; continuous models by
a :class:`RateSchedule` mapping time ``t`` to per-capita jump rates
``b_k(t)`` for ``k in {-1, 1, ..., K}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import comb

from .errors import EvaluationError, HorizonMismatch, MassNotOne, NegativeMass, NegativeRate, SupportTooLarge
from .expr import RateExpression, as_expression

MAX_SUPPORT = 64
MASS_TOL = 1e-12

FAMILIES = ("table", "constant", "paper_example", "polynomial_mean", "expression")


# --------------------------------------------------------------------------- Pmf


@dataclass(frozen=True, eq=False)
class Pmf:
    """Offspring law on ``0..K``; ``probs[k] = P(X = k)``."""

    probs: np.ndarray

    @property
    def support_bound(self):
        return len(self.probs) - 1

    def __eq__(self, other):
        return isinstance(other, Pmf) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(tuple(self.probs.tolist()))

    def __repr__(self):
        atoms = ", ".join(f"p{k}={p:g}" for k, p in enumerate(self.probs) if p > 0)
        return f"Pmf{{{atoms}}}"

    @property
    def mean(self):
        return float(np.dot(np.arange(len(self.probs)), self.probs))

    def pgf(self, s):
        return np.polynomial.polynomial.polyval(s, self.probs)

    def pgf_second(self, s):
        """g''(s), a polynomial with nonnegative coefficients."""
        k = np.arange(len(self.probs))
        coef = (k * (k - 1) * self.probs)[2:]
        if coef.size == 0:
            return np.zeros_like(np.asarray(s, dtype=float))
        return np.polynomial.polynomial.polyval(s, coef)

    def survival_step(self, phi):
        """``1 - g(1 - phi)`` evaluated without cancellation."""
        return survival_step(tails_from_probs(self.probs), phi)


def tails_from_probs(probs):
    """P(X > i) for i = 0..K-1, summed from the top so small tails stay exact."""
    probs = np.asarray(probs, dtype=float)
    rev = np.cumsum(probs[::-1])[::-1]
    return rev[1:]


def survival_step(tails, phi):
    """Complement map ``phi -> 1 - g(1 - phi)``.

    Uses ``1 - g(1-phi) = phi * sum_i P(X > i) (1-phi)^i``: all terms are
    nonnegative, so the result keeps full relative precision as phi -> 0.
    ``tails`` may be 1-D (one law) or broadcast against ``phi``.
    """
    phi = np.asarray(phi, dtype=float)
    w = 1.0 - phi
    acc = np.zeros_like(phi)
    for c in tails[::-1]:
        acc = acc * w + c
    return phi * acc


def validate_pmf(probs, max_support=MAX_SUPPORT):
    """Check a probability vector and return it as a :class:`Pmf`."""
    arr = np.asarray(probs, dtype=float).ravel()
    if arr.size == 0:
        raise MassNotOne("empty probability vector")
    if not np.all(np.isfinite(arr)):
        raise NegativeMass("non-finite probability")
    if np.any(arr < 0):
        k = int(np.argmax(arr < 0))
        raise NegativeMass(f"P(X={k}) = {arr[k]} < 0")
    total = math.fsum(arr.tolist())
    if abs(total - 1.0) > MASS_TOL:
        raise MassNotOne(f"probabilities sum to {total!r}")
    nz = np.nonzero(arr)[0]
    arr = arr[: nz[-1] + 1].copy()
    if len(arr) - 1 > max_support:
        raise SupportTooLarge(f"support bound {len(arr) - 1} exceeds {max_support}")
    arr.setflags(write=False)
    return Pmf(arr)


def truncate_pmf(probs, max_support=MAX_SUPPORT):
    """Cut an (effectively) infinite law at ``max_support``.

    Mass beyond the cut is dropped and the rest renormalised; returns
    ``(pmf, dropped_mass)``.
    """
    arr = np.asarray(probs, dtype=float)
    head = arr[: max_support + 1]
    dropped = float(max(0.0, 1.0 - math.fsum(head.tolist())))
    return validate_pmf(head / math.fsum(head.tolist()), max_support), dropped


def pmf_moments(pmf, r):
    """Raw moments E(X^j) and factorial moments g^(j)(1) for j = 1..r."""
    if r < 1:
        raise ValueError("order must be >= 1")
    k = np.arange(len(pmf.probs), dtype=float)
    raw = [float(np.dot(k**j, pmf.probs)) for j in range(1, r + 1)]
    falling = np.ones_like(k)
    factorial = []
    for j in range(1, r + 1):
        falling = falling * (k - (j - 1))
        factorial.append(float(np.dot(falling, pmf.probs)))
    return {"raw": raw, "factorial": factorial}


# ------------------------------------------------------------ offspring schedules


@dataclass(frozen=True, eq=False)
class OffspringSchedule:
    """Generation-indexed offspring laws.

    Families:

    ``constant``        ``params = {"pmf": [...]}``
    ``table``           ``params = {"pmfs": [[...], ...]}``; the last law repeats
    ``paper_example``   X_0 = 1; for n >= 1, P(X=2) = (n+1)/(2n), else 0
    ``polynomial_mean`` X_0 = 1; for n >= 1 a {0, 2} law with mean ((n+1)/n)^alpha,
                        so that m_n = n^alpha; needs ``alpha <= 1``
    ``expression``      ``params = {"probs": {"0": "<expr in n>", ...}}``
    """

    family: str
    params: Mapping = field(default_factory=dict)
    max_support: int = MAX_SUPPORT

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        p = dict(self.params)
        if self.family == "constant":
            p["pmf"] = validate_pmf(p["pmf"], self.max_support)
        elif self.family == "table":
            if not p.get("pmfs"):
                raise ValueError("table family needs a non-empty 'pmfs' list")
            p["pmfs"] = tuple(validate_pmf(q, self.max_support) for q in p["pmfs"])
        elif self.family == "polynomial_mean":
            alpha = float(p.get("alpha", 1.0))
            if alpha > 1:
                raise ValueError("polynomial_mean needs alpha <= 1 (P(X_1 = 2) = 2^alpha / 2)")
            p["alpha"] = alpha
        elif self.family == "expression":
            exprs = {int(k): as_expression(v) for k, v in p["probs"].items()}
            if any(k < 0 or k > self.max_support for k in exprs):
                raise SupportTooLarge(f"expression support outside 0..{self.max_support}")
            for e in exprs.values():
                if e.variables - {"n"}:
                    raise EvaluationError(f"offspring expression {e} may only use n")
            p["probs"] = exprs
        object.__setattr__(self, "params", p)

    @classmethod
    def constant(cls, probs):
        return cls("constant", {"pmf": probs})

    @classmethod
    def paper_example(cls):
        return cls("paper_example")

    def _raw_table(self, n):
        n = np.asarray(n, dtype=float)
        fam = self.family
        if fam == "constant":
            return np.broadcast_to(self.params["pmf"].probs, (len(n), len(self.params["pmf"].probs))).copy()
        if fam == "table":
            pmfs = self.params["pmfs"]
            width = max(len(q.probs) for q in pmfs)
            rows = np.zeros((len(pmfs), width))
            for i, q in enumerate(pmfs):
                rows[i, : len(q.probs)] = q.probs
            return rows[np.minimum(n.astype(int), len(pmfs) - 1)]
        if fam in ("paper_example", "polynomial_mean"):
            alpha = 1.0 if fam == "paper_example" else self.params["alpha"]
            out = np.zeros((len(n), 3))
            pos = n >= 1
            nn = np.where(pos, n, 1.0)
            if alpha == 1.0:
                p2 = (nn + 1) / (2 * nn)
            else:
                p2 = ((nn + 1) / nn) ** alpha / 2
            out[:, 2] = np.where(pos, p2, 0.0)
            out[:, 0] = np.where(pos, 1.0 - p2, 0.0)
            out[:, 1] = np.where(pos, 0.0, 1.0)
            return out
        exprs = self.params["probs"]
        out = np.zeros((len(n), max(exprs) + 1))
        for k, e in exprs.items():
            out[:, k] = e(n, "n")
        return out

    def table(self, N, start=0):
        """Offspring laws for generations ``start..start+N-1`` as an array (rows sum to 1)."""
        n = np.arange(start, start + N)
        rows = np.asarray(self._raw_table(n), dtype=float)
        if np.any(rows < 0):
            i = int(np.nonzero((rows < 0).any(axis=1))[0][0])
            raise EvaluationError(f"negative probability at n={n[i]}: {rows[i].tolist()}")
        bad = np.abs(rows.sum(axis=1) - 1.0) > MASS_TOL
        if np.any(bad):
            i = int(np.nonzero(bad)[0][0])
            raise EvaluationError(f"mass {rows[i].sum()!r} != 1 at n={n[i]}")
        nz = np.nonzero(rows.any(axis=0))[0]
        width = nz[-1] + 1 if nz.size else 1
        return rows[:, :width]

    def pmf_at(self, n):
        return offspring_pmf_at(self, n)


def offspring_pmf_at(schedule, n):
    """The offspring law of generation ``n``."""
    if n < 0:
        raise ValueError("generation index must be >= 0")
    return validate_pmf(schedule.table(1, start=int(n))[0], schedule.max_support)


# ------------------------------------------------------------- rate schedules


@dataclass(frozen=True, eq=False)
class RateSchedule:
    """Per-capita jump rates of a birth-and-death process.

    ``rates`` maps a jump size ``k in {-1, 1, ..., max_jump}`` to a
    nonnegative function of ``t``; missing jumps have rate zero.  The
    diagonal rate is ``b0 = -sum_k b_k``.
    """

    max_jump: int
    rates: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.max_jump < 1 or self.max_jump > MAX_SUPPORT:
            raise ValueError(f"max_jump must lie in 1..{MAX_SUPPORT}")
        parsed = {}
        for k, v in dict(self.rates).items():
            k = int(k)
            if k == 0 or k < -1 or k > self.max_jump:
                raise ValueError(f"jump size {k} not in {{-1, 1..{self.max_jump}}}")
            e = as_expression(v)
            if e.variables - {"t"}:
                raise EvaluationError(f"rate expression {e} may only use t")
            parsed[k] = e
        object.__setattr__(self, "rates", parsed)

    @property
    def jumps(self):
        """Jump sizes in column order: -1, 1, 2, ..., K."""
        return np.array([-1, *range(1, self.max_jump + 1)])

    def rate_matrix(self, t):
        """Rates at times ``t``: shape ``(len(t), K+1)``, columns ordered as :attr:`jumps`."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((t.size, self.max_jump + 1))
        for k, e in self.rates.items():
            col = 0 if k == -1 else k
            out[:, col] = e(t, "t")
        if np.any(out < 0):
            i, j = np.argwhere(out < 0)[0]
            raise NegativeRate(f"b_{self.jumps[j]}({t[i]:g}) = {out[i, j]:g} < 0")
        return out

    def pseudo_moments(self, t, jmax):
        """E(X_t^j) = sum_k k^j b_k(t) for j = 1..jmax; shape (len(t), jmax)."""
        b = self.rate_matrix(t)
        k = self.jumps.astype(float)
        return np.stack([b @ k**j for j in range(1, jmax + 1)], axis=1)

    def taylor_at_one(self, t):
        """Coefficients g_t^(j)(1)/j! for j = 0..K+1; shape (len(t), K+2).

        ``g_t(x) = sum_k b_k x^(k+1)`` including the diagonal term, so the
        j = 0 column is identically zero.
        """
        return taylor_from_rates(self.rate_matrix(t), self.max_jump)


def taylor_from_rates(b, max_jump):
    """Taylor coefficients of g_t about x = 1 from a rate matrix."""
    jumps = np.array([-1, *range(1, max_jump + 1)])
    powers = jumps + 1  # exponent of x for each column
    b0 = -b.sum(axis=1)
    out = np.zeros((b.shape[0], max_jump + 2))
    for j in range(max_jump + 2):
        out[:, j] = b @ comb(powers, j)
        if j <= 1:
            out[:, j] += b0
    out[:, 0] = 0.0
    return out


def rates_at(schedule, t, jmax=3):
    """Rates, diagonal rate and pseudo-moments at a single time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    b = schedule.rate_matrix([t])[0]
    k = schedule.jumps
    total = math.fsum(b.tolist())
    return {
        "b": {int(kk): float(v) for kk, v in zip(k, b)},
        "b0": -total,
        "moments": [float(np.dot(k.astype(float) ** j, b)) for j in range(1, jmax + 1)],
    }


def g_value(schedule, t, x):
    """g_t(x) = sum over k of b_k x^(k+1), diagonal term included."""
    info = rates_at(schedule, t)
    val = info["b0"] * x
    for k, v in info["b"].items():
        val += v * x ** (k + 1)
    return val


def g_second(b, max_jump, x):
    """g_t''(x) for each row of the rate matrix ``b`` (nonnegative coefficients)."""
    x = np.asarray(x, dtype=float)
    acc = np.zeros(np.broadcast(b[:, 0], x).shape)
    for k in range(max_jump, 0, -1):
        acc = acc * x + (k + 1) * k * b[:, k]
    return acc


# ----------------------------------------------------------- hypothesis report

DISCRETE_IDS = ("H1", "H2", "H3", "H4a", "H4b", "H5", "H6")
CONTINUOUS_IDS = ("H7", "H8", "H9", "H10", "H11")


@dataclass
class HypothesisEntry:
    id: str
    statistic: float
    verdict: str
    note: str = ""


@dataclass
class HypothesisReport:
    kind: str
    horizon: float
    entries: list
    sufficient: dict

    def verdict(self, hid):
        return next(e.verdict for e in self.entries if e.id == hid)

    def to_dict(self):
        return {
            "kind": self.kind,
            "horizon": self.horizon,
            "hypotheses": [
                {"id": e.id, "statistic": _finite(e.statistic), "verdict": e.verdict, "note": e.note}
                for e in self.entries
            ],
            "sufficient_conditions": self.sufficient,
        }


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _trend_verdict(trend):
    return {
        "diverging": "satisfied-on-horizon",
        "converging": "violated",
    }.get(trend.kind, "inconclusive-trend")


def _tail(values, index, frac=1 / 3):
    cut = index[0] + (index[-1] - index[0]) * (1 - frac)
    return values[index >= cut]


def hypothesis_report(model, horizon, gamma_curve=None):
    """Finite-horizon check of the regularity and criticality hypotheses.

    Bounds (H1-H4, H7-H9) are judged by sup/inf over the horizon, or over its
    last third for lim sup / lim inf statements.  Limits (H5/H6, H10/H11) and
    the sufficient conditions mu_n -> 1 and E(X_t) -> 0 are trend verdicts
    from :func:`critlab.stats.sequence_trend`.
    """
    from . import stats

    if isinstance(model, OffspringSchedule):
        from .pgf import discrete_curves

        N = int(horizon)
        curve = gamma_curve if gamma_curve is not None else discrete_curves(model, N, survival=False)
        if curve.index[-1] < N:
            raise HorizonMismatch(f"curve ends at n={curve.index[-1]}, horizon is {N}")
        tab = model.table(N + 1)
        idx = np.arange(N + 1, dtype=float)
        p0 = tab[:, 0]
        p01 = tab[:, 0] + (tab[:, 1] if tab.shape[1] > 1 else 0.0)
        k = np.arange(tab.shape[1], dtype=float)
        third = tab @ k**3
        h1 = float(p0.max())
        h2 = float(_tail(p01, idx).max())
        h3 = float(_tail(p0, idx).min())
        sel = curve.index <= N
        n_idx = curve.index[sel].astype(float)
        gamma = curve["Gamma"][sel]
        mgamma = curve["mGamma"][sel]
        t_gamma = stats.sequence_trend(gamma[1:], n_idx[1:])
        t_mgamma = stats.sequence_trend(mgamma[1:], n_idx[1:])
        mu = curve["mu"][sel]
        t_mu = stats.sequence_trend(mu[1:], n_idx[1:])
        entries = [
            HypothesisEntry("H1", h1, "satisfied-on-horizon" if h1 < 1 else "violated", "sup P(X_n=0)"),
            HypothesisEntry("H2", h2, "satisfied-on-horizon" if h2 < 1 else "violated", "tail sup P(X_n<=1)"),
            HypothesisEntry("H3", h3, "satisfied-on-horizon" if h3 > 0 else "violated", "tail inf P(X_n=0)"),
            HypothesisEntry("H4a", float(third.max()), "satisfied-on-horizon", "sup E(X_n^3); finite support"),
            HypothesisEntry("H4b", float(third.max()), "satisfied-on-horizon", "finite support bounds all moments"),
            HypothesisEntry("H5", float(gamma[-1]), _trend_verdict(t_gamma), f"Gamma_n trend: {t_gamma.kind}"),
            HypothesisEntry("H6", float(mgamma[-1]), _trend_verdict(t_mgamma), f"m_n Gamma_n trend: {t_mgamma.kind}"),
        ]
        mu_to_one = t_mu.kind == "converging" and abs(t_mu.limit - 1.0) <= 1e-2
        sufficient = {
            "mu_to_1": {"holds": bool(mu_to_one), "trend": t_mu.kind, "limit": _finite(t_mu.limit)},
        }
        return HypothesisReport("discrete", N, entries, sufficient)

    if isinstance(model, RateSchedule):
        from .bd import TimeGrid, mean_and_gamma

        T = float(horizon)
        if gamma_curve is None:
            gamma_curve = mean_and_gamma(model, TimeGrid.uniform(T, 200))
        if gamma_curve.index[-1] < T * (1 - 1e-12):
            raise HorizonMismatch(f"curve ends at t={gamma_curve.index[-1]}, horizon is {T}")
        dense = np.linspace(0.0, T, max(2001, int(T / 1e-2) + 1))
        b = model.rate_matrix(dense)
        death = b[:, 0]
        births = b[:, 1:].sum(axis=1)
        total = b.sum(axis=1)
        ex = model.pseudo_moments(dense, 1)[:, 0]
        h7 = float(_tail(death, dense).min())
        h8 = float(_tail(births, dense).min())
        h9 = float(total.max())
        t_idx = gamma_curve.index.astype(float)
        sel = t_idx > 0
        t_gamma = stats.sequence_trend(gamma_curve["Gamma"][sel], t_idx[sel])
        t_mgamma = stats.sequence_trend(gamma_curve["MGamma"][sel], t_idx[sel])
        t_ex = stats.sequence_trend(ex[1:], dense[1:])
        scale = max(1.0, float(np.abs(ex).max()))
        ex_to_zero = t_ex.kind == "converging" and abs(t_ex.limit) <= 1e-2 * scale
        entries = [
            HypothesisEntry("H7", h7, "satisfied-on-horizon" if h7 > 0 else "violated", "tail inf b_-1(t)"),
            HypothesisEntry("H8", h8, "satisfied-on-horizon" if h8 > 0 else "violated", "tail inf sum_k b_k(t)"),
            HypothesisEntry("H9", h9, "satisfied-on-horizon" if np.isfinite(h9) else "violated", "sup total rate"),
            HypothesisEntry("H10", float(gamma_curve["Gamma"][-1]), _trend_verdict(t_gamma),
                            f"Gamma(t) trend: {t_gamma.kind}"),
            HypothesisEntry("H11", float(gamma_curve["MGamma"][-1]), _trend_verdict(t_mgamma),
                            f"M(t) Gamma(t) trend: {t_mgamma.kind}"),
        ]
        sufficient = {
            "EX_to_0": {"holds": bool(ex_to_zero), "trend": t_ex.kind, "limit": _finite(t_ex.limit)},
        }
        return HypothesisReport("continuous", T, entries, sufficient)

    raise TypeError(f"unsupported model {type(model).__name__}")
