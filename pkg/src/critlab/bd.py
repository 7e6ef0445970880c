"""Exact computations for time-inhomogeneous birth-and-death processes.

Survival probabilities come from the backward equation
``d phi(s,t) / ds = g_s(1 - phi)`` with ``phi(t,t) = 1``.  The right-hand
side is evaluated as ``-phi E(X_s) + phi^2 q_s(phi)`` with
``q_s(phi) = sum_{j>=2} (-phi)^(j-2) g_s^(j)(1)/j!``, which keeps full
relative precision when phi is small.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.special import comb

from .curves import CurveTable
from .errors import DomainEscape, HorizonMismatch, TruncationWarning
from .numerics import adaptive_cumulative, cumulative_gl, halving, rk4_linear, substep_times

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-8
QUAD_TOL = 1e-9
DOMAIN_TOL = 1e-10
MAX_ORDER = 10
MAX_CAP = 2000


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing knots starting at 0."""

    knots: tuple

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.ndim != 1 or len(k) < 2:
            raise ValueError("a grid needs at least two knots")
        if k[0] != 0.0:
            raise ValueError("first knot must be 0")
        if np.any(np.diff(k) <= 0) or not np.all(np.isfinite(k)):
            raise ValueError("knots must be finite and strictly increasing")
        object.__setattr__(self, "knots", tuple(float(x) for x in k))

    @classmethod
    def uniform(cls, T, n=100):
        if T <= 0:
            raise ValueError("horizon must be positive")
        return cls(tuple((i * T / n) for i in range(n + 1)))

    @classmethod
    def with_step(cls, T, step):
        return cls.uniform(T, max(1, math.ceil(T / step - 1e-9)))

    @property
    def array(self):
        return np.asarray(self.knots)

    @property
    def horizon(self):
        return self.knots[-1]

    def up_to(self, t):
        """Knots in ``[0, t]`` with ``t`` appended when it is not a knot."""
        if t > self.horizon * (1 + 1e-12):
            raise HorizonMismatch(f"grid ends at {self.horizon}, target is {t}")
        k = self.array
        k = k[k < t * (1 - 1e-12)]
        return np.append(k, t) if t > 0 else np.array([0.0])


def _as_grid(grid, t=None):
    if grid is None:
        return TimeGrid.uniform(t, max(1, math.ceil(t)))
    return grid


# -- mean and Gamma ---------------------------------------------------------------


def _first_moment(rates):
    return lambda x: rates.pseudo_moments(x, 1)[:, 0]


def _log_mean_at(rates, x):
    """log M at sorted points ``x`` (each gap is short)."""
    pts = np.concatenate([[0.0], x])
    return cumulative_gl(_first_moment(rates), pts, 1)[1:]


def _weighted_integrals(rates, knots, sub):
    """Cumulative log M, Gamma and the integral of g''(1)/(2M)."""
    log_m = cumulative_gl(_first_moment(rates), knots, sub)
    cache = {}

    def moments(x):
        key = x.tobytes()
        if key not in cache:
            mom = rates.pseudo_moments(x, 2)
            cache[key] = (mom, np.exp(-_log_mean_at(rates, x)))
        return cache[key]

    def gamma_integrand(x):
        mom, inv_m = moments(x)
        return mom[:, 1] * inv_m / 2

    def g2_integrand(x):
        mom, inv_m = moments(x)
        return (mom[:, 1] + mom[:, 0]) * inv_m / 2

    gamma = cumulative_gl(gamma_integrand, knots, sub)
    g2 = cumulative_gl(g2_integrand, knots, sub)
    return log_m, gamma, g2


def _integrals(rates, knots):
    knots = np.asarray(knots, dtype=float)
    tol = QUAD_TOL * max(1.0, float(knots[-1]))
    return adaptive_cumulative(lambda p, sub: _weighted_integrals(rates, p, sub), knots, tol)


def mean_and_gamma(rates, grid):
    """M(t) = exp(int E X_s ds) and Gamma(t) = int E(X_s^2)/(2 M(s)) ds on the grid."""
    t = grid.array
    log_m, gamma, _ = _integrals(rates, t)
    m = np.exp(log_m)
    return CurveTable("t", t, {"M": m, "logM": log_m, "Gamma": gamma, "MGamma": m * gamma})


def gamma_identity_residual(rates, t, grid=None):
    """``|int_0^t g_s''(1)/(2M) ds - (Gamma(t) - 1/(2M(t)) + 1/2)|``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    knots = _as_grid(grid, t).up_to(t)
    log_m, gamma, g2 = _integrals(rates, knots)
    rhs = gamma[-1] - math.exp(-log_m[-1]) / 2 + 0.5
    return abs(g2[-1] - rhs)


# -- moments ---------------------------------------------------------------------


def _moment_matrices(rates, R):
    rows, cols, js = [], [], []
    for r in range(1, R + 1):
        for j in range(1, r + 1):
            rows.append(r - 1)
            cols.append(r - j)
            js.append(j)
    rows, cols, js = map(np.array, (rows, cols, js))
    coef = comb(rows + 1, js)

    def at(times):
        ex = rates.pseudo_moments(times, R)
        A = np.zeros((len(times), R, R))
        A[:, rows, cols] = coef * ex[:, js - 1]
        return A

    return at


def moment_curves(rates, grid, R):
    """Raw moments M_1..M_R of Z_t (Z_0 = 1) from the triangular linear ODE system."""
    if not 1 <= R <= MAX_ORDER:
        raise ValueError(f"moment order must lie in 1..{MAX_ORDER}")
    knots = grid.array
    at = _moment_matrices(rates, R)
    values, substeps = halving(lambda n: rk4_linear(at, np.ones(R), knots, n), SOLVER_TOL)
    table = CurveTable("t", knots, {f"M_{r}": values[:, r - 1] for r in range(1, R + 1)})
    table.meta["substeps"] = substeps
    return table


# -- backward survival sweep --------------------------------------------------------


class _Stage:
    """Rates evaluated once at every RK4 stage time of a sweep."""

    def __init__(self, rates, knots, substeps, with_mean):
        self.steps = substep_times(knots, substeps)
        pts = np.empty(2 * len(self.steps) - 1)
        pts[0::2] = self.steps
        pts[1::2] = (self.steps[:-1] + self.steps[1:]) / 2
        self.points = pts
        taylor = rates.taylor_at_one(pts)  # columns j = 0..K+1
        self.ex = taylor[:, 1]
        self.high = taylor[:, 2:]  # g^(j)(1)/j!, j >= 2
        j = np.arange(2, taylor.shape[1])
        self.second = self.high * (j * (j - 1))
        self.second_one = self.second.sum(axis=1)
        if with_mean:
            self.inv_m = np.exp(-cumulative_gl(_first_moment(rates), pts, 1))
        else:
            self.inv_m = np.ones(len(pts))

    def deriv(self, i, phi):
        """Derivatives in s of (phi, J_low, J_up, J_cm) at stage point ``i``."""
        neg = -phi
        q = np.zeros_like(phi)
        g2 = np.zeros_like(phi)
        hi = self.high[i]
        sec = self.second[i]
        for c, d in zip(hi[::-1], sec[::-1]):
            q = q * neg + c
            g2 = g2 * neg + d
        dphi = -phi * self.ex[i] + phi * phi * q
        w = self.inv_m[i]
        return np.stack([dphi, np.full_like(phi, -self.second_one[i] * w / 2), -g2 * w / 2, -q * w])


def _sweep(rates, knots, target_knots, substeps, with_mean=True, record=False):
    """Integrate backward from every target knot to ``knots[0]`` in one pass.

    Returns the state ``(phi, J_low, J_up, J_cm)`` at ``knots[0]`` for each
    target, and optionally phi at every knot for the last target.
    """
    stage = _Stage(rates, knots, substeps, with_mean)
    targets = np.asarray(target_knots)
    order = np.argsort(-targets, kind="stable")
    start_step = targets[order] * substeps
    n_steps = len(stage.steps) - 1
    y = np.zeros((4, len(targets)))
    y[0] = 1.0
    active = 0
    trace = [1.0] if record else None
    escaped = 0.0
    for i in range(n_steps - 1, -1, -1):
        while active < len(targets) and start_step[active] >= i + 1:
            active += 1
        if active == 0:
            continue
        h = -(stage.steps[i + 1] - stage.steps[i])
        top, mid, bot = 2 * i + 2, 2 * i + 1, 2 * i
        cur = y[:, :active]
        k1 = stage.deriv(top, cur[0])
        k2 = stage.deriv(mid, cur[0] + 0.5 * h * k1[0])
        k3 = stage.deriv(mid, cur[0] + 0.5 * h * k2[0])
        k4 = stage.deriv(bot, cur[0] + h * k3[0])
        cur = cur + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        phi = cur[0]
        over = np.maximum(phi - 1.0, -phi)
        if np.any(over > DOMAIN_TOL):
            escaped = max(escaped, float(over.max()))
        if np.any(over > 0):
            cur[0] = np.clip(phi, 0.0, 1.0)
        y[:, :active] = cur
        if record and i % substeps == 0:
            trace.append(float(y[0, active - 1]))
    if escaped:
        warnings.warn(DomainEscape(f"survival probability left [0, 1] by {escaped:.3g}; clipped"), stacklevel=3)
    out = np.empty_like(y)
    out[:, order] = y
    if record:
        return out, np.array(trace[::-1])
    return out


def _converged_sweep(rates, knots, target_knots, with_mean=True, record=False):
    def run(n):
        res = _sweep(rates, knots, target_knots, n, with_mean, record)
        return res if not record else (res[0], res[1])

    result, substeps = halving(run, SOLVER_TOL)
    return result, substeps


@dataclass(frozen=True)
class SurvivalSlice:
    target: float
    s: np.ndarray
    values: np.ndarray

    def to_table(self):
        return CurveTable("s", self.s, {"phi": self.values}, {"target": self.target})


def survival_backward(rates, s, t, grid_step=1.0):
    """phi(s, t) = P(Z_t != 0 | Z_s = 1)."""
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if s == t:
        return 1.0
    n = max(1, math.ceil((t - s) / grid_step))
    knots = s + (t - s) * np.arange(n + 1) / n
    knots[-1] = t
    (y, _), _ = _converged_sweep(rates, knots, [n], with_mean=False, record=True)
    return float(y[0, 0])


def survival_slice(rates, t, grid):
    """phi(s, t) for every grid knot s <= t in one backward sweep."""
    knots = grid.up_to(t)
    if len(knots) == 1:
        return SurvivalSlice(float(t), knots, np.ones(1))
    (_, trace), _ = _converged_sweep(rates, knots, [len(knots) - 1], with_mean=False, record=True)
    return SurvivalSlice(float(t), knots, trace)


def survival_curve(rates, grid):
    """phi(t) = phi(0, t) at every grid knot."""
    knots = grid.array
    y, _ = _converged_sweep(rates, knots, np.arange(len(knots)), with_mean=False)
    return y[0]


def _bounds_from_state(y, inv_m_t):
    with np.errstate(divide="ignore"):
        lower = 1.0 / (inv_m_t + y[1])
        upper = 1.0 / (inv_m_t + y[2])
        cm = 1.0 / (inv_m_t + y[3])
    return lower, upper, cm


def survival_bracket(rates, t, grid=None):
    """Second-order bracket for phi(t) next to the exact integral identity.

    ``bracket_low`` uses g''(1) and ``bracket_high`` uses g''(1 - phi(s,t)); the
    identity value ``identity_phi`` must equal phi(t) up to solver error.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return {"t": 0.0, "phi": 1.0, "bracket_low": 1.0, "bracket_high": 1.0, "identity_phi": 1.0,
                "identity_residual": 0.0, "M": 1.0}
    knots = _as_grid(grid, t).up_to(t)
    y, _ = _converged_sweep(rates, knots, [len(knots) - 1])
    log_m = _integrals(rates, knots)[0][-1]
    inv_m = math.exp(-log_m)
    lower, upper, cm = (float(v[0]) for v in _bounds_from_state(y, inv_m))
    phi = float(y[0, 0])
    if lower > upper * (1 + 1e-12):
        log.info("bracket order failed at t=%g: lower %.17g > upper %.17g", t, lower, upper)
    return {
        "t": float(t),
        "phi": phi,
        "bracket_low": lower,
        "bracket_high": upper,
        "identity_phi": cm,
        "identity_residual": abs(phi - cm),
        "M": math.exp(log_m),
    }


def sandwich_curve(rates, grid):
    """Bracket and identity values for every grid knot as a target, in one sweep."""
    knots = grid.array
    targets = np.arange(1, len(knots))
    y, _ = _converged_sweep(rates, knots, targets)
    inv_m = np.exp(-_integrals(rates, knots)[0][1:])
    lower, upper, cm = _bounds_from_state(y, inv_m)
    t = knots[1:]
    return CurveTable("t", t, {
        "phi": y[0], "bracket_low": lower, "bracket_high": upper, "identity_phi": cm,
        "identity_residual": np.abs(y[0] - cm),
    })


# -- master equation ---------------------------------------------------------------


def _generator_pieces(jumps, cap):
    """Sparse matrices A_k with dp/dt = sum_k b_k(t) A_k p on {0..cap} plus a leak state."""
    size = cap + 2
    z = np.arange(1, cap + 1)
    pieces = []
    for k in jumps:
        dest = z + k
        dest = np.where(dest > cap, cap + 1, dest)
        rows = np.concatenate([z, dest])
        cols = np.concatenate([z, z])
        vals = np.concatenate([-z.astype(float), z.astype(float)])
        pieces.append(sparse.csr_matrix((vals, (rows, cols)), shape=(size, size)))
    return pieces


def master_equation_oracle(rates, t, cap=400, times=None):
    """Distribution of Z_t (Z_0 = 1) from the forward equations truncated at ``cap``.

    Mass that would jump above ``cap`` is absorbed into a leak counter.
    Returns ``(probs, leak)``; with ``times`` given, lists of both.
    """
    if not 1 <= cap <= MAX_CAP:
        raise ValueError(f"cap must lie in 1..{MAX_CAP}")
    if t < 0:
        raise ValueError("t must be >= 0")
    pieces = _generator_pieces(rates.jumps, cap)
    p0 = np.zeros(cap + 2)
    p0[1] = 1.0
    eval_times = [float(t)] if times is None else sorted(float(x) for x in times)

    def A(s):
        b = rates.rate_matrix([s])[0]
        out = pieces[0] * b[0]
        for bk, piece in zip(b[1:], pieces[1:]):
            out = out + piece * bk
        return out

    if eval_times[-1] == 0:
        sol_y = np.repeat(p0[:, None], len(eval_times), axis=1)
    else:
        sol = solve_ivp(lambda s, p: A(s) @ p, (0.0, eval_times[-1]), p0, method="BDF",
                        jac=lambda s, p: A(s), t_eval=eval_times, rtol=1e-10, atol=1e-14)
        if not sol.success:
            raise RuntimeError(f"master equation solver failed: {sol.message}")
        sol_y = sol.y
    results = []
    for col in range(sol_y.shape[1]):
        probs = np.clip(sol_y[: cap + 1, col], 0.0, None)
        leak = float(max(sol_y[cap + 1, col], 0.0))
        results.append((probs, leak))
    worst = max(leak for _, leak in results)
    if worst > 1e-6:
        warnings.warn(TruncationWarning(f"leaked mass {worst:.3g} above cap {cap}"), stacklevel=2)
    if times is None:
        return results[0]
    return [r[0] for r in results], [r[1] for r in results]


# -- limit diagnostics -------------------------------------------------------------


def continuous_curves(rates, grid, R=3):
    """M, Gamma, phi, M_r and the normalised limit columns on the grid."""
    base = mean_and_gamma(rates, grid)
    moments = moment_curves(rates, grid, R)
    phi = survival_curve(rates, grid)
    t = base.index
    m = base["M"]
    gamma = base["Gamma"]
    table = CurveTable("t", t, dict(base.columns))
    table.add("phi", phi)
    table.add("phiGamma", phi * gamma)
    for r in range(2, R + 1):
        table.add(f"M_{r}", moments[f"M_{r}"])
    degenerate = not np.any(gamma > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        for r in range(2, R + 1):
            ratio = moments[f"M_{r}"] / (m**r * gamma ** (r - 1))
            table.add(f"ratio_{r}", np.where(gamma > 0, ratio, np.nan))
    table.add("EX", rates.pseudo_moments(t, 1)[:, 0])
    if degenerate:
        table.add("phiGamma", np.full(len(t), np.nan))
    table.meta["status"] = "NotApplicable" if degenerate else "ok"
    return table


def limit_diagnostics_continuous(rates, grid, R=3):
    """phi Gamma, M Gamma, M_r / (M^r Gamma^(r-1)) and E(X_t) on the grid.

    When Gamma vanishes identically the ratio columns are NaN and
    ``meta["status"]`` is ``"NotApplicable"``.
    """
    table = continuous_curves(rates, grid, R)
    keep = ["phi", "M", "Gamma", "phiGamma", "MGamma", *[f"ratio_{r}" for r in range(2, R + 1)], "EX"]
    return CurveTable("t", table.index, {k: table[k] for k in keep}, dict(table.meta))
