"""Seeded simulation of both process types and survivor-conditioned scaling.

Every random number is drawn from :mod:`critlab.rng` with the replicate
index as stream, so a replicate's path is a pure function of
``(master_seed, replicate)`` regardless of batching or thread count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import bdtr, gammaln, ndtri

from .errors import CapExceeded, DegenerateMean, EnvelopeViolation, NoSurvivors
from .model import OffspringSchedule, RateSchedule
from .rng import stream_keys, uniforms

BLOCK = 1 << 15
ENVELOPE_LIFETIME = 1.0
ENVELOPE_GRID_STEP = 1e-3
ENVELOPE_SAFETY = 1.001


@dataclass(frozen=True)
class SimConfig:
    master_seed: int
    replicates: int
    checkpoints: tuple
    population_cap: float = 1e8
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        cps = tuple(self.checkpoints)
        if not cps:
            raise ValueError("at least one checkpoint is required")
        if any(b <= a for a, b in zip(cps, cps[1:])) or cps[0] < 0:
            raise ValueError("checkpoints must be nonnegative and strictly increasing")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "checkpoints", cps)


@dataclass
class SampleBatch:
    """Populations at each checkpoint (rows) for every kept replicate (columns)."""

    kind: str
    checkpoints: np.ndarray
    Z: np.ndarray
    replicate_ids: np.ndarray
    excluded: int = 0
    normalizers: dict = field(default_factory=dict)

    @property
    def survivors(self):
        return self.Z != 0

    @property
    def replicates(self):
        return self.Z.shape[1]

    def row(self, checkpoint):
        hits = np.nonzero(np.isclose(self.checkpoints, checkpoint, rtol=0, atol=1e-12))[0]
        if len(hits) == 0:
            raise KeyError(f"no checkpoint {checkpoint}")
        return int(hits[0])

    def survivor_fraction(self, checkpoint):
        return float(self.survivors[self.row(checkpoint)].mean())

    def summary(self):
        rows = []
        for i, c in enumerate(self.checkpoints):
            z = self.Z[i]
            alive = z[z != 0]
            rows.append({
                "checkpoint": float(c),
                "survivor_fraction": float(np.mean(z != 0)),
                "survivors": int(alive.size),
                "mean": float(z.mean()),
                "conditioned_mean": float(alive.mean()) if alive.size else math.nan,
                "normalizer": self.normalizers.get(float(c), math.nan),
            })
        return rows


def _merge(kind, checkpoints, parts, ids):
    Z = np.concatenate([p[0] for p in parts], axis=1)
    keep = np.concatenate([p[1] for p in parts])
    excluded = int((~keep).sum())
    if excluded:
        warnings.warn(CapExceeded(f"{excluded} replicate(s) exceeded the population cap and were excluded"),
                      stacklevel=3)
    return SampleBatch(kind, np.asarray(checkpoints, dtype=float), Z[:, keep], ids[keep], excluded)


def _run_blocks(fn, config):
    ids = np.arange(config.replicates, dtype=np.int64)
    blocks = [ids[i:i + BLOCK] for i in range(0, len(ids), BLOCK)]
    if config.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(fn, blocks))
    else:
        parts = [fn(b) for b in blocks]
    return parts, ids


# -- discrete ------------------------------------------------------------------------


def binomial_inverse(u, n, p):
    """Smallest k with P(Binom(n, p) <= k) >= u, elementwise.

    Starts from a normal-quantile guess and walks with the pmf recurrence, so
    only one CDF evaluation per element is needed.
    """
    u = np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=np.int64)
    if p <= 0.0:
        return np.zeros_like(n)
    if p >= 1.0:
        return n.copy()
    q = 1.0 - p
    nf = n.astype(float)
    guess = np.floor(nf * p + np.sqrt(nf * p * q) * ndtri(u))
    k = np.clip(guess, 0, nf).astype(np.int64)
    F = bdtr(k, n, p)
    logpk = gammaln(nf + 1) - gammaln(k + 1.0) - gammaln(nf - k + 1) + k * math.log(p) + (nf - k) * math.log(q)
    pk = np.exp(logpk)
    odds = p / q
    active = np.ones(k.shape, dtype=bool)
    while True:
        down = active & (F - pk >= u) & (k > 0)
        up = active & (F < u) & (k < n)
        if not (down.any() or up.any()):
            break
        if down.any():
            F[down] -= pk[down]
            kd = k[down]
            pk[down] *= kd / ((n[down] - kd + 1) * odds)
            k[down] = kd - 1
        if up.any():
            ku = k[up]
            pk[up] *= (n[up] - ku) / (ku + 1) * odds
            k[up] = ku + 1
            F[up] += pk[up]
        active = down | up
    return k


def _simulate_discrete_block(laws, checkpoints, seed, cap, ids, generic=False):
    keys = stream_keys(seed, ids)
    reps = len(ids)
    z = np.ones(reps, dtype=np.int64)
    counter = np.zeros(reps, dtype=np.uint64)
    work = np.zeros(reps, dtype=float)
    ok = np.ones(reps, dtype=bool)
    out = np.zeros((len(checkpoints), reps), dtype=np.int64)
    cdfs = np.cumsum(laws, axis=1)
    ci = 0
    for n in range(int(checkpoints[-1]) + 1):
        while ci < len(checkpoints) and checkpoints[ci] == n:
            out[ci] = z
            ci += 1
        if n == checkpoints[-1]:
            break
        live = np.nonzero((z > 0) & ok)[0]
        if live.size == 0:
            continue
        zl = z[live]
        work[live] += zl
        row = laws[n]
        atoms = np.nonzero(row > 0)[0]
        if not generic and atoms.size == 1:
            z[live] = zl * atoms[0]
        elif not generic and atoms.size == 2:
            a, b = int(atoms[0]), int(atoms[1])
            u = uniforms(keys[live], counter[live])
            counter[live] += np.uint64(1)
            hits = binomial_inverse(u, zl, float(row[b]))
            z[live] = a * zl + (b - a) * hits
        else:
            owner = np.repeat(np.arange(live.size), zl)
            start = np.cumsum(zl) - zl
            offset = np.arange(owner.size) - np.repeat(start, zl)
            u = uniforms(keys[live][owner], counter[live][owner] + offset.astype(np.uint64))
            counter[live] += zl.astype(np.uint64)
            kids = np.searchsorted(cdfs[n], u, side="left")
            kids = np.minimum(kids, row.size - 1)
            z[live] = np.bincount(owner, weights=kids, minlength=live.size).astype(np.int64)
        over = work > cap
        if over.any():
            ok &= ~over
            z[over] = 0
    return out, ok


def simulate_discrete(schedule: OffspringSchedule, config: SimConfig, generic=False):
    """Galton-Watson paths from Z_0 = 1, recorded at integer checkpoints.

    Two-atom laws use a binomial split (one uniform per replicate and
    generation); other laws draw one uniform per individual.  ``generic``
    forces the per-individual path.
    """
    cps = np.asarray(config.checkpoints)
    if np.any(cps != np.round(cps)):
        raise ValueError("discrete checkpoints must be generation indices")
    cps = cps.astype(np.int64)
    N = int(cps[-1])
    laws = schedule.table(max(N, 1))

    def block(ids):
        return _simulate_discrete_block(laws, cps, config.master_seed, config.population_cap, ids, generic)

    parts, ids = _run_blocks(block, config)
    return _merge("discrete", cps, parts, ids)


# -- continuous ----------------------------------------------------------------------


def envelopes(rates: RateSchedule, horizon, lifetime=ENVELOPE_LIFETIME, step=ENVELOPE_GRID_STEP):
    """Per-window upper bounds on the total per-capita jump rate."""
    n_win = max(1, math.ceil(horizon / lifetime - 1e-12))
    bounds = np.zeros(n_win)
    per = max(2, int(round(lifetime / step)) + 1)
    for w in range(n_win):
        t = np.linspace(w * lifetime, (w + 1) * lifetime, per)
        bounds[w] = rates.rate_matrix(t).sum(axis=1).max() * ENVELOPE_SAFETY
    return bounds


def _simulate_continuous_block(rates, checkpoints, bounds, seed, cap, ids):
    keys = stream_keys(seed, ids)
    reps = len(ids)
    horizon = float(checkpoints[-1])
    z = np.ones(reps, dtype=np.int64)
    t = np.zeros(reps)
    counter = np.zeros(reps, dtype=np.uint64)
    events = np.zeros(reps, dtype=float)
    ok = np.ones(reps, dtype=bool)
    nxt = np.zeros(reps, dtype=np.int64)  # next checkpoint to record
    out = np.zeros((len(checkpoints), reps), dtype=np.int64)
    jumps = rates.jumps
    cps = np.asarray(checkpoints, dtype=float)

    def record(idx, upto):
        # checkpoints strictly before ``upto`` see the current population
        while idx.size:
            pending = nxt[idx] < len(cps)
            idx, upto = idx[pending], upto[pending]
            hit = cps[np.minimum(nxt[idx], len(cps) - 1)] < upto
            idx, upto = idx[hit], upto[hit]
            out[nxt[idx], idx] = z[idx]
            nxt[idx] += 1

    active = np.arange(reps)
    while active.size:
        ti = t[active]
        zi = z[active]
        win = np.minimum((ti / ENVELOPE_LIFETIME).astype(np.int64), len(bounds) - 1)
        win_end = np.minimum((win + 1) * ENVELOPE_LIFETIME, horizon)
        bbar = bounds[win]
        u = uniforms(keys[active], counter[active])
        with np.errstate(divide="ignore"):
            wait = -np.log(u) / (zi * bbar)
        prop = ti + wait
        expire = prop >= win_end
        counter[active] += np.uint64(1)
        # envelope expiry: jump to window end without an event
        ex = active[expire]
        if ex.size:
            record(ex, win_end[expire])
            t[ex] = win_end[expire]
        ev = active[~expire]
        if ev.size:
            te = prop[~expire]
            record(ev, te)
            b = rates.rate_matrix(te)
            total = b.sum(axis=1)
            bb = bbar[~expire]
            if np.any(total > bb):
                i = int(np.argmax(total - bb))
                raise EnvelopeViolation(f"total rate {total[i]:g} at t={te[i]:g} exceeds envelope {bb[i]:g}")
            u2 = uniforms(keys[ev], counter[ev])
            u3 = uniforms(keys[ev], counter[ev] + np.uint64(1))
            counter[ev] += np.uint64(2)
            accept = u2 * bb < total
            t[ev] = te
            acc = ev[accept]
            if acc.size:
                cum = np.cumsum(b[accept], axis=1)
                pick = (u3[accept] * total[accept])[:, None] < cum
                col = np.argmax(pick, axis=1)
                z[acc] += jumps[col]
                events[acc] += 1
        over = events > cap
        if over.any():
            ok &= ~over
        done = (z[active] == 0) | (t[active] >= horizon) | ~ok[active]
        fin = active[done]
        if fin.size:
            record(fin, np.full(fin.size, np.inf))
        active = active[~done]
    out[:, ~ok] = 0
    return out, ok


def simulate_continuous(rates: RateSchedule, config: SimConfig):
    """Birth-and-death paths from Z_0 = 1 by thinning against a windowed envelope.

    Each window of length one carries a bound on the total per-capita rate
    taken from a dense grid.  Proposals arrive at rate ``Z * bound``; an
    accepted proposal picks its jump in proportion to the current rates.
    """
    cps = np.asarray(config.checkpoints, dtype=float)
    bounds = envelopes(rates, cps[-1]) if cps[-1] > 0 else np.zeros(1)

    def block(ids):
        return _simulate_continuous_block(rates, cps, bounds, config.master_seed, config.population_cap, ids)

    parts, ids = _run_blocks(block, config)
    return _merge("continuous", cps, parts, ids)


# -- normalisation -----------------------------------------------------------------


def exact_normalizers(model, checkpoints):
    """Exact survival probability and E(Z | Z != 0) at each checkpoint."""
    cps = np.asarray(checkpoints, dtype=float)
    if isinstance(model, OffspringSchedule):
        from .pgf import discrete_curves

        N = max(1, int(cps[-1]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateMean)
            curve = discrete_curves(model, N, checkpoints=[int(c) for c in cps])
        # past a zero-mean generation the curve stops: Z = 0 almost surely
        known = set(curve.index.tolist())
        phi = np.array([curve.at(int(c), "phi") if int(c) in known else 0.0 for c in cps])
        m = np.array([curve.at(int(c), "m") if int(c) in known else 0.0 for c in cps])
    else:
        from .bd import TimeGrid, mean_and_gamma, survival_curve

        knots = np.unique(np.concatenate([[0.0], cps]))
        if len(knots) < 2:
            return np.ones(len(cps)), np.ones(len(cps))
        grid = TimeGrid(tuple(knots))
        m_all = mean_and_gamma(model, grid)["M"]
        phi_all = survival_curve(model, grid)
        pos = np.searchsorted(knots, cps)
        phi, m = phi_all[pos], m_all[pos]
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = m / phi
    return phi, np.where(phi > 0, norm, np.nan)


def attach_normalizers(batch, model):
    phi, norm = exact_normalizers(model, batch.checkpoints)
    batch.normalizers = {float(c): float(v) for c, v in zip(batch.checkpoints, norm)}
    batch.exact_phi = {float(c): float(v) for c, v in zip(batch.checkpoints, phi)}
    return batch


def conditioned_scaled_samples(batch, checkpoint):
    """Survivor populations at ``checkpoint`` divided by E(Z | Z != 0)."""
    key = float(checkpoint)
    if key not in batch.normalizers:
        raise KeyError(f"no normalizer attached for checkpoint {checkpoint}")
    z = batch.Z[batch.row(checkpoint)]
    alive = z[z != 0]
    if alive.size == 0:
        raise NoSurvivors(f"no survivors at checkpoint {checkpoint}")
    return alive / batch.normalizers[key]
