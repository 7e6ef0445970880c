"""Quadrature and fixed-step Runge-Kutta helpers used by the continuous engine."""

from __future__ import annotations

import numpy as np

from .errors import QuadratureFailure, StepUnderflow

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
MAX_SUBDIVISIONS = 1 << 12
MAX_SUBSTEPS = 1 << 16


def cumulative_gl(f, points, sub=1):
    """Cumulative integral of vectorised ``f`` from ``points[0]`` to each point.

    Each gap is split into ``sub`` equal pieces and integrated with 8-point
    Gauss-Legendre.
    """
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return np.zeros(len(points))
    a = points[:-1]
    width = np.diff(points) / sub
    starts = a[:, None] + width[:, None] * np.arange(sub)[None, :]
    half = width[:, None, None] / 2
    nodes = starts[:, :, None] + half * (_GL_NODES[None, None, :] + 1.0)
    values = np.asarray(f(nodes.ravel()), dtype=float).reshape(nodes.shape)
    gaps = (values * _GL_WEIGHTS).sum(axis=2) * half[:, :, 0]
    return np.concatenate([[0.0], np.cumsum(gaps.sum(axis=1))])


def adaptive_cumulative(integrate, points, tol, sub=1):
    """Double the subdivision of ``integrate(points, sub)`` until results agree to ``tol``.

    ``integrate`` returns an array (or tuple of arrays) of cumulative values;
    the finer result is returned.  The error is absolute below magnitude 1
    and relative above it.
    """
    coarse = integrate(points, sub)
    while True:
        sub *= 2
        fine = integrate(points, sub)
        err = max(_scaled_gap(c, f) for c, f in _pairs(coarse, fine))
        if err < tol:
            return fine
        if sub >= MAX_SUBDIVISIONS:
            raise QuadratureFailure("quadrature did not converge", err)
        coarse = fine


def _scaled_gap(c, f):
    c = np.asarray(c, dtype=float)
    f = np.asarray(f, dtype=float)
    if c.size == 0:
        return 0.0
    return float(np.max(np.abs(c - f) / np.maximum(1.0, np.abs(f))))


def _pairs(a, b):
    if isinstance(a, tuple):
        return zip(a, b)
    return [(a, b)]


def substep_times(knots, substeps):
    """Step boundaries: every knot interval cut into ``substeps`` equal steps."""
    knots = np.asarray(knots, dtype=float)
    frac = np.arange(substeps) / substeps
    inner = knots[:-1, None] + np.diff(knots)[:, None] * frac[None, :]
    return np.concatenate([inner.ravel(), knots[-1:]])


def rk4_linear(matrices_at, y0, knots, substeps):
    """Integrate ``y' = A(t) y`` with classical RK4; values at the knots.

    ``matrices_at(times)`` returns A at an array of times, shape (len, d, d).
    """
    steps = substep_times(knots, substeps)
    mids = (steps[:-1] + steps[1:]) / 2
    A_steps = matrices_at(steps)
    A_mids = matrices_at(mids)
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    for i in range(len(steps) - 1):
        h = steps[i + 1] - steps[i]
        k1 = A_steps[i] @ y
        k2 = A_mids[i] @ (y + 0.5 * h * k1)
        k3 = A_mids[i] @ (y + 0.5 * h * k2)
        k4 = A_steps[i + 1] @ (y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (i + 1) % substeps == 0:
            out.append(y.copy())
    return np.array(out)


def halving(run, tol, substeps=4, floor=1e-300):
    """Re-run ``run(substeps)`` with doubled substeps until relative change < ``tol``.

    Returns ``(result, substeps)`` for the finer run.
    """
    coarse = run(substeps)
    while True:
        substeps *= 2
        if substeps > MAX_SUBSTEPS:
            raise StepUnderflow(f"no convergence to relative {tol:g} with {substeps // 2} substeps per interval")
        fine = run(substeps)
        worst = 0.0
        for c, f in _pairs(coarse, fine):
            c = np.asarray(c, dtype=float)
            f = np.asarray(f, dtype=float)
            scale = np.maximum(np.abs(f), floor)
            with np.errstate(invalid="ignore"):
                rel = np.abs(c - f) / scale
            rel = np.where(np.abs(c - f) <= floor, 0.0, rel)
            worst = max(worst, float(np.nanmax(rel)) if rel.size else 0.0)
        if worst < tol:
            return fine, substeps
        coarse = fine
