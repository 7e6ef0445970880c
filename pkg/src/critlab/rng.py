"""Counter-based uniforms: each draw is a pure function of (seed, stream, counter).

Replicates get their own stream, so results do not depend on how replicates
are batched or spread over threads.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM = np.uint64(0xD1B54A32D192ED03)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_UNIT = 2.0**-53


def mix64(z):
    """SplitMix64 finaliser on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_keys(seed, streams):
    """One 64-bit key per stream index, derived from the master seed."""
    seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    streams = np.asarray(streams, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = mix64(np.array([seed + _GOLDEN], dtype=np.uint64))[0]
        return mix64(base ^ (streams * _STREAM + _GOLDEN))


def uniforms(keys, counters):
    """Uniform draws in (0, 1) for matching arrays of stream keys and counters."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = mix64(keys + counters * _GOLDEN)
    return ((bits >> _S11).astype(np.float64) + 0.5) * _UNIT
