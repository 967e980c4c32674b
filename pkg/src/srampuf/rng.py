"""Keyed counter-based random streams for reproducible Monte Carlo.

Every random quantity in this package (threshold-voltage deviations, thermal
noise samples, random cell selections) is drawn from a SplitMix64 stream
addressed by (master_seed, purpose, cell_id, trial, counter).  SplitMix64 is
the 64-bit mix/finalize generator of Steele, Lea and Flood; draw ``i`` of a
stream with key ``k`` is ``finalize(k + (i + 1) * GOLDEN)``, which is the
standard SplitMix64 sequence seeded with ``k``.

Because a draw is a pure function of (key, counter), results are independent
of evaluation order, chunking and thread scheduling: regenerating any subset
of a population or any single noise trial is bit-identical to generating it
inside a full run.

Key layout (one uint64): ``purpose << 56 | cell_id << 24 | trial``, mixed
with the master seed.  The packing is injective for ``purpose < 2**8``,
``cell_id < 2**32`` and ``trial < 2**24``; those bounds are enforced.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)

# Purpose tags keep the deviation-sampling, thermal-noise and selection
# streams of one master seed disjoint by construction.
PURPOSE_SAMPLING = 1
PURPOSE_NOISE = 2
PURPOSE_SELECTION = 3

_MAX_PURPOSE = 2**8
_MAX_CELL_ID = 2**32
_MAX_TRIAL = 2**24


def _finalize(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """SplitMix64 output function (a bijection on uint64)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX_1
    z = (z ^ (z >> np.uint64(27))) * _MIX_2
    return z ^ (z >> np.uint64(31))


def stream_key(master_seed: int, purpose: int, cell_id=0, trial=0):
    """Derive the uint64 stream key for (master_seed, purpose, cell, trial).

    ``cell_id`` and ``trial`` may be arrays; the result broadcasts.  Distinct
    (purpose, cell_id, trial) triples map to distinct keys for a fixed seed.
    """
    if not 0 <= purpose < _MAX_PURPOSE:
        raise ValueError(f"purpose tag {purpose} outside [0, {_MAX_PURPOSE})")
    cell = np.asarray(cell_id, dtype=np.uint64)
    tr = np.asarray(trial, dtype=np.uint64)
    if np.any(cell >= _MAX_CELL_ID):
        raise ValueError(f"cell_id must be < {_MAX_CELL_ID}")
    if np.any(tr >= _MAX_TRIAL):
        raise ValueError(f"trial must be < {_MAX_TRIAL}")
    packed = (np.uint64(purpose) << np.uint64(56)) | (cell << np.uint64(24)) | tr
    seed_mix = _finalize(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF))
    out = _finalize(packed ^ seed_mix)
    return out if out.ndim else out[()]


def raw_uint64(key, counter):
    """Draw ``counter`` of stream ``key`` as a raw uint64 (broadcasts)."""
    k = np.asarray(key, dtype=np.uint64)
    c = np.asarray(counter, dtype=np.uint64)
    return _finalize(k + (c + np.uint64(1)) * _GOLDEN)


def uniform(key, counter):
    """Uniform draw on the open interval (0, 1), 53-bit resolution."""
    bits = raw_uint64(key, counter) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normal(key, counter):
    """Standard normal draw via the inverse CDF; exact in distribution."""
    return ndtri(uniform(key, counter))


def permutation(key, n: int) -> np.ndarray:
    """A uniform permutation of range(n), determined entirely by ``key``."""
    return np.argsort(raw_uint64(key, np.arange(n)), kind="stable")
