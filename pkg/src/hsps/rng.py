"""Counter-based random numbers keyed by ``(seed, stream, pulse_index, slot)``.

Every random quantity in the simulation is a pure function of its coordinates,
so a pulse can be regenerated in isolation and any split of a pulse range
across workers reproduces the serial result bit for bit.

The generator is Philox4x32-10 (Salmon et al., Random123).  NumPy ships a
Philox bit generator, but only as a sequential stream; here the counter is
addressed directly from inside jitted loops.

Counter layout: ``(index_lo, index_hi, block, stream)``; key: ``(seed_lo,
seed_hi)``.  Each block yields four 32-bit words, i.e. four uniforms, so slot
``s`` lives in block ``s // 4``, word ``s % 4``.
"""

import numpy as np
from numba import njit

# stream identifiers; distinct streams never share counters
SOURCE = 1
DETECT = 2
QUADRATURE = 3
WAVEFORM = 4

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TO_UNIT = 2.0 ** -32

MAX_SEED = 2**64 - 1


@njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on a 4x32-bit counter with a 2x32-bit key."""
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0 = (hi1 ^ c1 ^ k0) & _MASK
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK
        c3 = lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(cache=True)
def block_uniforms(seed, stream, index, block):
    """Four uniforms in (0, 1) for one counter block."""
    s = np.uint64(seed)
    i = np.uint64(index)
    w0, w1, w2, w3 = philox4x32(i & _MASK, i >> _S32, np.uint64(block),
                                 np.uint64(stream), s & _MASK, s >> _S32)
    return ((np.float64(w0) + 0.5) * _TO_UNIT,
            (np.float64(w1) + 0.5) * _TO_UNIT,
            (np.float64(w2) + 0.5) * _TO_UNIT,
            (np.float64(w3) + 0.5) * _TO_UNIT)


@njit(cache=True)
def uniform(seed, stream, index, slot):
    u = block_uniforms(seed, stream, index, slot // 4)
    return u[slot % 4]


@njit(cache=True)
def _fill_uniforms(seed, stream, indices, n_slots, out):
    n_blocks = (n_slots + 3) // 4
    for r in range(indices.shape[0]):
        for b in range(n_blocks):
            u = block_uniforms(seed, stream, indices[r], b)
            for j in range(4):
                s = 4 * b + j
                if s < n_slots:
                    out[r, s] = u[j]


@njit(cache=True)
def box_muller(u1, u2):
    """Two independent standard normals from two uniforms in (0, 1)."""
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    return rad * np.cos(ang), rad * np.sin(ang)


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


def uniforms(seed, stream, indices, n_slots):
    """Array of shape ``(len(indices), n_slots)``; row r holds slots 0..n_slots-1
    of pulse ``indices[r]``."""
    seed = check_seed(seed)
    idx = np.ascontiguousarray(np.atleast_1d(indices), dtype=np.uint64)
    out = np.empty((idx.shape[0], n_slots))
    _fill_uniforms(np.uint64(seed), stream, idx, n_slots, out)
    return out


def derive_seed(seed, *tags):
    """Deterministic child seed for a labelled sub-experiment (pump level,
    repeat number, ...)."""
    ss = np.random.SeedSequence([check_seed(seed), *[int(t) for t in tags]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# Inverse-CDF samplers: one uniform per variate, so slot layouts stay fixed.
# pmf recursions run in log space; leading terms that underflow contribute 0.

@njit(cache=True)
def geometric_icdf(u, mean):
    """Bose-Einstein count with the given mean, P(n >= j) = q**j."""
    if mean <= 0.0:
        return 0
    q = mean / (1.0 + mean)
    return int(np.floor(np.log(u) / np.log(q)))


@njit(cache=True)
def poisson_icdf(u, mean):
    if mean <= 0.0:
        return 0
    logp = -mean
    cdf = np.exp(logp)
    k = 0
    lm = np.log(mean)
    while u > cdf:
        k += 1
        logp += lm - np.log(k)
        p = np.exp(logp)
        cdf += p
        if p == 0.0 and k > mean:
            break
    return k


@njit(cache=True)
def binomial_icdf(u, n, p):
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    logp = n * np.log1p(-p)
    odds = np.log(p) - np.log1p(-p)
    cdf = np.exp(logp)
    k = 0
    while u > cdf and k < n:
        logp += np.log(n - k) - np.log(k + 1) + odds
        k += 1
        cdf += np.exp(logp)
    return k
