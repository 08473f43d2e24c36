"""Photon-pair source: multimode thermal pair statistics with a pump-quadratic
mean and optional uncorrelated (Raman-like) noise photons in each arm.

Each Schmidt mode k carries a Bose-Einstein pair number with mean mu * w_k,
the same count going to signal and idler.  Raman photons are Poisson and
independent per arm.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng
from .errors import ConvergenceError

_WEIGHT_SUM_TOL = 1e-12


def mean_pairs_from_pump(P_a, s1):
    """Mean pair number per pulse, ``s1 * P_a**2``."""
    if P_a < 0 or s1 < 0:
        raise ValueError(f"pump and gain must be non-negative (P_a={P_a}, s1={s1})")
    return s1 * P_a**2


def effective_mode_number(weights):
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w**2)


def _geometric_weights(r, n_modes):
    w = r ** np.arange(n_modes, dtype=float)
    return w / w.sum()


def _as_tuple(w):
    return tuple(float(v) for v in w)


def schmidt_weights_for_target_K(K_target, n_modes, tol=1e-10, max_steps=200):
    """Geometric-decay Schmidt weights ``w_k ~ r**k`` whose effective mode
    number ``1 / sum(w**2)`` equals `K_target`.

    K(r) rises monotonically from 1 at r = 0 to `n_modes` at r = 1, so r is
    found by bisection.
    """
    n_modes = int(n_modes)
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if not 1.0 <= K_target <= n_modes:
        raise ValueError(f"K_target={K_target} outside [1, {n_modes}]")
    if K_target == 1.0:
        return _as_tuple(_geometric_weights(0.0, n_modes))
    if K_target == n_modes:
        return _as_tuple(np.full(n_modes, 1.0 / n_modes))
    lo, hi = 0.0, 1.0
    for _ in range(max_steps):
        r = 0.5 * (lo + hi)
        w = _geometric_weights(r, n_modes)
        K = effective_mode_number(w)
        if abs(K - K_target) < tol:
            return _as_tuple(w)
        if K < K_target:
            lo = r
        else:
            hi = r
    raise ConvergenceError(f"no geometric weights reach K={K_target} in {max_steps} steps")


@dataclass(frozen=True)
class SourceParams:
    s1: float
    P_a: float
    schmidt_weights: tuple = (1.0,)
    raman_mean_s: float = 0.0
    raman_mean_i: float = 0.0
    f_p: float = 37e6
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "schmidt_weights",
                           tuple(float(w) for w in self.schmidt_weights))
        for name in ("s1", "P_a", "raman_mean_s", "raman_mean_i"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.f_p > 0:
            raise ValueError(f"f_p must be > 0, got {self.f_p}")
        w = np.asarray(self.schmidt_weights)
        if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError("schmidt_weights must be non-negative and sum to 1")

    @classmethod
    def from_mean_pairs(cls, mu, s1=2.5e-3, **kwargs):
        """Source whose pump is set so that the mean pair number equals `mu`."""
        return cls(s1=s1, P_a=float(np.sqrt(mu / s1)), **kwargs)

    @property
    def mu(self):
        return mean_pairs_from_pump(self.P_a, self.s1)

    @property
    def K(self):
        return effective_mode_number(self.schmidt_weights)

    @property
    def mode_means(self):
        return self.mu * np.asarray(self.schmidt_weights)


@dataclass(frozen=True)
class PairSample:
    n_signal: int
    n_idler: int
    per_mode_pairs: tuple


@dataclass(frozen=True)
class PairBatch:
    """Column form of consecutive PairSamples starting at ``start``."""
    start: int
    n_signal: np.ndarray
    n_idler: np.ndarray
    per_mode_pairs: np.ndarray

    def __len__(self):
        return self.n_signal.shape[0]

    def __getitem__(self, i):
        return PairSample(int(self.n_signal[i]), int(self.n_idler[i]),
                          tuple(int(v) for v in self.per_mode_pairs[i]))


@njit(cache=True)
def draw_pairs(seed, index, mode_means, raman_s, raman_i, per_mode):
    """Pair sample for one pulse; slot k is mode k, then signal and idler
    Raman.  Fills `per_mode` and returns ``(n_signal, n_idler)``."""
    n_modes = mode_means.shape[0]
    total = 0
    cur = -1
    u = (0.0, 0.0, 0.0, 0.0)
    for k in range(n_modes):
        if mode_means[k] <= 0.0:
            per_mode[k] = 0
            continue
        b = k // 4
        if b != cur:
            u = rng.block_uniforms(seed, rng.SOURCE, index, b)
            cur = b
        n = rng.geometric_icdf(u[k % 4], mode_means[k])
        per_mode[k] = n
        total += n
    n_s = total
    n_i = total
    if raman_s > 0.0:
        n_s += rng.poisson_icdf(rng.uniform(seed, rng.SOURCE, index, n_modes), raman_s)
    if raman_i > 0.0:
        n_i += rng.poisson_icdf(rng.uniform(seed, rng.SOURCE, index, n_modes + 1), raman_i)
    return n_s, n_i


@njit(cache=True)
def _draw_batch(seed, start, count, mode_means, raman_s, raman_i, n_s, n_i, per_mode):
    for r in range(count):
        n_s[r], n_i[r] = draw_pairs(seed, np.uint64(start + r), mode_means,
                                    raman_s, raman_i, per_mode[r])


def sample_pulses(params, start, count, seed):
    """Pair samples for pulses ``start .. start+count-1``."""
    if start < 0 or count < 0:
        raise ValueError("pulse indices must be non-negative")
    seed = rng.check_seed(seed)
    means = np.ascontiguousarray(params.mode_means, dtype=float)
    n_s = np.empty(count, dtype=np.int64)
    n_i = np.empty(count, dtype=np.int64)
    per_mode = np.empty((count, means.shape[0]), dtype=np.int64)
    _draw_batch(np.uint64(seed), start, count, means, params.raman_mean_s,
                params.raman_mean_i, n_s, n_i, per_mode)
    return PairBatch(start, n_s, n_i, per_mode)


def sample_pulse(params, pulse_index, seed):
    return sample_pulses(params, pulse_index, 1, seed)[0]


def photon_number_g2(n):
    """Normalized factorial moment ``<n(n-1)> / <n>**2`` of a count sample."""
    n = np.asarray(n, dtype=float)
    m = n.mean()
    return float(np.mean(n * (n - 1)) / m**2)
