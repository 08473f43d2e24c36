"""Threshold-detector simulation of the herald / signal / HBT arms and the
photon-counting estimators built on the resulting tallies.

Two signal-arm layouts are evaluated on every pulse, each with its own random
draws: the direct path (one SPD, heralding-efficiency measurement) and the
HBT path (splitter plus two SPDs, g2 measurement).  Tallies from one layout
never mix with the other, so each behaves as if it had its own run.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np
from numba import njit

from . import rng
from .errors import EstimatorUndefinedError, InconsistentCalibrationWarning
from .pair_source import draw_pairs


def dark_prob_from_rate(dark_cps, f_p):
    """Probability of at least one dark click in a pulse gate of length 1/f_p."""
    return -math.expm1(-dark_cps / f_p)


PAPER_DARK_PROB = dark_prob_from_rate(500.0, 37e6)


@dataclass(frozen=True)
class DetectorParams:
    eta_spd: float = 0.8
    dark_prob: float = PAPER_DARK_PROB
    splitter_ratio: float = 0.5
    eta_channel_s: float = 1.0
    eta_channel_i: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1], got {v}")

    @property
    def herald_efficiency(self):
        """Net probability that an idler photon produces a herald click."""
        return self.eta_channel_i * self.eta_spd

    @property
    def direct_efficiency(self):
        return self.eta_channel_s * self.eta_spd


_COUNT_FIELDS = ("N_h", "N_c", "N_1", "N_2", "N_12", "N_h1", "N_h2", "N_h12")


@dataclass(frozen=True)
class CountsRecord:
    n_pulses: int
    N_h: int = 0
    N_c: int = 0
    N_1: int = 0
    N_2: int = 0
    N_12: int = 0
    N_h1: int = 0
    N_h2: int = 0
    N_h12: int = 0
    f_p: float = 37e6

    def __post_init__(self):
        counts = {k: getattr(self, k) for k in _COUNT_FIELDS}
        if self.n_pulses < 0 or any(v < 0 or v > self.n_pulses for v in counts.values()):
            raise ValueError("counts must lie in [0, n_pulses]")
        if (self.N_h12 > min(self.N_h1, self.N_h2) or self.N_12 > min(self.N_1, self.N_2)
                or self.N_c > self.N_h or max(self.N_h1, self.N_h2) > self.N_h):
            raise ValueError("coincidence counts exceed the counts they are drawn from")
        if not self.f_p > 0:
            raise ValueError("f_p must be > 0")

    def __add__(self, other):
        if self.f_p != other.f_p:
            raise ValueError("cannot merge records taken at different repetition rates")
        merged = {k: getattr(self, k) + getattr(other, k) for k in ("n_pulses", *_COUNT_FIELDS)}
        return CountsRecord(f_p=self.f_p, **merged)

    @property
    def herald_rate(self):
        return self.N_h * self.f_p / self.n_pulses

    @property
    def coincidence_rate(self):
        return self.N_c * self.f_p / self.n_pulses

    @property
    def herald_probability(self):
        return self.N_h / self.n_pulses

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown CountsRecord fields: {sorted(unknown)}")
        kw = {k: int(v) for k, v in d.items() if k != "f_p"}
        return cls(f_p=float(d.get("f_p", 37e6)), **kw)

    @staticmethod
    def csv_header():
        return [f.name for f in fields(CountsRecord)]

    def csv_row(self):
        return [repr(getattr(self, k)) for k in self.csv_header()]


@njit(cache=True)
def detect(seed, index, n_s, n_i, eta_spd, dark, split, eta_s, eta_i):
    """Clicks ``(herald, signal_direct, arm1, arm2)`` for one pulse.

    Slots: 0-3 dark draws, 4 herald thinning, 5 direct thinning, 6 HBT channel
    thinning, 7 splitter, 8-9 per-arm SPD thinning.
    """
    herald = False
    direct = False
    arm1 = False
    arm2 = False
    if dark > 0.0:
        d = rng.block_uniforms(seed, rng.DETECT, index, 0)
        herald = d[0] < dark
        direct = d[1] < dark
        arm1 = d[2] < dark
        arm2 = d[3] < dark
    if n_i > 0 or n_s > 0:
        u = rng.block_uniforms(seed, rng.DETECT, index, 1)
        if n_i > 0 and rng.binomial_icdf(u[0], n_i, eta_i * eta_spd) > 0:
            herald = True
        if n_s > 0:
            if rng.binomial_icdf(u[1], n_s, eta_s * eta_spd) > 0:
                direct = True
            m = rng.binomial_icdf(u[2], n_s, eta_s)
            if m > 0:
                m1 = rng.binomial_icdf(u[3], m, split)
                v = rng.block_uniforms(seed, rng.DETECT, index, 2)
                if rng.binomial_icdf(v[0], m1, eta_spd) > 0:
                    arm1 = True
                if rng.binomial_icdf(v[1], m - m1, eta_spd) > 0:
                    arm2 = True
    return herald, direct, arm1, arm2


@njit(cache=True)
def _tally(seed, start, stop, mode_means, raman_s, raman_i,
           eta_spd, dark, split, eta_s, eta_i, out):
    per_mode = np.empty(mode_means.shape[0], dtype=np.int64)
    for p in range(start, stop):
        idx = np.uint64(p)
        n_s, n_i = draw_pairs(seed, idx, mode_means, raman_s, raman_i, per_mode)
        h, c, a1, a2 = detect(seed, idx, n_s, n_i, eta_spd, dark, split, eta_s, eta_i)
        if h:
            out[0] += 1
            if c:
                out[1] += 1
            if a1:
                out[5] += 1
            if a2:
                out[6] += 1
            if a1 and a2:
                out[7] += 1
        if a1:
            out[2] += 1
        if a2:
            out[3] += 1
        if a1 and a2:
            out[4] += 1


def detect_pulse(sample, det, pulse_index, seed):
    seed = rng.check_seed(seed)
    return tuple(bool(c) for c in detect(
        np.uint64(seed), np.uint64(pulse_index), sample.n_signal, sample.n_idler,
        det.eta_spd, det.dark_prob, det.splitter_ratio, det.eta_channel_s, det.eta_channel_i))


def _tally_range(src, det, start, stop, seed):
    out = np.zeros(8, dtype=np.int64)
    _tally(np.uint64(seed), start, stop, np.ascontiguousarray(src.mode_means, dtype=float),
           src.raman_mean_s, src.raman_mean_i, det.eta_spd, det.dark_prob,
           det.splitter_ratio, det.eta_channel_s, det.eta_channel_i, out)
    return CountsRecord(n_pulses=stop - start, f_p=src.f_p,
                        **{k: int(v) for k, v in zip(_COUNT_FIELDS, out)})


def _split(n_pulses, n_parts):
    edges = np.linspace(0, n_pulses, n_parts + 1).round().astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def run_counting_blocks(src, det, n_pulses, seed, n_blocks=1, workers=1):
    """Per-block CountsRecords over contiguous pulse ranges covering
    ``0 .. n_pulses-1``.  Block contents do not depend on `workers`."""
    n_pulses = int(n_pulses)
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    seed = rng.check_seed(seed)
    ranges = _split(n_pulses, max(1, min(int(n_blocks), n_pulses)))
    if workers <= 1 or len(ranges) == 1:
        return [_tally_range(src, det, a, b, seed) for a, b in ranges]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_tally_range, src, det, a, b, seed) for a, b in ranges]
        return [f.result() for f in futs]


def run_counting_experiment(src, det, n_pulses, seed, workers=1):
    blocks = run_counting_blocks(src, det, n_pulses, seed,
                                 n_blocks=max(1, int(workers)), workers=workers)
    total = blocks[0]
    for b in blocks[1:]:
        total = total + b
    return total


def coincidence_ratio(rec):
    """C_c / R_h, the raw fraction of heralds followed by a signal click."""
    if rec.N_h == 0:
        raise EstimatorUndefinedError("no herald clicks recorded")
    return rec.N_c / rec.N_h


def heralding_efficiency(rec, eta_spd):
    """Herald-conditioned signal presence, corrected for the signal SPD."""
    if not 0.0 < eta_spd <= 1.0:
        raise ValueError(f"eta_spd must lie in (0, 1], got {eta_spd}")
    eta = coincidence_ratio(rec) / eta_spd
    if eta > 1.0:
        warnings.warn(f"heralding efficiency {eta:.4f} exceeds 1; check eta_spd",
                      InconsistentCalibrationWarning, stacklevel=2)
    return eta


def g2_heralded(rec):
    if rec.N_h1 == 0 or rec.N_h2 == 0:
        raise EstimatorUndefinedError("no herald-arm coincidences recorded")
    return rec.N_h * rec.N_h12 / (rec.N_h1 * rec.N_h2)


def g2_unheralded(rec):
    if rec.N_1 == 0 or rec.N_2 == 0:
        raise EstimatorUndefinedError("no singles on an HBT arm")
    return rec.n_pulses * rec.N_12 / (rec.N_1 * rec.N_2)


def mode_number(g2):
    """Effective thermal mode count from ``g2 = 1 + 1/M``."""
    if not g2 > 1.0:
        raise EstimatorUndefinedError(f"g2={g2} <= 1 is outside the thermal model")
    return 1.0 / (g2 - 1.0)


def jackknife_stderr(blocks, estimator):
    """Delete-one-block jackknife standard error of ``estimator(record)``."""
    n = len(blocks)
    if n < 2:
        raise ValueError("need at least two blocks")
    total = blocks[0]
    for b in blocks[1:]:
        total = total + b
    loo = []
    for b in blocks:
        rest = CountsRecord(f_p=total.f_p, **{k: getattr(total, k) - getattr(b, k)
                                              for k in ("n_pulses", *_COUNT_FIELDS)})
        loo.append(estimator(rest))
    loo = np.asarray(loo)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def herald_probability(src, det):
    """Exact per-pulse herald probability: the product of the no-click
    probabilities of the thermal modes, the Raman photons and the dark gate."""
    p = det.herald_efficiency
    no_click = np.prod(1.0 / (1.0 + src.mode_means * p))
    no_click *= math.exp(-src.raman_mean_i * p) * (1.0 - det.dark_prob)
    return 1.0 - no_click


def mu_for_herald_probability(target, src, det):
    """Mean pair number at which `src` (weights and noise kept) heralds with
    probability `target` under `det`."""
    from scipy.optimize import brentq

    def at(mu):
        return herald_probability(_with_mu(src, mu), det) - target

    if at(0.0) >= 0:
        raise ValueError("target herald probability is below the noise floor")
    hi = 1.0
    while at(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("target herald probability is not reachable")
    return brentq(at, 0.0, hi, xtol=1e-14, rtol=1e-12)


def _with_mu(src, mu):
    from dataclasses import replace
    return replace(src, P_a=math.sqrt(mu / src.s1))


@dataclass(frozen=True)
class PumpFit:
    s1: float
    residual_rms: float
    n_points: int


def fit_pump_quadratic(points):
    """Least-squares ``y = s1 * x**2`` through `points` of (P_a, herald
    probability); closed form ``s1 = sum(x^2 y) / sum(x^4)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (P_a, probability) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("herald probabilities must lie in [0, 1]")
    sxx = np.sum(x**4)
    if sxx == 0:
        raise EstimatorUndefinedError("all pump levels are zero")
    if np.unique(x).size != x.size:
        raise ValueError("pump levels must be distinct")
    s1 = float(np.sum(x**2 * y) / sxx)
    resid = y - s1 * x**2
    return PumpFit(s1, float(np.sqrt(np.mean(resid**2))), x.size)


def fit_pump_with_floor(points, n_pulses):
    """Weighted fit of ``y = c + s1 * x**2`` with binomial weights; returns
    ``(c, s1, stderr_c, stderr_s1, chi2)``.  A floor c consistent with zero
    means the data carry no detectable pump-independent noise."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    var = np.maximum(y * (1 - y), 1.0 / n_pulses) / n_pulses
    A = np.column_stack([np.ones_like(x), x**2]) / np.sqrt(var)[:, None]
    b = y / np.sqrt(var)
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    chi2 = float(np.sum((A @ coef - b) ** 2))
    return float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])), chi2


def pump_sweep(src, det, pump_levels, n_pulses, seed, workers=1):
    """Herald probability at each pump level, one derived seed per level."""
    from dataclasses import replace
    out = []
    for i, P in enumerate(pump_levels):
        rec = run_counting_experiment(replace(src, P_a=float(P)), det, n_pulses,
                                      rng.derive_seed(seed, i), workers=workers)
        out.append((float(P), rec.herald_probability))
    return out
