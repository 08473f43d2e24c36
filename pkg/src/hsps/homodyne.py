"""Homodyne side of the twin: heralded photon-number state, Fock quadrature
sampling, detector waveform synthesis and peak extraction.

Quadrature units put the vacuum variance at 1/2, i.e. ``P_n(x) =
H_n(x)**2 exp(-x**2) / (2**n n! sqrt(pi))``.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate, special, stats

from . import rng
from .counting import herald_probability
from .errors import CutoffTooSmallError, EstimatorUndefinedError

_PROB_SUM_TOL = 1e-9
_MASS_TOL = 1e-6


@dataclass(frozen=True)
class FockMixture:
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > _PROB_SUM_TOL:
            raise ValueError("FockMixture probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))

    @classmethod
    def vacuum(cls):
        return cls((1.0,))

    @classmethod
    def fock(cls, n):
        p = np.zeros(n + 1)
        p[n] = 1.0
        return cls(tuple(p))

    @classmethod
    def two_component(cls, eta):
        """``(1 - eta) |0><0| + eta |1><1|``."""
        return cls((1.0 - eta, eta))

    @property
    def quadrature_variance(self):
        n = np.arange(len(self.probs))
        return float(np.dot(self.probs, n + 0.5))


def _binomial_loss_matrix(cutoff, eta):
    n = np.arange(cutoff + 1)
    # B[k, n] = P(k survivors | n photons)
    return stats.binom.pmf(n[:, None], n[None, :], eta)


def heralded_fock_mixture(src, det, eta_total, cutoff=12):
    """Signal photon-number distribution conditioned on a herald click, then
    passed through a single loss of transmissivity `eta_total`.

    The total pair number is the convolution of the per-mode Bose-Einstein
    laws; Raman photons add independently to each arm.
    """
    if not 0.0 <= eta_total <= 1.0:
        raise ValueError(f"eta_total must lie in [0, 1], got {eta_total}")
    cutoff = int(cutoff)
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    p_h_total = herald_probability(src, det)
    if p_h_total <= 0.0:
        raise EstimatorUndefinedError("source never heralds")
    n = np.arange(cutoff + 1)
    pairs = np.zeros(cutoff + 1)
    pairs[0] = 1.0
    for m in src.mode_means:
        if m > 0:
            pairs = np.convolve(pairs, m**n / (1.0 + m) ** (n + 1))[: cutoff + 1]
    raman_s = stats.poisson.pmf(n, src.raman_mean_s) if src.raman_mean_s > 0 else (n == 0).astype(float)
    raman_i = stats.poisson.pmf(n, src.raman_mean_i) if src.raman_mean_i > 0 else (n == 0).astype(float)
    cond = np.zeros(cutoff + 1)
    for N in range(cutoff + 1):
        # herald probability given N pairs, averaged over idler Raman photons
        n_i = N + n
        ph_N = np.sum(raman_i * (1.0 - (1.0 - det.dark_prob) * (1.0 - det.herald_efficiency) ** n_i))
        cond[N:] += pairs[N] * ph_N * raman_s[: cutoff + 1 - N]
    mass = cond.sum() / p_h_total
    if mass < 1.0 - _MASS_TOL:
        raise CutoffTooSmallError(f"cutoff {cutoff} keeps only {mass:.8f} of the heralded mass")
    cond /= cond.sum()
    out = _binomial_loss_matrix(cutoff, eta_total) @ cond
    return FockMixture(tuple(out / out.sum()))


def fock_quadrature_pdf(n, x):
    """Quadrature density of Fock state n (vacuum variance 1/2)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = np.asarray(x, dtype=float)
    psi_prev = np.zeros_like(x)
    psi = np.pi**-0.25 * np.exp(-0.5 * x * x)
    for k in range(n):
        psi, psi_prev = np.sqrt(2.0 / (k + 1)) * x * psi - np.sqrt(k / (k + 1)) * psi_prev, psi
    out = psi * psi
    return float(out) if out.ndim == 0 else out


def fock_quadrature_cdf(n, x):
    x = np.asarray(x, dtype=float)
    F0 = 0.5 * (1.0 + special.erf(x))
    if n == 0:
        return F0
    if n == 1:
        return F0 - x * np.exp(-x * x) / np.sqrt(np.pi)
    flat = np.atleast_1d(x)
    vals = np.array([integrate.quad(lambda s: fock_quadrature_pdf(n, s), -np.inf, v)[0] for v in flat])
    return vals.reshape(x.shape) if x.ndim else float(vals[0])


@njit(cache=True)
def _fock_pdf_scalar(n, x):
    psi_prev = 0.0
    psi = np.pi**-0.25 * np.exp(-0.5 * x * x)
    for k in range(n):
        nxt = np.sqrt(2.0 / (k + 1)) * x * psi - np.sqrt(k / (k + 1)) * psi_prev
        psi_prev = psi
        psi = nxt
    return psi * psi


def _envelope_variance(n):
    return n + 1.0


def _envelope_bound(n):
    """sup_x P_n(x) / g_n(x) for the Gaussian envelope g_n, padded by 0.1%."""
    s2 = _envelope_variance(n)
    half = np.sqrt(2 * n + 1) + 8.0
    x = np.linspace(0.0, half, 40001)
    g = np.exp(-x * x / (2 * s2)) / np.sqrt(2 * np.pi * s2)
    return 1.001 * float(np.max(fock_quadrature_pdf(n, x) / g))


_BOUNDS = {}


def _bounds_for(nmax):
    for n in range(nmax + 1):
        if n not in _BOUNDS:
            _BOUNDS[n] = _envelope_bound(n)
    return np.array([_BOUNDS[n] for n in range(nmax + 1)])


@njit(cache=True)
def _draw_quadrature(seed, index, cdf, bounds):
    """Slot 0 picks n by inverse CDF; attempt a uses block a + 1 (two uniforms
    for the Gaussian proposal, one for acceptance)."""
    u0 = rng.uniform(seed, rng.QUADRATURE, index, 0)
    n = 0
    while n < cdf.shape[0] - 1 and u0 > cdf[n]:
        n += 1
    s = np.sqrt(n + 1.0)
    norm = 1.0 / np.sqrt(2.0 * np.pi * (n + 1.0))
    a = 0
    while True:
        a += 1
        u = rng.block_uniforms(seed, rng.QUADRATURE, index, a)
        z, _ = rng.box_muller(u[0], u[1])
        x = s * z
        g = norm * np.exp(-0.5 * z * z)
        if u[2] * bounds[n] * g <= _fock_pdf_scalar(n, x):
            return x


@njit(cache=True)
def _draw_quadratures(seed, start, count, cdf, bounds, out):
    for r in range(count):
        out[r] = _draw_quadrature(seed, np.uint64(start + r), cdf, bounds)


def sample_quadratures(mix, phase, start, count, seed):
    """Quadrature outcomes for pulses ``start .. start+count-1``.

    Number-diagonal states have phase-independent quadrature statistics, so
    `phase` does not enter the draw.
    """
    del phase
    seed = rng.check_seed(seed)
    p = np.asarray(mix.probs)
    nmax = int(np.flatnonzero(p)[-1])
    cdf = np.cumsum(p[: nmax + 1])
    cdf[-1] = 1.0
    out = np.empty(int(count))
    _draw_quadratures(np.uint64(seed), int(start), int(count), cdf, _bounds_for(nmax), out)
    return out


def sample_quadrature(mix, phase, pulse_index, seed):
    return float(sample_quadratures(mix, phase, pulse_index, 1, seed)[0])


@dataclass(frozen=True)
class QuadratureDataset:
    """Centered, calibrated peak values of one run."""
    values: np.ndarray
    label: str
    scale_gain: float = 1.0

    def __post_init__(self):
        if self.label not in ("vacuum", "heralded"):
            raise ValueError(f"label must be 'vacuum' or 'heralded', got {self.label!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("values must be a non-empty 1-d array")
        if abs(v.mean()) > 1e-12 * max(1.0, float(np.abs(v).max())):
            raise ValueError("values are not centered")
        object.__setattr__(self, "values", v)

    @property
    def n_records(self):
        return int(self.values.size)


# ---------------------------------------------------------------------------
# detector response and waveforms

def kernel_peak_time(tau_rise, tau_fall):
    return math.log(tau_fall / tau_rise) * tau_rise * tau_fall / (tau_fall - tau_rise)


def _raw_kernel(t, tau_rise, tau_fall):
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, np.exp(-np.maximum(t, 0) / tau_fall) - np.exp(-np.maximum(t, 0) / tau_rise), 0.0)


def kernel_level_crossings(tau_rise, tau_fall, level):
    """Times where the peak-normalized kernel crosses `level` on the rising
    and falling edges."""
    from scipy.optimize import brentq
    tp = kernel_peak_time(tau_rise, tau_fall)
    kp = float(_raw_kernel(tp, tau_rise, tau_fall))

    def f(t):
        return float(_raw_kernel(t, tau_rise, tau_fall)) / kp - level

    hi = tp + tau_fall * 50.0
    return brentq(f, 0.0, tp), brentq(f, tp, hi)


def kernel_fwhm(tau_rise, tau_fall):
    a, b = kernel_level_crossings(tau_rise, tau_fall, 0.5)
    return b - a


def fall_time_for_fwhm(fwhm_ns, tau_rise):
    """tau_fall giving the requested FWHM at fixed tau_rise."""
    from scipy.optimize import brentq
    return brentq(lambda tf: kernel_fwhm(tau_rise, tf) - fwhm_ns, tau_rise * 1.01, fwhm_ns * 20)


# tau_rise = 2 ns puts the 10% level of the tail near 150 ns at 50 ns FWHM
DEFAULT_TAU_RISE = 2.0
DEFAULT_TAU_FALL = 60.74109610772447


@dataclass(frozen=True)
class PulseShapeParams:
    """Detector trace model.  `leak_amplitude` is in units of `gain` (the
    trace height for x = 1); `noise_sigma` is per-sample noise relative to the
    vacuum quadrature std.  The leak default is the residual left after the
    balanced subtraction, not the single-diode value."""

    tau_rise: float = DEFAULT_TAU_RISE
    tau_fall: float = DEFAULT_TAU_FALL
    fwhm_ns: float = 50.0
    window_ns: float = 50.0
    leak_amplitude: float = 0.002
    leak_freq_hz: float = 37e6
    noise_sigma: float = 0.002
    sample_rate: float = 500e6
    gain: float = 1.0
    record_ns: float = 200.0

    def __post_init__(self):
        if not 0 < self.tau_rise < self.tau_fall:
            raise ValueError("need 0 < tau_rise < tau_fall")
        fwhm = kernel_fwhm(self.tau_rise, self.tau_fall)
        if abs(fwhm - self.fwhm_ns) > 2.0:
            raise ValueError(f"kernel FWHM {fwhm:.2f} ns differs from target {self.fwhm_ns} ns by > 2 ns")
        if self.leak_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("leak_amplitude and noise_sigma must be >= 0")
        if not (self.sample_rate > 0 and self.gain > 0 and self.window_ns > 0):
            raise ValueError("sample_rate, gain and window_ns must be > 0")
        if self.record_ns < self.window_ns:
            raise ValueError("record must contain the peak window")

    @property
    def dt_ns(self):
        return 1e9 / self.sample_rate

    @property
    def sample_offset_ns(self):
        """Sub-sample clock phase that puts one sample on the kernel maximum,
        so a noiseless trace peaks at exactly ``gain * x``."""
        return kernel_peak_time(self.tau_rise, self.tau_fall) % self.dt_ns

    @property
    def n_samples(self):
        return int(math.floor((self.record_ns - self.sample_offset_ns) / self.dt_ns + 1e-9)) + 1

    @property
    def time_ns(self):
        return self.sample_offset_ns + np.arange(self.n_samples) * self.dt_ns

    @property
    def noise_volts(self):
        """Per-sample electronic noise std: noise_sigma times the vacuum
        quadrature signal std ``gain / sqrt(2)``."""
        return self.noise_sigma * self.gain / math.sqrt(2.0)

    def check_resolution(self):
        if self.fwhm_ns / self.dt_ns < 10:
            raise ValueError(f"sample_rate {self.sample_rate:g} gives fewer than 10 samples per FWHM")


def leak_from_isolation_db(db):
    """Photocurrent ratio of a leaked pulse suppressed by `db` of optical
    isolation (current scales with optical power)."""
    return 10.0 ** (-db / 10.0)


def response_kernel(t, p):
    """Peak-normalized double-exponential response, zero before the trigger."""
    if not p.tau_rise < p.tau_fall:
        raise ValueError("need tau_rise < tau_fall")
    tp = kernel_peak_time(p.tau_rise, p.tau_fall)
    kp = float(_raw_kernel(tp, p.tau_rise, p.tau_fall))
    out = _raw_kernel(t, p.tau_rise, p.tau_fall) / kp
    return float(out) if np.ndim(out) == 0 else out


@njit(cache=True)
def _fill_waveform(seed, index, x, kernel, gain, leak, omega, noise, dt, out):
    """Slot 0: leak phase.  Blocks 1.. give four noise normals each."""
    n = kernel.shape[0]
    theta = 2.0 * np.pi * rng.uniform(seed, rng.WAVEFORM, index, 0)
    for j in range(n):
        out[j] = gain * x * kernel[j]
    if leak > 0.0:
        for j in range(n):
            out[j] += gain * leak * np.sin(omega * j * dt + theta)
    if noise > 0.0:
        for b in range((n + 3) // 4):
            u = rng.block_uniforms(seed, rng.WAVEFORM, index, b + 1)
            z0, z1 = rng.box_muller(u[0], u[1])
            z2, z3 = rng.box_muller(u[2], u[3])
            j = 4 * b
            if j < n:
                out[j] += noise * z0
            if j + 1 < n:
                out[j + 1] += noise * z1
            if j + 2 < n:
                out[j + 2] += noise * z2
            if j + 3 < n:
                out[j + 3] += noise * z3


def _kernel_samples(p):
    return np.ascontiguousarray(response_kernel(p.time_ns, p), dtype=float)


def _omega_per_ns(p):
    return 2.0 * np.pi * p.leak_freq_hz * 1e-9


def synthesize_waveform(x, p, pulse_index, seed):
    """Sampled detector trace ``(t_ns, volts)`` for one quadrature value."""
    p.check_resolution()
    seed = rng.check_seed(seed)
    out = np.empty(p.n_samples)
    _fill_waveform(np.uint64(seed), np.uint64(pulse_index), float(x), _kernel_samples(p),
                   p.gain, p.leak_amplitude, _omega_per_ns(p), p.noise_volts, p.dt_ns, out)
    return p.time_ns, out


def extract_peak(waveform, t_ns, window_ns=50.0, t_trigger=0.0):
    """Signed extremum of largest magnitude inside ``[t_trigger, t_trigger +
    window_ns]``.  The quadrature can be negative, so the sign is kept."""
    w = np.asarray(waveform)
    t = np.asarray(t_ns)
    sel = np.flatnonzero((t >= t_trigger) & (t <= t_trigger + window_ns + 1e-9))
    if sel.size == 0:
        raise ValueError("peak window contains no samples")
    seg = w[sel]
    return float(seg[np.argmax(np.abs(seg))])


def _window_slice(p, t_trigger=0.0):
    t = p.time_ns
    sel = np.flatnonzero((t >= t_trigger) & (t <= t_trigger + p.window_ns + 1e-9))
    if sel.size == 0:
        raise ValueError("peak window contains no samples")
    return int(sel[0]), int(sel[-1]) + 1


@njit(cache=True)
def _record_peaks(seed, start, xs, kernel, gain, leak, omega, noise, dt, lo, hi, out):
    buf = np.empty(kernel.shape[0])
    for r in range(xs.shape[0]):
        _fill_waveform(seed, np.uint64(start + r), xs[r], kernel, gain, leak, omega, noise, dt, buf)
        best = buf[lo]
        for j in range(lo + 1, hi):
            if abs(buf[j]) > abs(best):
                best = buf[j]
        out[r] = best


def record_peaks(xs, p, start, seed):
    """Peak values of the traces for quadratures `xs` on pulses ``start,
    start+1, ...``; same numbers as extract_peak(synthesize_waveform(...))
    without keeping the traces."""
    p.check_resolution()
    seed = rng.check_seed(seed)
    xs = np.ascontiguousarray(xs, dtype=float)
    lo, hi = _window_slice(p)
    out = np.empty(xs.shape[0])
    _record_peaks(np.uint64(seed), int(start), xs, _kernel_samples(p), p.gain, p.leak_amplitude,
                  _omega_per_ns(p), p.noise_volts, p.dt_ns, lo, hi, out)
    return out


def synthesize_waveforms(xs, p, start, seed):
    p.check_resolution()
    seed = rng.check_seed(seed)
    xs = np.asarray(xs, dtype=float)
    k = _kernel_samples(p)
    out = np.empty((xs.shape[0], p.n_samples))
    for r, x in enumerate(xs):
        _fill_waveform(np.uint64(seed), np.uint64(start + r), float(x), k, p.gain,
                       p.leak_amplitude, _omega_per_ns(p), p.noise_volts, p.dt_ns, out[r])
    return out


def peak_noise_variance(p):
    """Variance (volts^2) of the extracted peak for x = 0 and no leak: the
    signed largest-magnitude of m iid N(0, s^2) window samples, from
    ``E[M^2] = int 2y (1 - (2 Phi(y/s) - 1)^m) dy``."""
    lo, hi = _window_slice(p)
    m = hi - lo
    s = p.noise_volts
    if s == 0:
        return 0.0
    val, _ = integrate.quad(lambda y: 2 * y * (1 - (2 * stats.norm.cdf(y / s) - 1) ** m),
                            0, 40 * s, limit=200)
    return float(val)
