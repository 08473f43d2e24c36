"""Quadrature data pipeline: centering, vacuum calibration, histogramming,
variance comparison and the vacuum / single-photon mixture fit.

The fit maximizes

    l(eta) = sum_i log[(1 - eta) P0(x_i) + eta P1(x_i)]

on the raw samples.  Each term is the log of an affine function of eta, so
l is concave and its derivative is strictly decreasing; bisection on the
derivative finds the maximum or the boundary.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import EstimatorUndefinedError, InconsistentCalibrationWarning
from . import rng
from .homodyne import (FockMixture, fock_quadrature_cdf, fock_quadrature_pdf,
                       record_peaks, sample_quadratures)


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly ascending")
        if self.counts.shape[0] != self.bin_edges.shape[0] - 1:
            raise ValueError("need one count per bin")

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class MixtureFit:
    eta: float
    log_likelihood: float
    stderr_eta: float
    converged: bool
    n_samples: int


def center(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two values to center")
    out = v - v.mean()
    # second pass removes the rounding residue of the first
    return out - out.mean()


def calibrate_scale(vacuum):
    """Factor that brings the vacuum variance to 1/2."""
    var = float(np.var(np.asarray(vacuum, dtype=float)))
    if not var > 0:
        raise EstimatorUndefinedError("vacuum dataset has zero variance")
    return 1.0 / math.sqrt(2.0 * var)


def variance_db(heralded, vacuum):
    v0 = float(np.var(vacuum))
    if not v0 > 0:
        raise EstimatorUndefinedError("vacuum dataset has zero variance")
    return 10.0 * math.log10(float(np.var(heralded)) / v0)


def eta_from_variance_db(db):
    """Two-component mixture efficiency implied by a variance ratio,
    ``10**(db/10) = 1 + 2 eta``."""
    return (10.0 ** (db / 10.0) - 1.0) / 2.0


def _components(x):
    return fock_quadrature_pdf(0, x), fock_quadrature_pdf(1, x)


def mixture_log_likelihood(eta, values):
    p0, p1 = _components(np.asarray(values, dtype=float))
    return float(np.sum(np.log((1.0 - eta) * p0 + eta * p1)))


def mixture_score(eta, values):
    """dl/deta."""
    p0, p1 = _components(np.asarray(values, dtype=float))
    d = p1 - p0
    return float(np.sum(d / (p0 + eta * d)))


def fit_mixture_eta(values, tol=1e-8, max_iter=200):
    """Maximum-likelihood efficiency of the vacuum / single-photon mixture.

    `values` must already be centered and calibrated to vacuum variance 1/2.
    The standard error comes from the observed Fisher information.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    if np.ptp(x) == 0:
        raise EstimatorUndefinedError("all samples are equal")
    p0, p1 = _components(x)
    d = p1 - p0

    def score(eta):
        return float(np.sum(d / (p0 + eta * d)))

    lo, hi = 0.0, 1.0
    s_lo = score(lo)
    with np.errstate(divide="ignore"):
        s_hi = score(hi)
    converged = True
    if s_lo <= 0:
        eta = 0.0
    elif s_hi >= 0:
        eta = 1.0
    else:
        converged = False
        for _ in range(max_iter):
            eta = 0.5 * (lo + hi)
            s = score(eta)
            if abs(s) < tol or hi - lo < 1e-15:
                converged = True
                break
            if s > 0:
                lo = eta
            else:
                hi = eta
    mix = p0 + eta * d
    info = float(np.sum((d / mix) ** 2))
    ll = float(np.sum(np.log(mix)))
    stderr = 1.0 / math.sqrt(info) if info > 0 else math.inf
    return MixtureFit(eta=eta, log_likelihood=ll, stderr_eta=stderr,
                      converged=converged, n_samples=int(x.size))


def build_histogram(values, n_bins):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot histogram an empty dataset")
    if n_bins < 2:
        raise ValueError("need at least two bins")
    counts, edges = np.histogram(v, bins=int(n_bins))
    return Histogram(edges, counts.astype(np.int64))


def mixture_bin_masses(edges, eta):
    """Probability the two-component model assigns to each bin."""
    edges = np.asarray(edges, dtype=float)
    F = (1.0 - eta) * fock_quadrature_cdf(0, edges) + eta * fock_quadrature_cdf(1, edges)
    return np.diff(F)


@dataclass(frozen=True)
class GoodnessOfFit:
    chi2: float
    dof: int
    p_value: float
    n_bins_used: int


def chi_square_gof(hist, eta, min_expected=5.0, n_fitted=1):
    """Pearson chi-square of `hist` against the mixture at `eta`.

    Bins with expected count below `min_expected` are pooled with their
    neighbours (tails, chiefly); the mass outside the histogram range joins
    the outermost bins.
    """
    masses = mixture_bin_masses(hist.bin_edges, eta)
    outside_lo = (1.0 - eta) * fock_quadrature_cdf(0, hist.bin_edges[0]) + eta * fock_quadrature_cdf(1, hist.bin_edges[0])
    outside_hi = 1.0 - masses.sum() - outside_lo
    masses = masses.copy()
    masses[0] += outside_lo
    masses[-1] += outside_hi
    expected = masses * hist.total
    obs, exp_ = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(hist.counts, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs.append(acc_o)
            exp_.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if exp_:
            obs[-1] += acc_o
            exp_[-1] += acc_e
        else:
            obs.append(acc_o)
            exp_.append(acc_e)
    obs = np.asarray(obs)
    exp_ = np.asarray(exp_)
    chi2 = float(np.sum((obs - exp_) ** 2 / exp_))
    dof = max(len(obs) - 1 - n_fitted, 1)
    return GoodnessOfFit(chi2, dof, float(stats.chi2.sf(chi2, dof)), len(obs))


def fit_mixture_eta_histogram(hist):
    """Cross-check fit: eta minimizing the Pearson chi-square of the binned
    data (bin masses from the model CDFs)."""
    res = optimize.minimize_scalar(lambda e: chi_square_gof(hist, e).chi2,
                                   bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-7})
    return float(res.x), float(res.fun)


def efficiency_budget(eta_total, eta_h, eta_hd, eta_t):
    """Mode-match efficiency left after dividing out the other known factors."""
    for name, v in (("eta_total", eta_total), ("eta_h", eta_h), ("eta_hd", eta_hd), ("eta_t", eta_t)):
        if not 0.0 < v <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {v}")
    out = eta_total / (eta_h * eta_hd * eta_t)
    if out > 1.0:
        warnings.warn(f"efficiency budget gives mode match {out:.4f} > 1",
                      InconsistentCalibrationWarning, stacklevel=2)
    return out


@dataclass(frozen=True)
class HomodyneAnalysis:
    fit: MixtureFit
    stderr_eta_total: float
    variance_db: float
    gof: GoodnessOfFit
    histogram: Histogram
    scale_gain: float
    heralded: np.ndarray
    vacuum: np.ndarray


def analyze_peaks(vacuum_raw, heralded_raw, n_bins=80):
    """Full chain on raw peak values recorded at identical settings: center
    each set, scale both with the vacuum calibration, fit, compare variances."""
    vac = center(vacuum_raw)
    her = center(heralded_raw)
    g = calibrate_scale(vac)
    vac = vac * g
    her = her * g
    fit = fit_mixture_eta(her)
    hist = build_histogram(her, n_bins)
    gof = chi_square_gof(hist, fit.eta)
    se = math.hypot(fit.stderr_eta, calibration_stderr(vac, fit.eta))
    return HomodyneAnalysis(fit, se, variance_db(her, vac), gof, hist, g, her, vac)


def calibration_stderr(vacuum, eta):
    """Spread of the fitted eta inherited from the finite vacuum run.

    A relative error d in the vacuum variance rescales the heralded data and
    moves eta by about ``-(1/2 + eta) * d``; ``Var(d) = (kurtosis - 1) / N``.
    """
    v = np.asarray(vacuum, dtype=float)
    kurt = float(np.mean(v**4) / np.mean(v**2) ** 2)
    return (0.5 + eta) * math.sqrt((kurt - 1.0) / v.size)


VACUUM_RUN = 0
HERALDED_RUN = 1


def simulate_peaks(mix, pulse_shape, n_records, seed, phase=0.0):
    """Raw peak values of `n_records` traces of state `mix`."""
    xs = sample_quadratures(mix, phase, 0, n_records, seed)
    return record_peaks(xs, pulse_shape, 0, seed)


def simulate_homodyne(mix, pulse_shape, n_records, seed, n_bins=80, phase=0.0):
    """Vacuum run plus heralded run (each on its own derived seed) pushed
    through the full analysis chain."""
    vac = simulate_peaks(FockMixture.vacuum(), pulse_shape, n_records,
                         rng.derive_seed(seed, VACUUM_RUN), phase)
    her = simulate_peaks(mix, pulse_shape, n_records,
                         rng.derive_seed(seed, HERALDED_RUN), phase)
    return analyze_peaks(vac, her, n_bins)
