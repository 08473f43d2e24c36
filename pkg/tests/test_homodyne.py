import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsps import homodyne as hd
from hsps.counting import DetectorParams
from hsps.errors import CutoffTooSmallError
from hsps.pair_source import SourceParams, sample_pulses, schmidt_weights_for_target_K

import oracles

QUIET = hd.PulseShapeParams(noise_sigma=0.0, leak_amplitude=0.0)


# --- mixtures ----------------------------------------------------------------

@pytest.mark.parametrize("probs", [(0.5, 0.6), (1.2, -0.2), ()])
def test_mixture_invariants(probs):
    with pytest.raises(ValueError):
        hd.FockMixture(probs)


def test_mixture_constructors():
    assert hd.FockMixture.vacuum().probs == (1.0,)
    assert hd.FockMixture.fock(2).probs == (0.0, 0.0, 1.0)
    assert hd.FockMixture.two_component(0.192).quadrature_variance == pytest.approx(0.692)


def test_heralded_mixture_full_loss_is_vacuum():
    mix = hd.heralded_fock_mixture(SourceParams.from_mean_pairs(0.05), DetectorParams(), 0.0)
    assert mix.probs[0] == pytest.approx(1.0, abs=1e-15)


def test_heralded_mixture_ideal_limit():
    det = DetectorParams(eta_spd=1.0, dark_prob=0.0)
    mix = hd.heralded_fock_mixture(SourceParams.from_mean_pairs(1e-6), det, 1.0)
    assert mix.probs[1] == pytest.approx(1.0, abs=1e-5)


def test_heralded_mixture_matches_enumeration_oracle():
    det = DetectorParams(eta_spd=0.8, eta_channel_i=0.5)
    src = SourceParams.from_mean_pairs(0.01)
    exact = oracles.conditional_signal_distribution(0.01, det.herald_efficiency, det.dark_prob)
    # loss that leaves p_1 = 0.192
    from scipy.optimize import brentq
    eta = brentq(lambda e: oracles.thin(exact, e)[1] - 0.192, 0.01, 1.0)
    mix = hd.heralded_fock_mixture(src, det, eta)
    ref = oracles.thin(exact, eta)
    assert np.allclose(mix.probs, ref[: len(mix.probs)], atol=1e-12)
    assert mix.probs[1] == pytest.approx(0.192, abs=1e-9)
    assert mix.probs[0] == pytest.approx(0.806, abs=0.002)
    assert sum(mix.probs[2:]) < 0.002


def test_heralded_mixture_multimode_against_weighted_sampling():
    w = schmidt_weights_for_target_K(1.33, 4)
    src = SourceParams.from_mean_pairs(0.3, schmidt_weights=w, raman_mean_s=0.02, raman_mean_i=0.03)
    det = DetectorParams(eta_spd=0.8, dark_prob=1e-3, eta_channel_i=0.6)
    b = sample_pulses(src, 0, 2_000_000, seed=3)
    weight = 1 - (1 - det.dark_prob) * (1 - det.herald_efficiency) ** b.n_idler
    hist = np.bincount(b.n_signal, weights=weight, minlength=6)[:6] / weight.sum()
    mix = hd.heralded_fock_mixture(src, det, 1.0, cutoff=20)
    for n in range(4):
        p = mix.probs[n]
        assert abs(hist[n] - p) < 5 * math.sqrt(p * (1 - p) / (0.2 * 2_000_000)) + 1e-6


def test_cutoff_too_small():
    with pytest.raises(CutoffTooSmallError):
        hd.heralded_fock_mixture(SourceParams.from_mean_pairs(3.0), DetectorParams(), 0.5, cutoff=3)


# --- Fock quadrature densities ----------------------------------------------

def test_pdf_special_values():
    assert hd.fock_quadrature_pdf(0, 0.0) == pytest.approx(1 / math.sqrt(math.pi))
    assert hd.fock_quadrature_pdf(1, 0.0) == 0.0


@pytest.mark.parametrize("n", range(7))
def test_pdf_matches_hermite_sum(n):
    x = np.linspace(-5, 5, 41)
    ref = np.array([oracles.fock_pdf_reference(n, v) for v in x])
    assert np.allclose(hd.fock_quadrature_pdf(n, x), ref, rtol=1e-10, atol=1e-15)


@pytest.mark.parametrize("n", range(7))
def test_pdf_normalization_and_variance(n):
    f = lambda x: hd.fock_quadrature_pdf(n, x)
    from scipy import integrate
    assert integrate.quad(f, -10, 10, epsabs=1e-13, limit=200)[0] == pytest.approx(1.0, abs=1e-6)
    assert oracles.quad_moment(f, 2) == pytest.approx(n + 0.5, abs=1e-6)


@pytest.mark.parametrize("n", [0, 1, 3])
def test_cdf_consistent_with_pdf(n):
    from scipy import integrate
    for x in (-1.3, 0.0, 0.4, 2.2):
        ref = integrate.quad(lambda s: oracles.fock_pdf_reference(n, s), -12, x)[0]
        assert hd.fock_quadrature_cdf(n, x) == pytest.approx(ref, abs=1e-9)


# --- quadrature sampler ------------------------------------------------------

@pytest.mark.parametrize("probs,var,tol", [((1.0,), 0.5, 0.01), ((0.0, 1.0), 1.5, 0.02),
                                           ((0.808, 0.192), 0.692, 0.01)])
def test_sampler_variances(probs, var, tol):
    x = hd.sample_quadratures(hd.FockMixture(probs), 0.0, 0, 100_000, seed=17)
    assert x.var() == pytest.approx(var, abs=tol)
    assert x.mean() == pytest.approx(0.0, abs=0.01)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=5).filter(lambda v: sum(v) > 0.05),
       st.integers(0, 2**32))
@settings(max_examples=10, deadline=None)
def test_sampler_moments_within_5_sigma(raw, seed):
    p = np.array(raw) / sum(raw)
    mix = hd.FockMixture(tuple(p))
    x = hd.sample_quadratures(mix, 0.0, 0, 100_000, seed)
    m2 = mix.quadrature_variance
    m4 = sum(pn * oracles.quad_moment(lambda s, n=n: oracles.fock_pdf_reference(n, s), 4)
             for n, pn in enumerate(p))
    assert abs(x.mean()) < 5 * math.sqrt(m2 / x.size)
    assert abs(np.mean(x * x) - m2) < 5 * math.sqrt((m4 - m2 * m2) / x.size)


def test_sampler_is_counter_addressed():
    mix = hd.FockMixture((0.7, 0.2, 0.1))
    full = hd.sample_quadratures(mix, 0.0, 0, 500, seed=4)
    parts = np.concatenate([hd.sample_quadratures(mix, 0.0, 0, 200, seed=4),
                            hd.sample_quadratures(mix, 0.0, 200, 300, seed=4)])
    assert np.array_equal(full, parts)
    assert hd.sample_quadrature(mix, 1.0, 321, seed=4) == full[321]


# --- response kernel ---------------------------------------------------------

def test_kernel_causal_and_peak_normalized():
    p = hd.PulseShapeParams()
    assert hd.response_kernel(-1.0, p) == 0.0
    t_star = math.log(p.tau_fall / p.tau_rise) * p.tau_rise * p.tau_fall / (p.tau_fall - p.tau_rise)
    assert hd.kernel_peak_time(p.tau_rise, p.tau_fall) == pytest.approx(t_star)
    assert hd.response_kernel(t_star, p) == pytest.approx(1.0, abs=1e-14)
    t = np.linspace(0, 300, 30001)
    assert hd.response_kernel(t, p).max() <= 1.0 + 1e-14


def test_default_kernel_shape():
    p = hd.PulseShapeParams()
    t = np.linspace(0, 400, 400001)
    k = hd.response_kernel(t, p)
    above = t[k >= 0.5]
    assert above[-1] - above[0] == pytest.approx(50.0, abs=2.0)
    tail = t[k >= 0.1][-1]
    assert 140 <= tail <= 160
    assert hd.kernel_fwhm(p.tau_rise, p.tau_fall) == pytest.approx(50.0, abs=1e-6)


def test_fall_time_for_fwhm_round_trip():
    tf = hd.fall_time_for_fwhm(40.0, 1.5)
    assert hd.kernel_fwhm(1.5, tf) == pytest.approx(40.0, abs=1e-6)


def test_pulse_shape_validation():
    with pytest.raises(ValueError):
        hd.PulseShapeParams(tau_rise=70.0, tau_fall=60.0)
    with pytest.raises(ValueError):
        hd.PulseShapeParams(tau_fall=80.0)  # FWHM far from 50 ns
    with pytest.raises(ValueError):
        hd.PulseShapeParams(record_ns=20.0)
    coarse = hd.PulseShapeParams(sample_rate=100e6)
    with pytest.raises(ValueError):
        hd.synthesize_waveform(0.5, coarse, 0, seed=1)


def test_record_contains_the_tail():
    p = hd.PulseShapeParams()
    assert p.time_ns[-1] >= 150.0


# --- waveforms and peaks -----------------------------------------------------

def test_quiet_waveforms():
    t, w0 = hd.synthesize_waveform(0.0, QUIET, 0, seed=1)
    assert not w0.any()
    p = hd.PulseShapeParams(noise_sigma=0.0, leak_amplitude=0.0, gain=2.5)
    t, w1 = hd.synthesize_waveform(1.0, p, 0, seed=1)
    assert np.array_equal(w1, 2.5 * hd.response_kernel(t, p))


def test_leak_ripple_at_repetition_rate():
    assert hd.leak_from_isolation_db(10.0) == pytest.approx(0.1)
    p = hd.PulseShapeParams(noise_sigma=0.0, leak_amplitude=hd.leak_from_isolation_db(10.0))
    t, w = hd.synthesize_waveform(0.0, p, 3, seed=2)
    spec = np.abs(np.fft.rfft(w * np.hanning(w.size)))
    freqs = np.fft.rfftfreq(w.size, d=p.dt_ns * 1e-9)
    assert freqs[np.argmax(spec[1:]) + 1] == pytest.approx(37e6, abs=freqs[1])
    assert np.ptp(w) == pytest.approx(0.2, rel=0.05)


@pytest.mark.parametrize("x", [1.0, -0.7, 0.25])
def test_noiseless_peak_recovers_signed_value(x):
    p = hd.PulseShapeParams(noise_sigma=0.0, leak_amplitude=0.0, gain=3.0)
    t, w = hd.synthesize_waveform(x, p, 0, seed=1)
    assert hd.extract_peak(w, t, p.window_ns) == pytest.approx(3.0 * x, rel=1e-12)


def test_empty_window():
    t, w = hd.synthesize_waveform(0.3, QUIET, 0, seed=1)
    with pytest.raises(ValueError):
        hd.extract_peak(w, t, 50.0, t_trigger=500.0)


def test_record_peaks_equals_waveform_route():
    p = hd.PulseShapeParams(noise_sigma=0.05, leak_amplitude=0.02)
    xs = hd.sample_quadratures(hd.FockMixture((0.8, 0.2)), 0.0, 10, 300, seed=9)
    fast = hd.record_peaks(xs, p, 10, seed=9)
    slow = [hd.extract_peak(*hd.synthesize_waveform(x, p, 10 + i, 9)[::-1], p.window_ns)
            for i, x in enumerate(xs)]
    assert np.array_equal(fast, slow)
    assert np.array_equal(hd.synthesize_waveforms(xs[:3], p, 10, 9)[1],
                          hd.synthesize_waveform(xs[1], p, 11, 9)[1])


def test_zero_input_peaks_match_noise_budget():
    p = hd.PulseShapeParams(leak_amplitude=0.0)
    pk = hd.record_peaks(np.zeros(200_000), p, 0, seed=5)
    assert pk.var() == pytest.approx(hd.peak_noise_variance(p), rel=0.05)
    assert abs(pk.mean()) < 5 * pk.std() / math.sqrt(pk.size)
    from scipy import stats
    assert stats.ks_2samp(pk, -pk).pvalue > 0.01


def test_end_to_end_peak_bias_default_noise():
    p = hd.PulseShapeParams()
    xs = hd.sample_quadratures(hd.FockMixture.two_component(0.192), 0.0, 0, 50_000, seed=8)
    pk = hd.record_peaks(xs, p, 0, seed=8) / p.gain
    assert abs(np.mean(np.sign(xs) * (pk - xs))) < 0.02 / math.sqrt(2)
    assert abs(np.mean(pk - xs)) < 0.02 / math.sqrt(2)


def test_quadrature_dataset_invariants():
    ds = hd.QuadratureDataset(np.array([-1.0, 0.5, 0.5]), "heralded", 2.0)
    assert ds.n_records == 3
    with pytest.raises(ValueError):
        hd.QuadratureDataset(np.array([1.0, 0.5]), "vacuum")
    with pytest.raises(ValueError):
        hd.QuadratureDataset(np.array([-1.0, 1.0]), "squeezed")
