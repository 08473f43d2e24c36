"""Independent reference computations used by the tests.

Nothing here imports the simulation kernels; the counting oracle enumerates
the photon-number lattice and every branch of the thinning / splitting chain
explicitly.
"""

from itertools import product
from math import comb, exp, factorial

import numpy as np
from scipy import integrate


def _binom_pmf(k, n, p):
    return comb(n, k) * p**k * (1 - p) ** (n - k)


def bose_einstein_pmf(n, mean):
    if mean == 0:
        return 1.0 if n == 0 else 0.0
    return mean**n / (1 + mean) ** (n + 1)


def _click_probs(n, eff, dark):
    """P(no click) for n photons each detected with probability eff, summed
    over the number of survivors."""
    p_none = sum(_binom_pmf(k, n, eff) for k in range(n + 1) if k == 0)
    return 1 - (1 - dark) * p_none


def _hbt_outcomes(n, eta_s, split, eta_spd, dark):
    """Joint click probabilities (arm1, arm2) for n signal photons, by
    enumeration over channel survivors m, the split m1 and detected k1, k2."""
    table = np.zeros((2, 2))
    for m in range(n + 1):
        pm = _binom_pmf(m, n, eta_s)
        for m1 in range(m + 1):
            ps = pm * _binom_pmf(m1, m, split)
            for k1 in range(m1 + 1):
                for k2 in range(m - m1 + 1):
                    pk = ps * _binom_pmf(k1, m1, eta_spd) * _binom_pmf(k2, m - m1, eta_spd)
                    for d1, d2 in product((0, 1), repeat=2):
                        pd = (dark if d1 else 1 - dark) * (dark if d2 else 1 - dark)
                        c1 = int(k1 > 0 or d1)
                        c2 = int(k2 > 0 or d2)
                        table[c1, c2] += pk * pd
    return table


def counting_oracle(mu, eta_spd, dark, split, eta_s, eta_i, cutoff=8):
    """Exact event probabilities for a single-mode thermal pair source."""
    P = dict.fromkeys(["h", "c", "1", "2", "12", "h1", "h2", "h12", "hc"], 0.0)
    mass = 0.0
    for n in range(cutoff + 1):
        w = bose_einstein_pmf(n, mu)
        mass += w
        ph = _click_probs(n, eta_i * eta_spd, dark)
        pc = _click_probs(n, eta_s * eta_spd, dark)
        t = _hbt_outcomes(n, eta_s, split, eta_spd, dark)
        p1 = t[1, :].sum()
        p2 = t[:, 1].sum()
        p12 = t[1, 1]
        P["h"] += w * ph
        P["hc"] += w * ph * pc
        P["1"] += w * p1
        P["2"] += w * p2
        P["12"] += w * p12
        P["h1"] += w * ph * p1
        P["h2"] += w * ph * p2
        P["h12"] += w * ph * p12
    P["mass"] = mass
    P["ratio"] = P["hc"] / P["h"]
    P["eta_h"] = P["ratio"] / eta_spd
    P["g2_h"] = P["h"] * P["h12"] / (P["h1"] * P["h2"])
    P["g2_s"] = P["12"] / (P["1"] * P["2"])
    return P


def conditional_signal_distribution(mu, eta_herald, dark, cutoff=40):
    """Signal photon-number law given a herald click, single-mode source."""
    p = np.array([bose_einstein_pmf(n, mu) * (1 - (1 - dark) * (1 - eta_herald) ** n)
                  for n in range(cutoff + 1)])
    return p / p.sum()


def thin(probs, eta):
    out = np.zeros(len(probs))
    for n, pn in enumerate(probs):
        for k in range(n + 1):
            out[k] += pn * _binom_pmf(k, n, eta)
    return out


def hermite_phys(n, x):
    """H_n by the explicit sum formula."""
    return sum((-1) ** m * factorial(n) / (factorial(m) * factorial(n - 2 * m)) * (2 * x) ** (n - 2 * m)
               for m in range(n // 2 + 1))


def fock_pdf_reference(n, x):
    return hermite_phys(n, x) ** 2 * exp(-x * x) / (2**n * factorial(n) * np.sqrt(np.pi))


def quad_moment(f, k, lim=12.0):
    val, _ = integrate.quad(lambda x: x**k * f(x), -lim, lim, limit=200, epsabs=1e-13, epsrel=1e-12)
    return val


def multimode_click_g2(mode_means, p1, p2, dark=0.0):
    """Click-based unheralded g2 for independent thermal modes.

    A thermal mode of mean m seen with per-photon click probability p leaves
    no click with probability 1 / (1 + m p); both arms dark together sees
    p1 + p2.
    """
    m = np.asarray(mode_means, dtype=float)
    q1 = (1 - dark) * np.prod(1 / (1 + m * p1))
    q2 = (1 - dark) * np.prod(1 / (1 + m * p2))
    q12 = (1 - dark) ** 2 * np.prod(1 / (1 + m * (p1 + p2)))
    P1, P2 = 1 - q1, 1 - q2
    return (1 - q1 - q2 + q12) / (P1 * P2)


def poisson_click_prob(mean, eff, dark=0.0):
    return 1 - (1 - dark) * exp(-mean * eff)
