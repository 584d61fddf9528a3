"""Secure key lengths and Bell/teleportation verdicts from detection statistics.

Entanglement-based QKD uses a finite-size bound with a smooth-min-entropy
penalty Delta and a QBER deviation xi; prepare-and-measure QKD uses the
one-decoy estimates of the single-photon gain and error, with worst-case
statistical shifts, and the same Delta term.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

XI_FORMULA = "xi = sqrt((2 ln(1/eps_pe) + 2 d ln(N + 1)) / N), d = 2, eps_pe = eps_bar_prime"
DECOY_SIGMAS = 10.0
_GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class SecurityParams:
    eps_total: float = 1e-9
    eps_ec: float = 1e-10
    f_ec: float = 1.22
    q: float = 0.5
    hilbert_dim: int = 2
    decoy_vacuum_bound: bool = False    # True: subtract a vacuum-yield bound from Q1

    def __post_init__(self):
        if not self.eps_total > self.eps_ec > 0:
            raise ValueError("need eps_total > eps_ec > 0")
        if self.f_ec < 1:
            raise ValueError("error-correction efficiency f_ec must be >= 1")


@dataclass(frozen=True)
class KeyResult:
    secure_bits: int
    raw_bits: int
    mean_qber: float
    verdict: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.secure_bits < 0 or self.secure_bits > self.raw_bits:
            raise ValueError("secure bits must lie in [0, raw bits]")


def binary_entropy(x):
    x = np.clip(np.asarray(x, float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -x * np.log2(x) - (1 - x) * np.log2(1 - x)
    return np.where((x <= 0) | (x >= 1), 0.0, h)


def _h(x: float) -> float:
    if x <= 0 or x >= 1:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def _h_capped(x: float) -> float:
    # errors beyond 1/2 carry no more information than 1/2
    return 1.0 if x >= 0.5 else _h(x)


def delta_term(n: float, eps_bar: float, eps_bar_prime: float, params: SecurityParams) -> float:
    """Finite-size privacy-amplification penalty (bits)."""
    slack = params.eps_total - eps_bar - params.eps_ec
    spread = eps_bar - eps_bar_prime
    if slack <= 0 or spread <= 0:
        return math.inf
    return 2 * math.log2(1 / (2 * slack)) + 7 * math.sqrt(n * math.log2(2 / spread))


def xi_deviation(n: float, eps_pe: float, dim: int = 2) -> float:
    """Finite-sample deviation of the observed QBER from its true value."""
    if eps_pe <= 0:
        return math.inf
    return math.sqrt((2 * math.log(1 / eps_pe) + 2 * dim * math.log(n + 1)) / n)


def bbm92_rate(n, qber, eps_bar, eps_bar_prime, params: SecurityParams) -> float:
    """Key fraction per coincidence at fixed security-parameter split."""
    xi = xi_deviation(n, eps_bar_prime, params.hilbert_dim)
    d = delta_term(n, eps_bar, eps_bar_prime, params)
    if not math.isfinite(xi) or not math.isfinite(d):
        return -math.inf
    return params.q * (1 - _h_capped(qber + xi) - params.f_ec * _h(qber) - d / n)


def _split(u, v, params):
    """Map unconstrained (u, v) onto eps_total - eps_ec > eps_bar > eps_bar' > 0."""
    top = params.eps_total - params.eps_ec
    eps_bar = top / (1 + math.exp(-u))
    return eps_bar, eps_bar / (1 + math.exp(-v))


def golden_max(f, lo, hi, tol=1e-6, max_iter=200):
    """Maximise a unimodal function on [lo, hi] by golden-section search."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


def optimise_eps_split(n, qber, params: SecurityParams, bound=40.0):
    """Nested golden-section over the (eps_bar, eps_bar') split in logit space."""
    def inner(u):
        return golden_max(lambda v: bbm92_rate(n, qber, *_split(u, v, params), params),
                          -bound, bound)

    u, _ = golden_max(lambda u: inner(u)[1], -bound, bound)
    v, rate = inner(u)
    return rate, _split(u, v, params)


def bbm92_key_length(raw_n: int, qber: float, params: SecurityParams = SecurityParams()) -> KeyResult:
    """Finite-size key from ``raw_n`` coincidences at the given QBER."""
    if raw_n < 1:
        raise ValueError("raw_n must be >= 1")
    if not 0.0 <= qber <= 0.5:
        raise ValueError("qber must be in [0, 0.5]")
    n = float(raw_n)
    raw_bits = int(raw_n)
    rate, (eb, ebp) = optimise_eps_split(n, qber, params)
    xi = xi_deviation(n, ebp, params.hilbert_dim)
    delta = delta_term(n, eb, ebp, params)
    details = {"eps_bar": eb, "eps_bar_prime": ebp, "xi": xi, "delta": delta,
               "xi_formula": XI_FORMULA, "rate": rate}
    bits = n * rate
    if bits <= 0 or not math.isfinite(bits):
        terms = {
            "phase_error": _h_capped(qber + xi),
            "error_correction": params.f_ec * _h(qber),
            "finite_size": delta / n,
        }
        worst = max(terms, key=terms.get)
        return KeyResult(0, raw_bits, qber, f"no key: {worst} term dominates", details)
    return KeyResult(min(int(math.floor(bits)), raw_bits), raw_bits, qber, "ok", details)


def bbm92_asymptotic_rate(qber: float, params: SecurityParams = SecurityParams()) -> float:
    return params.q * (1 - (1 + params.f_ec) * _h(qber))


# ---------------------------------------------------------------- decoy BB84

def decoy_single_photon(q_mu, q_nu, e_mu, e_nu, mu, nu, vacuum_bound=False):
    """One-decoy estimates of single-photon gain Q1 and error E1.

    The plain estimator neglects the vacuum yield Y0 and is a lower bound
    only while Y0 << eta.  With ``vacuum_bound`` the term is kept, using
    Y0 <= 2 E Q e^intensity (vacuum events err half the time) for the
    tighter of the two intensities, which stays conservative when dark
    counts are comparable to the signal.
    """
    y0_max = 0.0
    if vacuum_bound:
        y0_max = 2 * min(e_mu * q_mu * math.exp(mu), e_nu * q_nu * math.exp(nu))
    q1 = mu**2 * math.exp(-mu) / (mu * nu - nu**2) * (
        q_nu * math.exp(nu) - q_mu * math.exp(mu) * nu**2 / mu**2
        - (mu**2 - nu**2) / mu**2 * y0_max)
    if q1 <= 0:
        return q1, math.nan
    return q1, min(e_nu * q_nu / q1, 0.5)


def decoy_rate(q_mu, q_nu, e_mu, e_nu, n_mu, n_nu, mu, nu, params, eps_bar):
    """Finite-size key per signal pulse for given (already shifted) observables."""
    q1, e1 = decoy_single_photon(q_mu, q_nu, e_mu, e_nu, mu, nu, params.decoy_vacuum_bound)
    if q1 <= 0:
        return -math.inf, q1, e1
    delta = delta_term(n_mu, eps_bar, 0.0, params)
    frac = n_mu / (n_mu + n_nu)
    r = params.q * frac * (
        -q_mu * params.f_ec * _h_capped(e_mu) + q1 * (1 - _h(e1)) - q_mu * delta / n_mu)
    return r, q1, e1


def decoy_bb84_key_length(
    n_mu: float,
    n_nu: float,
    e_mu: float,
    e_nu: float,
    pulses_sent: float,
    params: SecurityParams = SecurityParams(),
    *,
    mu: float = 0.5,
    nu: float = 0.1,
    signal_fraction: float = 0.9,
    sigmas: float = DECOY_SIGMAS,
) -> KeyResult:
    """Finite-size decoy-state BB84 key for one pass.

    ``n_mu``/``n_nu`` are Bob's detections on signal/decoy pulses, of which
    ``signal_fraction * pulses_sent`` and the rest were sent.  Gains and
    error rates are each shifted by ``sigmas`` binomial standard deviations
    and the smallest key over all shift directions is kept.  The rate is
    per signal pulse and is multiplied by the number of signal pulses.
    """
    if n_mu < 0 or n_nu < 0:
        raise ValueError("counts must be >= 0")
    if not mu > nu > 0:
        raise ValueError("need mu > nu > 0")
    if not 0 < signal_fraction < 1:
        raise ValueError("signal_fraction must be in (0, 1)")
    pulses_mu = signal_fraction * pulses_sent
    pulses_nu = pulses_sent - pulses_mu
    raw_bits = int(math.floor(params.q * (n_mu + n_nu)))
    if n_mu < 1 or n_nu < 1:
        return KeyResult(0, raw_bits, e_mu, "no key: no detections")
    q_mu, q_nu = n_mu / pulses_mu, n_nu / pulses_nu
    s_qmu = sigmas * math.sqrt(q_mu * (1 - q_mu) / pulses_mu)
    s_qnu = sigmas * math.sqrt(q_nu * (1 - q_nu) / pulses_nu)
    s_emu = sigmas * math.sqrt(e_mu * (1 - e_mu) / n_mu)
    s_enu = sigmas * math.sqrt(e_nu * (1 - e_nu) / n_nu)

    def worst(eps_bar):
        vals = []
        for a, b, c, d in itertools.product((-1, 1), repeat=4):
            vals.append(decoy_rate(
                max(q_mu + a * s_qmu, 0.0), max(q_nu + b * s_qnu, 0.0),
                min(max(e_mu + c * s_emu, 0.0), 1.0), min(max(e_nu + d * s_enu, 0.0), 1.0),
                n_mu, n_nu, mu, nu, params, eps_bar))
        return min(vals, key=lambda t: t[0])

    top = params.eps_total - params.eps_ec
    u, _ = golden_max(lambda u: worst(top / (1 + math.exp(-u)))[0], -40.0, 40.0)
    eps_bar = top / (1 + math.exp(-u))
    rate, q1, e1 = worst(eps_bar)
    details = {"q_mu": q_mu, "q_nu": q_nu, "q1": q1, "e1": e1, "eps_bar": eps_bar,
               "delta": delta_term(n_mu, eps_bar, 0.0, params), "rate": rate,
               "signal_fraction": signal_fraction, "sigmas": sigmas}
    if q1 <= 0:
        return KeyResult(0, raw_bits, e_mu, "no key: decoy bound vacuous (Q1 <= 0)", details)
    bits = rate * pulses_mu
    if not bits > 0:
        return KeyResult(0, raw_bits, e_mu, "no key: error correction and privacy "
                         "amplification exceed single-photon information", details)
    return KeyResult(min(int(math.floor(bits)), raw_bits), raw_bits, e_mu, "ok", details)


def decoy_asymptotic_rate(q_mu, q_nu, e_mu, e_nu, mu=0.5, nu=0.1, params=SecurityParams()):
    """Per-pulse key rate without finite-size corrections."""
    q1, e1 = decoy_single_photon(q_mu, q_nu, e_mu, e_nu, mu, nu, params.decoy_vacuum_bound)
    if q1 <= 0:
        return 0.0
    return params.q * (-q_mu * params.f_ec * _h(e_mu) + q1 * (1 - _h(e1)))


# ---------------------------------------------------------------- Bell / teleportation

CHSH_ANGLES = (0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)


@dataclass(frozen=True)
class BellResult:
    S: float
    sigma: float
    passed: bool
    correlators: tuple


def correlator(counts):
    """E and its binomial standard error from (N++, N+-, N-+, N--)."""
    npp, npm, nmp, nmm = (float(c) for c in counts)
    n = npp + npm + nmp + nmm
    if n <= 0:
        raise ValueError("zero events at a CHSH setting")
    e = (npp - npm - nmp + nmm) / n
    return e, math.sqrt(max(1 - e * e, 0.0) / n)


def chsh_verdict(counts: dict) -> BellResult:
    """CHSH test from counts at settings (a,b), (a,b'), (a',b), (a',b').

    ``counts`` maps ``("a","b")``, ``("a","b'")``, ``("a'","b")``,
    ``("a'","b'")`` to four-outcome count tuples.  Passes when
    |S| - 2 > 3 sigma.
    """
    keys = [("a", "b"), ("a", "b'"), ("a'", "b"), ("a'", "b'")]
    es, ss = zip(*(correlator(counts[k]) for k in keys))
    S = es[0] - es[1] + es[2] + es[3]
    sigma = math.sqrt(sum(s * s for s in ss))
    return BellResult(abs(S), sigma, abs(S) - 2 > 3 * sigma, tuple(es))


def teleportation_verdict(visibility: float, sigma_v: float) -> bool:
    if not -1.0 <= visibility <= 1.0:
        raise ValueError("visibility must be in [-1, 1]")
    return visibility - 2 / 3 > 3 * sigma_v


def visibility_sigma(visibility: float, n_events: float) -> float:
    if n_events <= 0:
        return math.inf
    return math.sqrt(max(1 - visibility**2, 0.0) / n_events)
