import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar
from scipy.stats import poisson

from qsatlink import fockspace as fs
from qsatlink import protocols as pr

def _h2(x):
    return 0.0 if x <= 0 or x >= 1 else -x * math.log2(x) - (1 - x) * math.log2(1 - x)


# -- straight-line oracle for the entanglement-based finite-size key

def bbm92_grid_oracle(n, e, eps=1e-9, eps_ec=1e-10, f=1.22, q=0.5, points=100):
    top = eps - eps_ec
    best = -math.inf
    for u in np.linspace(-30, 30, points):
        eb = top / (1 + math.exp(-u))
        for v in np.linspace(-30, 30, points):
            ebp = eb / (1 + math.exp(-v))
            xi = math.sqrt((2 * math.log(1 / ebp) + 4 * math.log(n + 1)) / n)
            delta = 2 * math.log2(1 / (2 * (eps - eb - eps_ec))) \
                + 7 * math.sqrt(n * math.log2(2 / (eb - ebp)))
            pe = 1.0 if e + xi >= 0.5 else _h2(e + xi)
            best = max(best, n * q * (1 - pe - f * _h2(e) - delta / n))
    return max(best, 0.0)


def test_bbm92_matches_grid_oracle():
    res = pr.bbm92_key_length(10**6, 0.05)
    oracle = bbm92_grid_oracle(1e6, 0.05)
    assert abs(res.details["rate"] * 1e6 - oracle) < 1.0
    assert abs(res.secure_bits - oracle) < 1.0 + 1e-9
    assert res.details["xi_formula"] == pr.XI_FORMULA


@pytest.mark.parametrize("n", [10**4, 10**6, 10**9])
@pytest.mark.parametrize("qber", [0.11, 0.15, 0.3, 0.5])
def test_bbm92_zero_above_eleven_percent(n, qber):
    res = pr.bbm92_key_length(n, qber)
    assert res.secure_bits == 0
    assert res.verdict.startswith("no key")


def test_bbm92_zero_qber_approaches_sifting_factor():
    r = pr.bbm92_key_length(10**12, 0.0).secure_bits / 1e12
    assert r == pytest.approx(0.5, abs=0.01)
    assert r < 0.5


def test_bbm92_finite_size_converges_monotonically():
    e = 0.03
    target = pr.bbm92_asymptotic_rate(e)
    gaps = [target - pr.bbm92_key_length(n, e).secure_bits / n for n in (10**4, 10**6, 10**8)]
    assert all(g > 0 for g in gaps)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.02


def test_bbm92_rejects_bad_input():
    with pytest.raises(ValueError):
        pr.bbm92_key_length(0, 0.01)
    with pytest.raises(ValueError):
        pr.bbm92_key_length(100, 0.6)
    with pytest.raises(ValueError):
        pr.SecurityParams(eps_total=1e-10, eps_ec=1e-10)
    with pytest.raises(ValueError):
        pr.SecurityParams(f_ec=0.9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.1), st.floats(0.0, 0.05), st.integers(4, 9))
def test_bbm92_monotone(e, de, log_n):
    n = 10**log_n
    a = pr.bbm92_key_length(n, e).secure_bits
    assert pr.bbm92_key_length(n, min(e + de, 0.5)).secure_bits <= a
    assert pr.bbm92_key_length(10 * n, e).secure_bits >= a


# -- one-page oracle for the decoy formulas

def decoy_oracle(n_mu, n_nu, e_mu, e_nu, pulses, mu=0.5, nu=0.1, frac=0.9,
                 eps=1e-9, eps_ec=1e-10, f=1.22, q=0.5, vacuum=True):
    p_mu, p_nu = frac * pulses, (1 - frac) * pulses
    Qm, Qn = n_mu / p_mu, n_nu / p_nu
    dQm = 10 * math.sqrt(Qm * (1 - Qm) / p_mu)
    dQn = 10 * math.sqrt(Qn * (1 - Qn) / p_nu)
    dEm = 10 * math.sqrt(e_mu * (1 - e_mu) / n_mu)
    dEn = 10 * math.sqrt(e_nu * (1 - e_nu) / n_nu)

    def rate(qm, qn, em, en, eb):
        q1 = mu * mu * math.exp(-mu) / (mu * nu - nu * nu) \
            * (qn * math.exp(nu) - qm * math.exp(mu) * nu * nu / (mu * mu)
               - vacuum * (1 - nu * nu / (mu * mu))
               * 2 * min(em * qm * math.exp(mu), en * qn * math.exp(nu)))
        if q1 <= 0:
            return -math.inf, q1, None
        e1 = min(en * qn / q1, 0.5)
        d = 2 * math.log2(1 / (2 * (eps - eb - eps_ec))) + 7 * math.sqrt(n_mu * math.log2(2 / eb))
        hm = 1.0 if em >= 0.5 else _h2(em)
        r = q * n_mu / (n_mu + n_nu) * (-qm * f * hm + q1 * (1 - _h2(e1)) - qm * d / n_mu)
        return r, q1, e1

    def worst(eb):
        out = [rate(Qm + a * dQm, Qn + b * dQn, e_mu + c * dEm, e_nu + d * dEn, eb)
               for a, b, c, d in itertools.product((-1, 1), repeat=4)]
        return min(out, key=lambda t: t[0])

    top = eps - eps_ec
    opt = minimize_scalar(lambda t: -worst(top * t)[0], bounds=(1e-6, 1 - 1e-9),
                          method="bounded", options={"xatol": 1e-12})
    r, q1, e1 = worst(top * opt.x)
    return q1, e1, r * p_mu


def synthetic_decoy(rng):
    eta = 10 ** rng.uniform(-3.5, -2.5)
    y0 = rng.uniform(1e-8, 1e-6)
    ed = rng.uniform(0.005, 0.03)
    pulses = 10 ** rng.uniform(10, 11)
    out = []
    for m in (0.5, 0.1):
        g = 1 - math.exp(-eta * m)
        Q = y0 + g
        out.append((Q, (y0 / 2 + ed * g) / Q))
    (Qm, Em), (Qn, En) = out
    return Qm * 0.9 * pulses, Qn * 0.1 * pulses, Em, En, pulses


@pytest.mark.parametrize("vacuum", [True, False])
def test_decoy_matches_formula_oracle(vacuum):
    rng = np.random.default_rng(7)
    params = pr.SecurityParams(decoy_vacuum_bound=vacuum)
    for _ in range(20):
        n_mu, n_nu, e_mu, e_nu, pulses = synthetic_decoy(rng)
        res = pr.decoy_bb84_key_length(n_mu, n_nu, e_mu, e_nu, pulses, params)
        q1, e1, bits = decoy_oracle(n_mu, n_nu, e_mu, e_nu, pulses, vacuum=vacuum)
        assert res.details["q1"] == pytest.approx(q1, rel=1e-9)
        assert res.details["e1"] == pytest.approx(e1, rel=1e-9)
        assert res.details["rate"] * 0.9 * pulses == pytest.approx(bits, rel=1e-9)
        assert res.secure_bits == max(int(math.floor(bits)), 0)


@pytest.mark.parametrize("e_nu", [0.0, 0.11, 0.3])
@pytest.mark.parametrize("e_mu", [0.11, 0.2])
def test_decoy_zero_above_eleven_percent(e_mu, e_nu):
    pulses = 1e15
    res = pr.decoy_bb84_key_length(0.9 * pulses * 0.005, 0.1 * pulses * 0.001, e_mu, e_nu, pulses)
    assert res.secure_bits == 0


def test_decoy_noiseless_asymptote():
    eta, mu, nu = 1e-2, 0.5, 0.1
    Qm, Qn = 1 - math.exp(-eta * mu), 1 - math.exp(-eta * nu)
    q1, e1 = pr.decoy_single_photon(Qm, Qn, 0.0, 0.0, mu, nu)
    assert e1 == 0.0
    assert pr.decoy_asymptotic_rate(Qm, Qn, 0.0, 0.0) == pytest.approx(0.5 * q1)
    pulses = 1e16
    res = pr.decoy_bb84_key_length(0.9 * pulses * Qm, 0.1 * pulses * Qn, 0.0, 0.0, pulses)
    frac = Qm * 0.9 / (Qm * 0.9 + Qn * 0.1)
    assert res.secure_bits / (0.9 * pulses) == pytest.approx(0.5 * frac * q1, rel=1e-3)


def test_decoy_vacuous_bound():
    # decoy gain too small relative to the signal: no single-photon bound
    res = pr.decoy_bb84_key_length(1e6, 1e3, 0.02, 0.02, 1e9)
    assert res.secure_bits == 0
    assert "vacuous" in res.verdict


def test_decoy_no_detections():
    assert pr.decoy_bb84_key_length(0, 0, 0.0, 0.0, 1e9).secure_bits == 0
    with pytest.raises(ValueError):
        pr.decoy_bb84_key_length(10, 10, 0.0, 0.0, 1e9, mu=0.1, nu=0.5)


def _mixture(eta, y0, ed, mu=0.5, nu=0.1):
    # Poisson-mixture truth with Y_n = Y0 + 1 - (1 - eta)^n; vacuum events
    # err half the time, photon events with probability ed
    n = np.arange(60)
    yields = y0 + 1 - (1 - eta) ** n
    Qm = float(np.sum(poisson.pmf(n, mu) * yields))
    Qn = float(np.sum(poisson.pmf(n, nu) * yields))
    Em = (y0 / 2 + ed * (Qm - y0)) / Qm
    En = (y0 / 2 + ed * (Qn - y0)) / Qn
    return Qm, Qn, Em, En, mu * math.exp(-mu) * yields[1]


@settings(max_examples=40, deadline=None)
@given(st.floats(-4.0, -1.0), st.floats(0.0, 1.0), st.floats(0.0, 0.1))
def test_decoy_single_photon_gain_is_conservative(log_eta, y0_frac, ed):
    # the plain estimator drops Y0, so keep it well below eta
    eta = 10**log_eta
    Qm, Qn, Em, En, truth = _mixture(eta, y0_frac * 1e-3 * eta, ed)
    assert pr.decoy_single_photon(Qm, Qn, Em, En, 0.5, 0.1)[0] <= truth * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-4.0, -1.0), st.floats(-6.0, 1.0), st.floats(0.0, 0.1))
def test_vacuum_bound_is_conservative_at_any_noise(log_eta, log_y0_frac, ed):
    eta = 10**log_eta
    Qm, Qn, Em, En, truth = _mixture(eta, 10**log_y0_frac * eta, ed)
    q1, _ = pr.decoy_single_photon(Qm, Qn, Em, En, 0.5, 0.1, vacuum_bound=True)
    assert q1 <= truth * (1 + 1e-12)


def test_plain_estimator_overshoots_with_large_vacuum_yield():
    Qm, Qn, Em, En, truth = _mixture(1e-4, 1e-4, 0.01)
    assert pr.decoy_single_photon(Qm, Qn, Em, En, 0.5, 0.1)[0] > truth
    assert pr.decoy_single_photon(Qm, Qn, Em, En, 0.5, 0.1, vacuum_bound=True)[0] <= truth


@settings(max_examples=20, deadline=None)
@given(st.floats(0.005, 0.08), st.floats(0.0, 0.03), st.floats(11.0, 13.0))
def test_decoy_monotone(e, de, log_pulses):
    pulses = 10**log_pulses
    Qm, Qn = 5e-4, 1e-4

    def key(err, p):
        return pr.decoy_bb84_key_length(0.9 * p * Qm, 0.1 * p * Qn, err, err, p).secure_bits

    k = key(e, pulses)
    assert key(e + de, pulses) <= k
    assert key(e, 10 * pulses) >= k


# -- Bell and teleportation

def _chsh_counts(state, n_events=1e12, **kw):
    a, ap, b, bp = pr.CHSH_ANGLES
    settings_ = {("a", "b"): (a, b), ("a", "b'"): (a, bp), ("a'", "b"): (ap, b), ("a'", "b'"): (ap, bp)}
    out = {}
    for k, (x, y) in settings_.items():
        p = np.ravel(fs.polarization_correlation(state, x, y, **kw))
        out[k] = tuple(n_events * p / p.sum())
    return out


def test_chsh_ideal_singlet():
    res = pr.chsh_verdict(_chsh_counts(fs.make_entangled_pair(1e-4, 0.0)))
    assert res.S == pytest.approx(2 * math.sqrt(2), abs=1e-6)
    assert res.passed


def werner_counts(v, n=1e6):
    # analytic singlet correlators degraded to visibility v
    a, ap, b, bp = pr.CHSH_ANGLES
    out = {}
    for k, (x, y) in {("a", "b"): (a, b), ("a", "b'"): (a, bp),
                      ("a'", "b"): (ap, b), ("a'", "b'"): (ap, bp)}.items():
        e = -v * math.cos(2 * (x - y))
        out[k] = (n * (1 + e) / 4, n * (1 - e) / 4, n * (1 - e) / 4, n * (1 + e) / 4)
    return out


def test_chsh_linear_in_visibility_and_threshold():
    vs = np.linspace(0.5, 1.0, 6)
    S = [pr.chsh_verdict(werner_counts(v)).S for v in vs]
    slope = np.polyfit(vs, S, 1)[0]
    assert slope == pytest.approx(2 * math.sqrt(2), rel=0.01)
    lo, hi = 0.5, 1.0
    for _ in range(40):
        mid = (lo + hi) / 2
        if pr.chsh_verdict(werner_counts(mid, 1e14)).passed:
            hi = mid
        else:
            lo = mid
    assert hi == pytest.approx(1 / math.sqrt(2), abs=0.005)


def test_chsh_zero_events_rejected():
    c = werner_counts(1.0)
    c[("a", "b")] = (0, 0, 0, 0)
    with pytest.raises(ValueError):
        pr.chsh_verdict(c)


@pytest.mark.filterwarnings("ignore::qsatlink.fockspace.TruncationWarning")
@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 0.5), st.floats(0.0, 0.3), st.floats(1e-4, 1.0), st.floats(0.0, 1e-3))
def test_tsirelson_bound(eps, mis, eta, noise):
    s = fs.make_entangled_pair(eps, mis, cutoff=4)
    res = pr.chsh_verdict(_chsh_counts(s, eta_alice=eta, eta_bob=eta,
                                       noise_alice=noise, noise_bob=noise))
    assert res.S <= 2 * math.sqrt(2) + 1e-9


def test_teleportation_verdict_rule():
    assert pr.teleportation_verdict(1.0, 0.0)
    assert not pr.teleportation_verdict(2 / 3, 0.0)
    assert not pr.teleportation_verdict(0.70, 0.02)
    assert pr.teleportation_verdict(0.70, 0.01)
    with pytest.raises(ValueError):
        pr.teleportation_verdict(1.2, 0.0)


def test_key_result_invariants():
    with pytest.raises(ValueError):
        pr.KeyResult(5, 4, 0.0, "ok")
    with pytest.raises(ValueError):
        pr.KeyResult(-1, 4, 0.0, "ok")
