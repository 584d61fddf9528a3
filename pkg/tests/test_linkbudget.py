import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import j0

from qsatlink import linkbudget as lb
from qsatlink.atmosphere import default_table

ZENITH_600 = lb.LinkGeometry(600e3, math.pi / 2)
# composite Simpson, 10^6 intervals on a log-stretched altitude axis (see scripts/ notes)
R0_785_50DEG = 0.0345994821037


@pytest.fixture(scope="module")
def downlink_profile():
    return lb.diffract(lb.TelescopeSpec(0.1, 0.0, 0.05), ZENITH_600, 670)


def fraunhofer_truncated_gaussian(rho, tx, lam, d):
    """Hankel-transform far field of a clipped Gaussian (independent oracle)."""
    w0 = lb.fwhm_to_waist(tx.beam_fwhm)
    r = np.linspace(tx.obstruction_ratio * tx.radius, tx.radius, 4001)
    amp = np.sqrt(2 / (np.pi * w0**2)) * np.exp(-(r**2) / w0**2)
    k = 2 * np.pi / lam
    return np.array([
        (2 * np.pi / (lam * d)) ** 2 * integrate.trapezoid(amp * j0(k * r * p / d) * r, r) ** 2
        for p in rho
    ])


def test_far_field_matches_fraunhofer_oracle(downlink_profile):
    tx = lb.TelescopeSpec(0.1, 0.0, 0.05)
    rho = downlink_profile.radii[:800]
    oracle = fraunhofer_truncated_gaussian(rho, tx, 670e-9, 600e3)
    ref = lb.RadialIntensityProfile(rho, oracle, 670)
    assert downlink_profile.fwhm() == pytest.approx(ref.fwhm(), rel=0.02)
    assert np.max(np.abs(downlink_profile.intensity[:800] - oracle)) < 0.02 * oracle[0]


def test_unclipped_beam_matches_gaussian_divergence():
    tx = lb.TelescopeSpec(0.2, 0.0, 0.05)
    p = lb.diffract(tx, ZENITH_600, 670, n_radii=1000, r_max=10.0)
    w = 670e-9 * 600e3 / (math.pi * lb.fwhm_to_waist(0.05))
    assert p.fwhm() == pytest.approx(w * math.sqrt(2 * math.log(2)), rel=0.02)


def test_plane_wave_gives_airy_first_minimum():
    p = lb.diffract(lb.TelescopeSpec(0.1, 0.0, 10.0), ZENITH_600, 670)
    I = p.intensity
    m = int(np.argmax((I[1:-1] < I[:-2]) & (I[1:-1] < I[2:]))) + 1
    assert p.radii[m] == pytest.approx(1.22 * 670e-9 * 600e3 / 0.1, rel=0.02)


def test_width_scales_with_wavelength():
    tx = lb.TelescopeSpec(0.1, 0.0, 0.05)
    a = lb.diffract(tx, ZENITH_600, 500, n_radii=2000, r_max=20.0)
    b = lb.diffract(tx, ZENITH_600, 1000, n_radii=2000, r_max=20.0)
    assert b.fwhm() / a.fwhm() == pytest.approx(2.0, rel=0.02)


def test_grid_refined_against_aliasing():
    tx = lb.TelescopeSpec(0.1, 0.0, 0.05)
    g = lb.LinkGeometry(2e3, math.pi / 2)
    prof = lb.diffract(tx, g, 670, n_radii=500, r_max=1.0)
    assert prof.power() == pytest.approx(lb.transmitted_fraction(tx), rel=0.02)


def test_near_field_rejected():
    with pytest.raises(ValueError):
        lb.diffract(lb.TelescopeSpec(0.1, 0.0, 0.05), lb.LinkGeometry(500.0, 1.0), 670)


def test_power_is_conserved(downlink_profile):
    tx = lb.TelescopeSpec(0.1, 0.0, 0.05)
    assert downlink_profile.power() >= 0.98 * lb.transmitted_fraction(tx)


def _gaussian_profile(w, r_max=30.0, n=3000):
    r = np.linspace(0, r_max, n)
    return lb.RadialIntensityProfile(r, 2 / (np.pi * w**2) * np.exp(-2 * r**2 / w**2), 670)


def _second_moment(p):
    return integrate.trapezoid(2 * np.pi * p.radii**3 * p.intensity, p.radii) / p.power()


def test_convolution_zero_sigma_is_identity():
    p = _gaussian_profile(2.0)
    assert lb.convolve_gaussian(p, 0.0) is p


def test_convolution_moment_addition():
    p = _gaussian_profile(2.0)
    q = lb.convolve_gaussian(p, 1.5)
    assert _second_moment(q) == pytest.approx(_second_moment(p) + 2 * 1.5**2, rel=0.01)
    assert q.power() == pytest.approx(p.power(), rel=0.005)
    # Gaussian in, Gaussian out with waist sqrt(w^2 + 4 sigma^2)
    w = math.sqrt(4 + 4 * 1.5**2)
    assert q.intensity[0] == pytest.approx(2 / (np.pi * w**2), rel=0.005)


def test_convolution_of_narrow_profile_is_kernel():
    p = _gaussian_profile(0.02, r_max=10.0, n=2001)
    q = lb.convolve_gaussian(p, 1.0)
    kernel = np.exp(-q.radii**2 / 2) / (2 * np.pi)
    rms = math.sqrt(np.mean((q.intensity - kernel) ** 2))
    assert rms < 0.02 * kernel[0]


def test_r0_against_simpson_oracle():
    g = lb.LinkGeometry(600e3 / math.sin(math.radians(50)), math.radians(50), 600e3, "uplink")
    assert lb.coherence_length(g, 785) == pytest.approx(R0_785_50DEG, rel=1e-6)


def test_r0_wavelength_scaling_and_zenith_maximum():
    g = lb.LinkGeometry(600e3, math.pi / 2, 600e3, "uplink")
    r1 = lb.coherence_length(g, 785)
    assert lb.coherence_length(g, 1570) / r1 == pytest.approx(2 ** 1.2, rel=1e-3)
    for el in (10, 30, 60, 89):
        g2 = lb.LinkGeometry(1e6, math.radians(el), 600e3, "uplink")
        assert lb.coherence_length(g2, 785) < r1


def test_turbulence_only_for_uplink():
    with pytest.raises(ValueError):
        lb.turbulence_sigma(ZENITH_600, 785)


def test_transparent_large_receiver_gives_analyzer_loss():
    tx = lb.TelescopeSpec(0.1, 0.0, 0.05)
    g = lb.LinkGeometry(2e3, math.pi / 2)
    prof = lb.diffract(tx, g, 670, n_radii=500, r_max=0.4)
    loss = lb.total_loss(tx, lb.TelescopeSpec(0.8), g, 670, 0.0, None, 1.0,
                         source_kind="wcp", profile=prof)
    assert loss == pytest.approx(3.0, abs=0.1)


def test_downlink_pointing_penalty(downlink_profile):
    tx, rx = lb.TelescopeSpec(0.1, 0.0, 0.05), lb.TelescopeSpec(0.5)
    atm = default_table()
    base = lb.total_loss(tx, rx, ZENITH_600, 670, 0.0, atm, 0.68, profile=downlink_profile)
    jitter = lb.total_loss(tx, rx, ZENITH_600, 670, 2e-6, atm, 0.68, profile=downlink_profile)
    assert 0 < jitter - base <= 4.0


@pytest.mark.parametrize("diameter", [0.2, 0.5])
def test_uplink_pointing_penalty_small(diameter):
    tx, rx = lb.TelescopeSpec(diameter, 0.0, diameter / 2), lb.TelescopeSpec(0.3)
    g = lb.LinkGeometry(600e3 / math.sin(math.radians(50)), math.radians(50), 600e3, "uplink")
    prof = lb.diffract(tx, g, 785)
    base = lb.total_loss(tx, rx, g, 785, 0.0, None, 1.0, profile=prof)
    jitter = lb.total_loss(tx, rx, g, 785, 2e-6, None, 1.0, profile=prof)
    assert 0 <= jitter - base < 1.0


def test_turbulence_dominates_large_uplink_transmitters():
    rx = lb.TelescopeSpec(0.3)
    g = lb.LinkGeometry(600e3 / math.sin(math.radians(50)), math.radians(50), 600e3, "uplink")
    small = lb.total_loss(lb.TelescopeSpec(0.25, 0, 0.125), rx, g, 785, 2e-6, None, 1.0)
    large = lb.total_loss(lb.TelescopeSpec(0.5, 0, 0.25), rx, g, 785, 2e-6, None, 1.0)
    assert abs(small - large) < 1.0


def test_obstruction_penalty():
    tx = lb.TelescopeSpec(0.1, 0.25, 0.05)
    assert lb.obstruction_penalty(lb.TelescopeSpec(0.1, 0.0, 0.05), ZENITH_600, 670) == 0.0
    ent = lb.obstruction_penalty(tx, ZENITH_600, 670, "entangled")
    wcp = lb.obstruction_penalty(tx, ZENITH_600, 670, "wcp")
    assert 0 < ent < 1.0
    assert wcp < 1.0
    assert ent >= wcp


def test_entangled_waist_optimum_and_wcp_plateau():
    rx = lb.TelescopeSpec(0.5)
    ratios = np.arange(0.3, 1.01, 0.05)
    kw = dict(n_radii=50, r_max=1.0)

    def loss(r, kind):
        tx = lb.TelescopeSpec(0.1, 0.0, 0.1 * r)
        prof = lb.diffract(tx, ZENITH_600, 670, **kw)
        return lb.total_loss(tx, rx, ZENITH_600, 670, 0.0, None, 1.0,
                             source_kind=kind, profile=prof)

    ent = [loss(r, "entangled") for r in ratios]
    best = ratios[int(np.argmin(ent))]
    assert abs(best - 0.5) <= 0.05 + 1e-9
    wcp = [loss(r, "wcp") for r in np.arange(1.0, 3.01, 0.5)]
    assert max(wcp) - min(wcp) < 0.5


def test_far_field_fast_path_matches_full_chain():
    cases = [
        ("downlink", lb.TelescopeSpec(0.1, 0, 0.05), lb.TelescopeSpec(0.5), 670),
        ("uplink", lb.TelescopeSpec(0.25, 0, 0.125), lb.TelescopeSpec(0.3), 785),
    ]
    for direction, tx, rx, lam in cases:
        fast = lb.FarFieldLoss(tx, rx, lam, direction)
        for el in (20, 60):
            e = math.radians(el)
            d = 600e3 / math.sin(e)
            g = lb.LinkGeometry(d, e, 600e3, direction)
            full = lb.link_budget(tx, rx, g, lam, 2e-6, None, 1.0).geometric_db
            assert fast.geometric_db(d, e, 2e-6) == pytest.approx(full, abs=0.1)


@settings(max_examples=10, deadline=None)
@given(s1=st.floats(0.0, 3e-6), s2=st.floats(0.0, 3e-6))
def test_loss_monotone_in_pointing(s1, s2):
    fast = _fast_downlink()
    lo, hi = sorted((s1, s2))
    assert fast.geometric_db(8e5, 1.0, hi) >= fast.geometric_db(8e5, 1.0, lo) - 1e-9


@settings(max_examples=10, deadline=None)
@given(d1=st.floats(5e5, 2.5e6), d2=st.floats(5e5, 2.5e6))
def test_loss_monotone_in_distance(d1, d2):
    fast = _fast_downlink()
    lo, hi = sorted((d1, d2))
    assert fast.geometric_db(hi, 1.0, 2e-6) >= fast.geometric_db(lo, 1.0, 2e-6) - 1e-9


_FAST = {}


def _fast_downlink():
    if "d" not in _FAST:
        _FAST["d"] = lb.FarFieldLoss(lb.TelescopeSpec(0.1, 0, 0.05), lb.TelescopeSpec(0.5),
                                     670, "downlink")
    return _FAST["d"]
